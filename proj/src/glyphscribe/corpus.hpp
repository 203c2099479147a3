#pragma once

#include "glyphscribe/image.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace glyphscribe::corpus {

constexpr int kDefaultCanonicalSize = 100;

struct LabeledSample {
  std::string sample_id; // path relative to the dataset root, '/'-separated
  std::string code;
  std::string page_id;
  Image image;
};

struct Dataset {
  std::vector<LabeledSample> samples;
  std::size_t skipped = 0;
  std::vector<std::string> skipped_paths;
};

/// Reads <root>/<CODE>/<file> rasters, ordered lexicographically by path.
/// An optional <root>/manifest.csv with columns `path,page_id` assigns pages;
/// samples without an entry get an empty page_id. Unreadable files are
/// skipped with a warning and counted.
Dataset load_dataset(const std::filesystem::path &root,
                     int canonical_size = kDefaultCanonicalSize);

struct SplitRatios {
  double train = 0.70;
  double validation = 0.15;
  double test = 0.15;
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test_random;
  std::vector<std::string> test_pages;
  std::uint64_t seed = 0;
  SplitRatios ratios;
  std::set<std::string> held_out_pages;
};

/// Held-out pages go to test_pages; everything else is split per class with
/// floor rounding for validation/test and the remainder in train.
DatasetSplit make_splits(const std::vector<LabeledSample> &samples,
                         const SplitRatios &ratios,
                         const std::set<std::string> &held_out_pages,
                         std::uint64_t seed);

nlohmann::json split_to_json(const DatasetSplit &split);
DatasetSplit split_from_json(const nlohmann::json &doc);
void save_split(const DatasetSplit &split, const std::filesystem::path &path);
DatasetSplit load_split(const std::filesystem::path &path);

using FrequencyTable = std::map<std::string, std::size_t>;
using ClassWeightTable = std::map<std::string, double>;

FrequencyTable class_frequencies(const std::vector<LabeledSample> &samples);

/// w_c = N / (C * n_c).
ClassWeightTable class_weights(const FrequencyTable &frequencies);

/// Samples whose ids appear in `ids`, in dataset order.
std::vector<LabeledSample> select(const std::vector<LabeledSample> &samples,
                                  const std::vector<std::string> &ids);

} // namespace glyphscribe::corpus
