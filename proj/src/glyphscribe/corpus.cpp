#include "glyphscribe/corpus.hpp"

#include "glyphscribe/csv.hpp"
#include "glyphscribe/error.hpp"
#include "glyphscribe/gardiner.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace glyphscribe::corpus {

namespace fs = std::filesystem;

namespace {

std::unordered_map<std::string, std::string> read_manifest(const fs::path &path) {
  std::unordered_map<std::string, std::string> pages;
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(ErrorCode::Io, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const auto rows = csv::parse(buf.str());
  if (rows.empty() || rows.front().size() < 2 || rows.front()[0] != "path" ||
      rows.front()[1] != "page_id")
    fail(ErrorCode::Format, path.string() + ": expected header 'path,page_id'");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() < 2)
      fail(ErrorCode::Format, path.string() + ": short row " + std::to_string(r + 1));
    pages[rows[r][0]] = rows[r][1];
  }
  return pages;
}

} // namespace

Dataset load_dataset(const fs::path &root, int canonical_size) {
  require(canonical_size > 0, "canonical size must be positive");
  if (!fs::is_directory(root))
    fail(ErrorCode::NotFound, "dataset root " + root.string() + " is not a directory");

  std::unordered_map<std::string, std::string> pages;
  if (fs::exists(root / "manifest.csv"))
    pages = read_manifest(root / "manifest.csv");

  std::vector<fs::path> class_dirs;
  for (const auto &entry : fs::directory_iterator(root))
    if (entry.is_directory() && entry.path().filename().string().front() != '.')
      class_dirs.push_back(entry.path());
  std::sort(class_dirs.begin(), class_dirs.end());

  for (const auto &dir : class_dirs) {
    const auto name = dir.filename().string();
    if (!is_valid_code(name))
      fail(ErrorCode::InvalidArgument,
           "class directory '" + name + "' is not a valid Gardiner code");
  }

  Dataset out;
  for (const auto &dir : class_dirs) {
    const auto code = dir.filename().string();
    std::vector<fs::path> files;
    for (const auto &entry : fs::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().filename().string().front() != '.')
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto &file : files) {
      const auto rel = fs::relative(file, root).generic_string();
      try {
        LabeledSample s;
        s.image = fit_canonical(load_image(file), canonical_size);
        s.sample_id = rel;
        s.code = code;
        if (auto it = pages.find(rel); it != pages.end())
          s.page_id = it->second;
        out.samples.push_back(std::move(s));
      } catch (const Error &e) {
        spdlog::warn("skipping {}: {}", rel, e.what());
        ++out.skipped;
        out.skipped_paths.push_back(rel);
      }
    }
  }
  if (out.skipped > 0)
    spdlog::warn("{} file(s) under {} could not be read", out.skipped, root.string());
  if (out.samples.empty())
    fail(ErrorCode::NotFound, "no samples found under " + root.string());
  return out;
}

DatasetSplit make_splits(const std::vector<LabeledSample> &samples,
                         const SplitRatios &ratios,
                         const std::set<std::string> &held_out_pages,
                         std::uint64_t seed) {
  const double total = ratios.train + ratios.validation + ratios.test;
  require(std::abs(total - 1.0) <= 1e-9, "split ratios must sum to 1");
  require(ratios.train >= 0 && ratios.validation >= 0 && ratios.test >= 0,
          "split ratios must be non-negative");

  DatasetSplit split;
  split.seed = seed;
  split.ratios = ratios;
  split.held_out_pages = held_out_pages;

  std::map<std::string, std::vector<std::string>> by_class;
  std::unordered_set<std::string> seen;
  for (const auto &s : samples) {
    if (!seen.insert(s.sample_id).second)
      fail(ErrorCode::InvalidArgument, "duplicate sample id " + s.sample_id);
    if (held_out_pages.count(s.page_id))
      split.test_pages.push_back(s.sample_id);
    else
      by_class[s.code].push_back(s.sample_id);
  }

  const int parts = (ratios.train > 0) + (ratios.validation > 0) + (ratios.test > 0);
  std::mt19937_64 rng(seed);
  for (auto &[code, ids] : by_class) {
    std::sort(ids.begin(), ids.end());
    if (static_cast<int>(ids.size()) < parts) {
      spdlog::warn("class {} has {} sample(s), fewer than {} split parts; all go to train",
                   code, ids.size(), parts);
      split.train.insert(split.train.end(), ids.begin(), ids.end());
      continue;
    }
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n = static_cast<double>(ids.size());
    // small epsilon keeps e.g. 100 * 0.15 from flooring to 14
    const auto n_val = static_cast<std::size_t>(std::floor(n * ratios.validation + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(n * ratios.test + 1e-9));
    auto it = ids.begin();
    split.validation.insert(split.validation.end(), it, it + n_val);
    it += n_val;
    split.test_random.insert(split.test_random.end(), it, it + n_test);
    it += n_test;
    split.train.insert(split.train.end(), it, ids.end());
  }
  for (auto *v : {&split.train, &split.validation, &split.test_random, &split.test_pages})
    std::sort(v->begin(), v->end());
  return split;
}

nlohmann::json split_to_json(const DatasetSplit &split) {
  return {
      {"version", 1},
      {"seed", split.seed},
      {"ratios", {split.ratios.train, split.ratios.validation, split.ratios.test}},
      {"held_out_pages", split.held_out_pages},
      {"train", split.train},
      {"validation", split.validation},
      {"test_random", split.test_random},
      {"test_pages", split.test_pages},
  };
}

DatasetSplit split_from_json(const nlohmann::json &doc) {
  try {
    DatasetSplit split;
    split.seed = doc.at("seed").get<std::uint64_t>();
    const auto r = doc.at("ratios").get<std::vector<double>>();
    require(r.size() == 3, "split ratios must have three entries", ErrorCode::Format);
    split.ratios = {r[0], r[1], r[2]};
    split.held_out_pages = doc.value("held_out_pages", std::set<std::string>{});
    split.train = doc.at("train").get<std::vector<std::string>>();
    split.validation = doc.at("validation").get<std::vector<std::string>>();
    split.test_random = doc.at("test_random").get<std::vector<std::string>>();
    split.test_pages = doc.at("test_pages").get<std::vector<std::string>>();
    return split;
  } catch (const nlohmann::json::exception &e) {
    fail(ErrorCode::Format, std::string("malformed split document: ") + e.what());
  }
}

void save_split(const DatasetSplit &split, const fs::path &path) {
  std::ofstream out(path);
  if (!out)
    fail(ErrorCode::Io, "cannot write " + path.string());
  out << split_to_json(split).dump(2) << '\n';
}

DatasetSplit load_split(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    fail(ErrorCode::Io, "cannot read " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception &e) {
    fail(ErrorCode::Format, path.string() + ": " + e.what());
  }
  return split_from_json(doc);
}

FrequencyTable class_frequencies(const std::vector<LabeledSample> &samples) {
  FrequencyTable counts;
  for (const auto &s : samples)
    ++counts[s.code];
  return counts;
}

ClassWeightTable class_weights(const FrequencyTable &frequencies) {
  std::size_t total = 0;
  for (const auto &[code, n] : frequencies) {
    if (n == 0)
      fail(ErrorCode::InvalidArgument, "class " + code + " has zero samples");
    total += n;
  }
  const double classes = static_cast<double>(frequencies.size());
  ClassWeightTable weights;
  for (const auto &[code, n] : frequencies)
    weights[code] = static_cast<double>(total) / (classes * static_cast<double>(n));
  return weights;
}

std::vector<LabeledSample> select(const std::vector<LabeledSample> &samples,
                                  const std::vector<std::string> &ids) {
  const std::unordered_set<std::string> wanted(ids.begin(), ids.end());
  std::vector<LabeledSample> out;
  for (const auto &s : samples)
    if (wanted.count(s.sample_id))
      out.push_back(s);
  return out;
}

} // namespace glyphscribe::corpus
