#pragma once

#include "glyphscribe/image.hpp"

#include <json.hpp>

#include <cstdint>
#include <vector>

namespace glyphscribe::seg {

struct BinaryImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels; // 1 = ink

  BinaryImage() = default;
  BinaryImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, 0) {}
  bool at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) { pixels[static_cast<std::size_t>(y) * width + x] = v; }
  std::size_t count() const;

  friend bool operator==(const BinaryImage &, const BinaryImage &) = default;
};

struct ComponentBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0; // half-open
  std::size_t area = 0;
  double cx = 0, cy = 0;               // mean pixel coordinate
  std::vector<std::uint32_t> pixels;   // linear indices y * W + x, ascending

  int width() const noexcept { return x1 - x0; }
  int height() const noexcept { return y1 - y0; }
};

using Column = std::vector<ComponentBox>;

enum class ColumnDirection { LeftToRight, RightToLeft };

struct SegmentationConfig {
  int window = 35;
  double offset = 10.0;
  std::size_t min_area = 20;
  std::size_t max_area = 1'000'000;
  int min_dim = 4;
  int max_dim = 400;
  double gap_factor = 2.0;
  ColumnDirection column_direction = ColumnDirection::LeftToRight;
  int canonical_size = 100;

  void validate() const;
};

void to_json(nlohmann::json &j, const SegmentationConfig &c);
void from_json(const nlohmann::json &j, SegmentationConfig &c);

struct SegmentedGlyph {
  Image crop;
  ComponentBox box;
  int column_index = 0;
  int order_index = 0;
};

/// Ink iff intensity < mean(window x window, edge-replicated) - offset.
BinaryImage binarize_adaptive(const Image &gray, int window, double offset);

/// 8-connected components sorted by (y0, x0, first pixel).
std::vector<ComponentBox> extract_components(const BinaryImage &binary);

std::vector<ComponentBox> filter_components(const std::vector<ComponentBox> &components,
                                            std::size_t min_area, std::size_t max_area,
                                            int min_dim, int max_dim);

/// Splits on centroid-x gaps wider than gap_factor * median component width.
std::vector<Column> cluster_columns(const std::vector<ComponentBox> &components,
                                    double gap_factor,
                                    ColumnDirection direction = ColumnDirection::LeftToRight);

std::vector<SegmentedGlyph> segment_region(const Image &image,
                                           const SegmentationConfig &config);

/// RGB copy of `image` with one coloured rectangle per glyph and its column
/// index drawn above it.
Image render_overlay(const Image &image, const std::vector<SegmentedGlyph> &glyphs);

} // namespace glyphscribe::seg
