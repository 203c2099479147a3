#include "glyphscribe/segmentation.hpp"

#include "glyphscribe/error.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <string>

namespace glyphscribe::seg {

std::size_t BinaryImage::count() const {
  return static_cast<std::size_t>(std::count(pixels.begin(), pixels.end(), 1));
}

void SegmentationConfig::validate() const {
  require(window >= 3 && window % 2 == 1, "window must be odd and >= 3");
  require(min_area <= max_area, "min_area must not exceed max_area");
  require(min_dim >= 0 && min_dim <= max_dim, "need 0 <= min_dim <= max_dim");
  require(gap_factor > 0, "gap_factor must be positive");
  require(canonical_size > 0, "canonical_size must be positive");
}

void to_json(nlohmann::json &j, const SegmentationConfig &c) {
  j = {{"window", c.window},
       {"offset", c.offset},
       {"min_area", c.min_area},
       {"max_area", c.max_area},
       {"min_dim", c.min_dim},
       {"max_dim", c.max_dim},
       {"gap_factor", c.gap_factor},
       {"column_direction",
        c.column_direction == ColumnDirection::LeftToRight ? "ltr" : "rtl"},
       {"canonical_size", c.canonical_size}};
}

void from_json(const nlohmann::json &j, SegmentationConfig &c) {
  try {
    c.window = j.value("window", c.window);
    c.offset = j.value("offset", c.offset);
    c.min_area = j.value("min_area", c.min_area);
    c.max_area = j.value("max_area", c.max_area);
    c.min_dim = j.value("min_dim", c.min_dim);
    c.max_dim = j.value("max_dim", c.max_dim);
    c.gap_factor = j.value("gap_factor", c.gap_factor);
    c.canonical_size = j.value("canonical_size", c.canonical_size);
    const auto dir = j.value("column_direction", std::string("ltr"));
    if (dir == "ltr")
      c.column_direction = ColumnDirection::LeftToRight;
    else if (dir == "rtl")
      c.column_direction = ColumnDirection::RightToLeft;
    else
      fail(ErrorCode::InvalidArgument, "column_direction must be 'ltr' or 'rtl'");
  } catch (const nlohmann::json::exception &e) {
    fail(ErrorCode::InvalidArgument, std::string("bad segmentation config: ") + e.what());
  }
}

BinaryImage binarize_adaptive(const Image &gray, int window, double offset) {
  require(gray.channels == 1, "binarize_adaptive expects a single-channel image");
  require(window >= 3 && window % 2 == 1, "window must be odd and >= 3");
  const int w = gray.width, h = gray.height;
  BinaryImage out(w, h);
  // A single pixel is its own local mean whatever the window.
  if (w * h <= 1)
    return out;
  if (window > w && window > h)
    fail(ErrorCode::InvalidArgument,
         "window " + std::to_string(window) + " exceeds both image dimensions " +
             std::to_string(w) + "x" + std::to_string(h));

  const int r = window / 2;
  // Horizontal pass over an edge-replicated row, via prefix sums.
  std::vector<std::int64_t> hsum(static_cast<std::size_t>(w) * h);
  std::vector<std::int64_t> prefix(static_cast<std::size_t>(w + 2 * r + 1));
  for (int y = 0; y < h; ++y) {
    prefix[0] = 0;
    for (int i = 0; i < w + 2 * r; ++i)
      prefix[i + 1] = prefix[i] + gray.at(std::clamp(i - r, 0, w - 1), y);
    for (int x = 0; x < w; ++x)
      hsum[static_cast<std::size_t>(y) * w + x] = prefix[x + window] - prefix[x];
  }
  // Vertical pass.
  std::vector<std::int64_t> col(static_cast<std::size_t>(h + 2 * r + 1));
  const double n = static_cast<double>(window) * window;
  for (int x = 0; x < w; ++x) {
    col[0] = 0;
    for (int i = 0; i < h + 2 * r; ++i)
      col[i + 1] = col[i] + hsum[static_cast<std::size_t>(std::clamp(i - r, 0, h - 1)) * w + x];
    for (int y = 0; y < h; ++y) {
      const double mean = static_cast<double>(col[y + window] - col[y]) / n;
      out.set(x, y, gray.at(x, y) < mean - offset);
    }
  }
  return out;
}

std::vector<ComponentBox> extract_components(const BinaryImage &binary) {
  const int w = binary.width, h = binary.height;
  std::vector<std::uint8_t> visited(binary.pixels.size(), 0);
  std::vector<ComponentBox> out;
  std::vector<std::uint32_t> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::uint32_t start = static_cast<std::uint32_t>(y) * w + x;
      if (!binary.pixels[start] || visited[start])
        continue;
      ComponentBox box;
      box.x0 = x;
      box.y0 = y;
      box.x1 = x + 1;
      box.y1 = y + 1;
      visited[start] = 1;
      stack.assign(1, start);
      double sx = 0, sy = 0;
      while (!stack.empty()) {
        const std::uint32_t p = stack.back();
        stack.pop_back();
        const int px = static_cast<int>(p % w), py = static_cast<int>(p / w);
        box.pixels.push_back(p);
        sx += px;
        sy += py;
        box.x0 = std::min(box.x0, px);
        box.y0 = std::min(box.y0, py);
        box.x1 = std::max(box.x1, px + 1);
        box.y1 = std::max(box.y1, py + 1);
        for (int dy = -1; dy <= 1; ++dy) {
          const int ny = py + dy;
          if (ny < 0 || ny >= h)
            continue;
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = px + dx;
            if (nx < 0 || nx >= w)
              continue;
            const std::uint32_t q = static_cast<std::uint32_t>(ny) * w + nx;
            if (binary.pixels[q] && !visited[q]) {
              visited[q] = 1;
              stack.push_back(q);
            }
          }
        }
      }
      std::sort(box.pixels.begin(), box.pixels.end());
      box.area = box.pixels.size();
      box.cx = sx / static_cast<double>(box.area);
      box.cy = sy / static_cast<double>(box.area);
      out.push_back(std::move(box));
    }
  }
  std::sort(out.begin(), out.end(), [](const ComponentBox &a, const ComponentBox &b) {
    if (a.y0 != b.y0)
      return a.y0 < b.y0;
    if (a.x0 != b.x0)
      return a.x0 < b.x0;
    return a.pixels.front() < b.pixels.front();
  });
  return out;
}

std::vector<ComponentBox> filter_components(const std::vector<ComponentBox> &components,
                                            std::size_t min_area, std::size_t max_area,
                                            int min_dim, int max_dim) {
  require(min_area <= max_area, "min_area must not exceed max_area");
  require(min_dim >= 0 && min_dim <= max_dim, "need 0 <= min_dim <= max_dim");
  std::vector<ComponentBox> kept;
  for (const auto &c : components) {
    if (c.area < min_area || c.area > max_area)
      continue;
    if (c.width() < min_dim || c.width() > max_dim || c.height() < min_dim ||
        c.height() > max_dim)
      continue;
    kept.push_back(c);
  }
  return kept;
}

std::vector<Column> cluster_columns(const std::vector<ComponentBox> &components,
                                    double gap_factor, ColumnDirection direction) {
  std::vector<Column> columns;
  if (components.empty())
    return columns;
  require(gap_factor > 0, "gap_factor must be positive");

  std::vector<int> widths;
  for (const auto &c : components)
    widths.push_back(c.width());
  std::nth_element(widths.begin(), widths.begin() + widths.size() / 2, widths.end());
  double median = widths[widths.size() / 2];
  if (widths.size() % 2 == 0) {
    const int lower = *std::max_element(widths.begin(), widths.begin() + widths.size() / 2);
    median = (median + lower) / 2.0;
  }
  const double max_gap = gap_factor * median;

  std::vector<const ComponentBox *> by_x;
  for (const auto &c : components)
    by_x.push_back(&c);
  std::stable_sort(by_x.begin(), by_x.end(),
                   [](const ComponentBox *a, const ComponentBox *b) { return a->cx < b->cx; });

  columns.emplace_back();
  columns.back().push_back(*by_x.front());
  for (std::size_t i = 1; i < by_x.size(); ++i) {
    if (by_x[i]->cx - by_x[i - 1]->cx > max_gap)
      columns.emplace_back();
    columns.back().push_back(*by_x[i]);
  }
  for (auto &col : columns)
    std::stable_sort(col.begin(), col.end(), [](const ComponentBox &a, const ComponentBox &b) {
      if (a.cy != b.cy)
        return a.cy < b.cy;
      return a.cx < b.cx;
    });
  if (direction == ColumnDirection::RightToLeft)
    std::reverse(columns.begin(), columns.end());
  return columns;
}

std::vector<SegmentedGlyph> segment_region(const Image &image,
                                           const SegmentationConfig &config) {
  config.validate();
  require(!image.empty(), "cannot segment an empty image");
  const Image gray = to_gray(image);
  const BinaryImage binary = binarize_adaptive(gray, config.window, config.offset);
  const auto components = extract_components(binary);
  const auto kept = filter_components(components, config.min_area, config.max_area,
                                      config.min_dim, config.max_dim);
  const auto columns = cluster_columns(kept, config.gap_factor, config.column_direction);

  // Component label per pixel, so a crop can blank out its neighbours.
  std::vector<std::int32_t> label(gray.pixels.size(), -1);
  for (std::size_t i = 0; i < components.size(); ++i)
    for (auto p : components[i].pixels)
      label[p] = static_cast<std::int32_t>(i);

  constexpr int margin = 2;
  std::vector<SegmentedGlyph> out;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    for (std::size_t k = 0; k < columns[c].size(); ++k) {
      const ComponentBox &box = columns[c][k];
      const std::int32_t own = label[box.pixels.front()];
      const int x0 = std::max(0, box.x0 - margin), y0 = std::max(0, box.y0 - margin);
      const int x1 = std::min(gray.width, box.x1 + margin);
      const int y1 = std::min(gray.height, box.y1 + margin);
      Image patch = crop(gray, x0, y0, x1, y1);
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          const auto l = label[static_cast<std::size_t>(y) * gray.width + x];
          if (l >= 0 && l != own)
            patch.at(x - x0, y - y0) = kBackground;
        }
      SegmentedGlyph g;
      g.crop = resize(pad_to_square(patch, kBackground), config.canonical_size,
                      config.canonical_size);
      g.box = box;
      g.column_index = static_cast<int>(c);
      g.order_index = static_cast<int>(k);
      out.push_back(std::move(g));
    }
  }
  return out;
}

namespace {

// 3x5 bitmap digits, one row per nibble (bit 2 = leftmost column).
constexpr std::array<std::array<std::uint8_t, 5>, 10> kDigits = {{
    {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
    {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7},
}};

constexpr std::array<std::array<std::uint8_t, 3>, 6> kPalette = {{
    {220, 30, 30}, {30, 140, 30}, {30, 60, 220}, {200, 120, 0}, {150, 0, 170}, {0, 150, 160},
}};

void put(Image &img, int x, int y, const std::array<std::uint8_t, 3> &rgb) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height)
    return;
  for (int c = 0; c < 3; ++c)
    img.at(x, y, c) = rgb[c];
}

void draw_number(Image &img, int x, int y, int value, const std::array<std::uint8_t, 3> &rgb) {
  const std::string digits = std::to_string(value);
  for (std::size_t i = 0; i < digits.size(); ++i) {
    const auto &glyph = kDigits[digits[i] - '0'];
    for (int row = 0; row < 5; ++row)
      for (int col = 0; col < 3; ++col)
        if (glyph[row] & (4 >> col))
          put(img, x + static_cast<int>(i) * 4 + col, y + row, rgb);
  }
}

} // namespace

Image render_overlay(const Image &image, const std::vector<SegmentedGlyph> &glyphs) {
  Image out = to_rgb(image);
  for (const auto &g : glyphs) {
    const auto &rgb = kPalette[static_cast<std::size_t>(g.column_index) % kPalette.size()];
    const auto &b = g.box;
    for (int x = b.x0; x < b.x1; ++x) {
      put(out, x, b.y0, rgb);
      put(out, x, b.y1 - 1, rgb);
    }
    for (int y = b.y0; y < b.y1; ++y) {
      put(out, b.x0, y, rgb);
      put(out, b.x1 - 1, y, rgb);
    }
    draw_number(out, b.x0, std::max(0, b.y0 - 7), g.column_index, rgb);
  }
  return out;
}

} // namespace glyphscribe::seg
