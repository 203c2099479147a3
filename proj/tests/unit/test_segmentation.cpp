#include "support.hpp"

#include "glyphscribe/segmentation.hpp"
#include "glyphscribe/synthetic.hpp"

#include <algorithm>
#include <deque>
#include <set>

using namespace glyphscribe;
using namespace glyphscribe::seg;

namespace {

// Direct window average with edge replication.
BinaryImage naive_binarize(const Image &g, int window, double offset) {
  BinaryImage out(g.width, g.height);
  const int r = window / 2;
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      double sum = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
          sum += g.at(std::clamp(x + dx, 0, g.width - 1), std::clamp(y + dy, 0, g.height - 1));
      out.set(x, y, g.at(x, y) < sum / (window * window) - offset);
    }
  return out;
}

// Component pixel sets found by BFS flood fill from each unvisited pixel.
std::set<std::vector<std::uint32_t>> flood_fill(const BinaryImage &b) {
  std::set<std::vector<std::uint32_t>> out;
  std::vector<bool> seen(b.pixels.size());
  for (int y = 0; y < b.height; ++y)
    for (int x = 0; x < b.width; ++x) {
      const auto start = static_cast<std::uint32_t>(y * b.width + x);
      if (!b.at(x, y) || seen[start])
        continue;
      std::vector<std::uint32_t> comp;
      std::deque<std::uint32_t> queue{start};
      seen[start] = true;
      while (!queue.empty()) {
        const auto p = queue.front();
        queue.pop_front();
        comp.push_back(p);
        const int px = static_cast<int>(p) % b.width, py = static_cast<int>(p) / b.width;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = px + dx, ny = py + dy;
            if (nx < 0 || ny < 0 || nx >= b.width || ny >= b.height || !b.at(nx, ny))
              continue;
            const auto q = static_cast<std::uint32_t>(ny * b.width + nx);
            if (!seen[q]) {
              seen[q] = true;
              queue.push_back(q);
            }
          }
      }
      std::sort(comp.begin(), comp.end());
      out.insert(std::move(comp));
    }
  return out;
}

BinaryImage random_bitmap(int w, int h, double density, std::mt19937_64 &rng) {
  BinaryImage b(w, h);
  std::bernoulli_distribution ink(density);
  for (auto &p : b.pixels)
    p = ink(rng);
  return b;
}

ComponentBox box(int x0, int y0, int x1, int y1, std::size_t area = 0) {
  ComponentBox c;
  c.x0 = x0, c.y0 = y0, c.x1 = x1, c.y1 = y1;
  c.area = area ? area : static_cast<std::size_t>((x1 - x0) * (y1 - y0));
  c.cx = (x0 + x1 - 1) / 2.0;
  c.cy = (y0 + y1 - 1) / 2.0;
  return c;
}

} // namespace

TEST_CASE("binarize_adaptive") {
  SUBCASE("constant image is all background") {
    const Image g(40, 30, 1, 128);
    CHECK(binarize_adaptive(g, 15, 10).count() == 0);
  }
  SUBCASE("dark square on white matches the reference local mean") {
    Image g(80, 80, 1, 255);
    for (int y = 35; y < 45; ++y)
      for (int x = 35; x < 45; ++x)
        g.at(x, y) = 0;
    const auto b = binarize_adaptive(g, 31, 10);
    CHECK(b == naive_binarize(g, 31, 10));
    for (int y = 35; y < 45; ++y)
      for (int x = 35; x < 45; ++x)
        CHECK(b.at(x, y));
    CHECK(!b.at(0, 0));
    CHECK(!b.at(79, 79));
    CHECK(b.count() == 100);
  }
  SUBCASE("random images match the reference") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 10; ++t) {
      const auto g = testing::random_image(17 + t, 23 - t, rng);
      const int window = 3 + 2 * (t % 6);
      CHECK(binarize_adaptive(g, window, t) == naive_binarize(g, window, t));
    }
  }
  SUBCASE("1x1 image is background") {
    CHECK(binarize_adaptive(Image(1, 1, 1, 0), 35, 10).count() == 0);
  }
  SUBCASE("argument checks") {
    CHECK_ERROR(binarize_adaptive(Image(10, 10, 1, 0), 4, 10), ErrorCode::InvalidArgument);
    CHECK_ERROR(binarize_adaptive(Image(10, 10, 1, 0), 1, 10), ErrorCode::InvalidArgument);
    CHECK_ERROR(binarize_adaptive(Image(10, 12, 1, 0), 13, 10), ErrorCode::InvalidArgument);
    CHECK_ERROR(binarize_adaptive(Image(10, 10, 3, 0), 3, 10), ErrorCode::InvalidArgument);
    CHECK_NOTHROW(binarize_adaptive(Image(10, 14, 1, 0), 13, 10));
  }
}

TEST_CASE("extract_components basics") {
  CHECK(extract_components(BinaryImage(9, 9)).empty());

  BinaryImage diag(4, 4);
  diag.set(1, 1, true);
  diag.set(2, 2, true);
  const auto one = extract_components(diag);
  REQUIRE(one.size() == 1);
  CHECK(one[0].area == 2);
  CHECK(one[0].x0 == 1);
  CHECK(one[0].x1 == 3);
  CHECK(one[0].cx == doctest::Approx(1.5));
}

TEST_CASE("extract_components equals flood fill on random bitmaps") {
  std::mt19937_64 rng(64);
  for (int t = 0; t < 50; ++t) {
    const auto b = random_bitmap(64, 64, 0.15 + 0.5 * (t % 5) / 5.0, rng);
    const auto comps = extract_components(b);
    std::set<std::vector<std::uint32_t>> got;
    std::size_t area_sum = 0;
    for (const auto &c : comps) {
      got.insert(c.pixels);
      area_sum += c.area;
      CHECK(c.area == c.pixels.size());
      CHECK(std::is_sorted(c.pixels.begin(), c.pixels.end()));
      CHECK(0 <= c.x0);
      CHECK(c.x0 < c.x1);
      CHECK(c.x1 <= 64);
      CHECK(0 <= c.y0);
      CHECK(c.y0 < c.y1);
      CHECK(c.y1 <= 64);
      CHECK(c.area <= static_cast<std::size_t>(c.width() * c.height()));
      CHECK(c.cx >= c.x0);
      CHECK(c.cx <= c.x1 - 1);
      CHECK(c.cy >= c.y0);
      CHECK(c.cy <= c.y1 - 1);
    }
    CHECK(got == flood_fill(b));
    CHECK(got.size() == comps.size()); // pairwise disjoint: no duplicates
    CHECK(area_sum == b.count());
    for (std::size_t i = 1; i < comps.size(); ++i)
      CHECK(std::make_pair(comps[i - 1].y0, comps[i - 1].x0) <=
            std::make_pair(comps[i].y0, comps[i].x0));
  }
}

TEST_CASE("filter_components") {
  const std::vector<ComponentBox> comps = {box(0, 0, 3, 1), box(0, 0, 300, 300, 1200),
                                           box(10, 10, 20, 20)};
  const auto kept = filter_components(comps, 5, 1'000'000, 2, 250);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].x0 == 10);

  SUBCASE("predicate oracle and monotonicity") {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> pos(0, 50), ext(1, 40);
    for (int t = 0; t < 100; ++t) {
      std::vector<ComponentBox> set;
      for (int i = 0; i < 30; ++i) {
        const int x = pos(rng), y = pos(rng), w = ext(rng), h = ext(rng);
        std::uniform_int_distribution<std::size_t> a(1, static_cast<std::size_t>(w * h));
        set.push_back(box(x, y, x + w, y + h, a(rng)));
      }
      const std::size_t lo = t % 50, hi = 200 + 10 * (t % 40);
      const int dlo = t % 5, dhi = 10 + t % 30;
      const auto out = filter_components(set, lo, hi, dlo, dhi);
      std::vector<ComponentBox> expect;
      for (const auto &c : set)
        if (c.area >= lo && c.area <= hi && c.width() >= dlo && c.width() <= dhi &&
            c.height() >= dlo && c.height() <= dhi)
          expect.push_back(c);
      REQUIRE(out.size() == expect.size());
      for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(out[i].x0 == expect[i].x0);

      const auto wider = filter_components(set, lo / 2, hi * 2, dlo, dhi);
      for (const auto &c : out)
        CHECK(std::any_of(wider.begin(), wider.end(), [&](const ComponentBox &k) {
          return k.x0 == c.x0 && k.y0 == c.y0 && k.x1 == c.x1 && k.y1 == c.y1 && k.area == c.area;
        }));
    }
  }
}

TEST_CASE("cluster_columns") {
  CHECK(cluster_columns({}, 2.0).empty());

  const auto single = cluster_columns({box(5, 5, 10, 10)}, 2.0);
  REQUIRE(single.size() == 1);
  CHECK(single[0].size() == 1);

  std::vector<ComponentBox> stack;
  for (int i : {3, 0, 4, 1, 2})
    stack.push_back(box(10, i * 20, 20, i * 20 + 10));
  const auto one = cluster_columns(stack, 2.0);
  REQUIRE(one.size() == 1);
  REQUIRE(one[0].size() == 5);
  for (int i = 0; i < 5; ++i)
    CHECK(one[0][i].y0 == i * 20);

  SUBCASE("two clusters 10x median width apart; gap-scan oracle") {
    std::vector<ComponentBox> comps;
    for (int i = 0; i < 4; ++i)
      comps.push_back(box(0 + i % 2, i * 15, 10 + i % 2, i * 15 + 10));
    for (int i = 0; i < 3; ++i)
      comps.push_back(box(100, i * 15, 110, i * 15 + 10));
    const auto cols = cluster_columns(comps, 2.0);
    REQUIRE(cols.size() == 2);
    CHECK(cols[0].size() == 4);
    CHECK(cols[1].size() == 3);
    const auto rtl = cluster_columns(comps, 2.0, ColumnDirection::RightToLeft);
    REQUIRE(rtl.size() == 2);
    CHECK(rtl[0].size() == 3);
  }

  SUBCASE("random layouts match the gap-scan oracle and are translation stable") {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<int> xs(0, 400), ys(0, 400), wd(4, 20);
    for (int t = 0; t < 100; ++t) {
      std::vector<ComponentBox> comps;
      const int n = 1 + t % 15;
      for (int i = 0; i < n; ++i) {
        const int x = xs(rng), y = ys(rng), w = wd(rng);
        comps.push_back(box(x, y, x + w, y + w));
      }
      const double gap = 0.5 + (t % 4);
      const auto cols = cluster_columns(comps, gap);

      // Oracle: count gaps above gap * median width among sorted centroids.
      std::vector<double> cx, widths;
      for (const auto &c : comps) {
        cx.push_back(c.cx);
        widths.push_back(c.width());
      }
      std::sort(cx.begin(), cx.end());
      std::sort(widths.begin(), widths.end());
      const double median = widths.size() % 2 ? widths[widths.size() / 2]
                                              : (widths[widths.size() / 2 - 1] + widths[widths.size() / 2]) / 2;
      std::size_t expected = 1;
      for (std::size_t i = 1; i < cx.size(); ++i)
        expected += cx[i] - cx[i - 1] > gap * median;
      CHECK(cols.size() == expected);
      std::size_t total = 0;
      for (const auto &col : cols) {
        total += col.size();
        for (std::size_t i = 1; i < col.size(); ++i)
          CHECK(col[i - 1].cy <= col[i].cy);
      }
      CHECK(total == comps.size());

      auto moved = comps;
      for (auto &c : moved) {
        c.x0 += 37, c.x1 += 37, c.cx += 37;
        c.y0 += 11, c.y1 += 11, c.cy += 11;
      }
      const auto cols2 = cluster_columns(moved, gap);
      REQUIRE(cols2.size() == cols.size());
      for (std::size_t c = 0; c < cols.size(); ++c) {
        REQUIRE(cols2[c].size() == cols[c].size());
        for (std::size_t k = 0; k < cols[c].size(); ++k)
          CHECK(cols2[c][k].x0 == cols[c][k].x0 + 37);
      }
    }
  }
}

TEST_CASE("segment_region on synthetic pages") {
  SegmentationConfig cfg;
  cfg.canonical_size = 48;

  CHECK(segment_region(Image(200, 150, 1, 255), cfg).empty());

  synth::GlyphFamily family(12, 7);
  const auto page = synth::render_page(family, {}, 5);
  const auto glyphs = segment_region(page.image, cfg);
  REQUIRE(glyphs.size() == 12);
  std::set<std::pair<int, int>> slots;
  for (const auto &g : glyphs) {
    slots.insert({g.column_index, g.order_index});
    CHECK(g.crop.width == 48);
    CHECK(g.crop.height == 48);
    // Each detected box matches the ground-truth glyph at the same slot.
    const auto it = std::find_if(page.glyphs.begin(), page.glyphs.end(), [&](const auto &t) {
      return t.column == g.column_index && t.order == g.order_index;
    });
    REQUIRE(it != page.glyphs.end());
    CHECK(std::abs(g.box.x0 - it->x0) <= 1);
    CHECK(std::abs(g.box.y0 - it->y0) <= 1);
    CHECK(std::abs(g.box.x1 - it->x1) <= 1);
    CHECK(std::abs(g.box.y1 - it->y1) <= 1);
  }
  CHECK(slots.size() == 12);
  CHECK(slots.begin()->first == 0);
  CHECK(slots.rbegin()->first == 2);
  CHECK(slots.rbegin()->second == 3);

  SUBCASE("deterministic") {
    const auto again = segment_region(page.image, cfg);
    REQUIRE(again.size() == glyphs.size());
    for (std::size_t i = 0; i < glyphs.size(); ++i)
      CHECK(again[i].crop == glyphs[i].crop);
  }

  SUBCASE("small editorial mark falls under the size filter") {
    auto marked = page;
    synth::stamp_editorial_mark(marked.image, 8, 8, 6);
    const auto out = segment_region(marked.image, cfg);
    CHECK(out.size() == 12);
    for (const auto &g : out)
      CHECK(g.box.y0 > 14);
  }

  SUBCASE("overlay keeps dimensions") {
    const auto overlay = render_overlay(page.image, glyphs);
    CHECK(overlay.width == page.image.width);
    CHECK(overlay.height == page.image.height);
    CHECK(overlay.channels == 3);
  }
}

TEST_CASE("segmentation config validation and JSON") {
  SegmentationConfig c;
  c.window = 8;
  CHECK_ERROR(c.validate(), ErrorCode::InvalidArgument);
  c = {};
  c.min_area = 10;
  c.max_area = 5;
  CHECK_ERROR(c.validate(), ErrorCode::InvalidArgument);

  SegmentationConfig d;
  d.column_direction = ColumnDirection::RightToLeft;
  d.gap_factor = 3.5;
  nlohmann::json j = d;
  CHECK(j.at("column_direction") == "rtl");
  const auto back = j.get<SegmentationConfig>();
  CHECK(back.column_direction == ColumnDirection::RightToLeft);
  CHECK(back.gap_factor == 3.5);
  CHECK(back.window == d.window);
}
