#include "glyphscribe/synthetic.hpp"

#include "glyphscribe/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace glyphscribe::synth {

namespace {

using Kind = Primitive::Kind;

// Real Gardiner codes used as class labels for the synthetic family.
constexpr std::array<const char *, 48> kCodes = {
    "A1",  "Aa15", "D4",  "D21", "D36", "D50", "D58", "F34", "G5",  "G14",
    "G17", "I9",   "I10", "M17", "M37", "N1",  "N35", "O1",  "Q1",  "Q3",
    "R8",  "S29",  "T9D", "U15", "U33", "V13", "V31", "W10", "W25", "X1",
    "Y1",  "Z1",   "Z11", "A2",  "B1",  "D2",  "D46", "E1",  "F4",  "G1",
    "G43", "I11",  "L2",  "M23", "N5",  "O4",  "S34", "V28"};

struct Point {
  double x, y;
};

Point point_on(const Primitive &p, double t) {
  switch (p.kind) {
  case Kind::Line:
    return {p.x0 + t * (p.x1 - p.x0), p.y0 + t * (p.y1 - p.y0)};
  case Kind::Box: {
    // walk the perimeter
    const double w = p.x1 - p.x0, h = p.y1 - p.y0;
    double d = t * 2 * (std::abs(w) + std::abs(h));
    if (d < std::abs(w))
      return {p.x0 + std::copysign(d, w), p.y0};
    d -= std::abs(w);
    if (d < std::abs(h))
      return {p.x1, p.y0 + std::copysign(d, h)};
    d -= std::abs(h);
    if (d < std::abs(w))
      return {p.x1 - std::copysign(d, w), p.y1};
    d -= std::abs(w);
    return {p.x0, p.y1 - std::copysign(d, h)};
  }
  case Kind::Ring:
    return {p.cx + p.r * std::cos(2 * M_PI * t), p.cy + p.r * std::sin(2 * M_PI * t)};
  case Kind::Arc: {
    const double a = p.a0 + t * (p.a1 - p.a0);
    return {p.cx + p.r * std::cos(a), p.cy + p.r * std::sin(a)};
  }
  case Kind::Dot:
    return {p.cx, p.cy};
  }
  return {0, 0};
}

double segment_distance(double px, double py, double ax, double ay, double bx,
                        double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

double distance(const Primitive &p, double x, double y) {
  switch (p.kind) {
  case Kind::Line:
    return segment_distance(x, y, p.x0, p.y0, p.x1, p.y1);
  case Kind::Box:
    return std::min({segment_distance(x, y, p.x0, p.y0, p.x1, p.y0),
                     segment_distance(x, y, p.x1, p.y0, p.x1, p.y1),
                     segment_distance(x, y, p.x1, p.y1, p.x0, p.y1),
                     segment_distance(x, y, p.x0, p.y1, p.x0, p.y0)});
  case Kind::Ring:
    return std::abs(std::hypot(x - p.cx, y - p.cy) - p.r);
  case Kind::Arc: {
    double a = std::atan2(y - p.cy, x - p.cx);
    // bring a into [a0, a0 + 2pi)
    while (a < p.a0)
      a += 2 * M_PI;
    while (a >= p.a0 + 2 * M_PI)
      a -= 2 * M_PI;
    if (a <= p.a1)
      return std::abs(std::hypot(x - p.cx, y - p.cy) - p.r);
    const Point e0 = point_on(p, 0), e1 = point_on(p, 1);
    return std::min(std::hypot(x - e0.x, y - e0.y), std::hypot(x - e1.x, y - e1.y));
  }
  case Kind::Dot:
    return std::max(0.0, std::hypot(x - p.cx, y - p.cy) - p.r);
  }
  return 1e9;
}

// Applies x -> s * R(x - c) + c + t to every vertex, plus per-vertex jitter.
template <class Jitter>
Primitive transform(const Primitive &in, double angle, double scale, double tx,
                    double ty, Jitter &&jitter) {
  const double c = std::cos(angle), s = std::sin(angle);
  auto map = [&](double &x, double &y) {
    const double ux = x - 0.5, uy = y - 0.5;
    x = scale * (c * ux - s * uy) + 0.5 + tx + jitter();
    y = scale * (s * ux + c * uy) + 0.5 + ty + jitter();
  };
  Primitive p = in;
  switch (p.kind) {
  case Kind::Line:
    map(p.x0, p.y0);
    map(p.x1, p.y1);
    break;
  case Kind::Box: {
    // only the centre moves here; expand_boxes applies the rotation
    double cx = (p.x0 + p.x1) / 2, cy = (p.y0 + p.y1) / 2;
    const double hw = scale * (p.x1 - p.x0) / 2, hh = scale * (p.y1 - p.y0) / 2;
    map(cx, cy);
    p.x0 = cx - hw;
    p.x1 = cx + hw;
    p.y0 = cy - hh;
    p.y1 = cy + hh;
    break;
  }
  case Kind::Ring:
  case Kind::Dot:
    map(p.cx, p.cy);
    p.r *= scale;
    break;
  case Kind::Arc:
    map(p.cx, p.cy);
    p.r *= scale;
    p.a0 += angle;
    p.a1 += angle;
    break;
  }
  return p;
}

// Rotated boxes become four lines.
std::vector<Primitive> expand_boxes(const std::vector<Primitive> &parts,
                                    double angle) {
  std::vector<Primitive> out;
  for (const auto &p : parts) {
    if (p.kind != Kind::Box || angle == 0.0) {
      out.push_back(p);
      continue;
    }
    const double cx = (p.x0 + p.x1) / 2, cy = (p.y0 + p.y1) / 2;
    const double c = std::cos(angle), s = std::sin(angle);
    std::array<Point, 4> corners = {Point{p.x0, p.y0}, Point{p.x1, p.y0},
                                    Point{p.x1, p.y1}, Point{p.x0, p.y1}};
    for (auto &q : corners) {
      const double ux = q.x - cx, uy = q.y - cy;
      q = {c * ux - s * uy + cx, s * ux + c * uy + cy};
    }
    for (int i = 0; i < 4; ++i) {
      Primitive l;
      l.kind = Kind::Line;
      l.x0 = corners[i].x;
      l.y0 = corners[i].y;
      l.x1 = corners[(i + 1) % 4].x;
      l.y1 = corners[(i + 1) % 4].y;
      out.push_back(l);
    }
  }
  return out;
}

void render_parts(Image &canvas, const std::vector<Primitive> &parts, int ox,
                  int oy, int size, double thickness_px) {
  const double half = thickness_px / 2;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const int px = ox + x, py = oy + y;
      if (px < 0 || py < 0 || px >= canvas.width || py >= canvas.height)
        continue;
      const double ux = (x + 0.5) / size, uy = (y + 0.5) / size;
      double d = 1e9;
      for (const auto &p : parts)
        d = std::min(d, distance(p, ux, uy) * size);
      // one-pixel soft edge
      const double cover = std::clamp(half - d + 0.5, 0.0, 1.0);
      if (cover <= 0)
        continue;
      auto &v = canvas.at(px, py);
      v = static_cast<std::uint8_t>(std::min<double>(v, std::lround(255.0 * (1 - cover))));
    }
  }
}

// Uniform scale + translation so the shape's extent fits [lo, hi]^2.
void normalize_extent(GlyphShape &shape, double lo, double hi) {
  double xmin = 1e9, ymin = 1e9, xmax = -1e9, ymax = -1e9;
  for (const auto &p : shape.parts) {
    for (int i = 0; i <= 64; ++i) {
      const Point q = point_on(p, i / 64.0);
      const double pad = p.kind == Kind::Dot ? p.r : 0.0;
      xmin = std::min(xmin, q.x - pad);
      ymin = std::min(ymin, q.y - pad);
      xmax = std::max(xmax, q.x + pad);
      ymax = std::max(ymax, q.y + pad);
    }
  }
  const double extent = std::max({xmax - xmin, ymax - ymin, 1e-6});
  const double s = (hi - lo) / extent;
  const double ox = lo + ((hi - lo) - s * (xmax - xmin)) / 2 - s * xmin;
  const double oy = lo + ((hi - lo) - s * (ymax - ymin)) / 2 - s * ymin;
  for (auto &p : shape.parts) {
    p.x0 = s * p.x0 + ox;
    p.x1 = s * p.x1 + ox;
    p.y0 = s * p.y0 + oy;
    p.y1 = s * p.y1 + oy;
    p.cx = s * p.cx + ox;
    p.cy = s * p.cy + oy;
    p.r *= s;
  }
}

GlyphShape random_shape(std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> parts_dist(2, 4);
  GlyphShape shape;
  const int n = parts_dist(rng);
  for (int i = 0; i < n; ++i) {
    Point anchor{0.2 + 0.6 * u(rng), 0.2 + 0.6 * u(rng)};
    if (i > 0) {
      std::uniform_int_distribution<std::size_t> pick(0, shape.parts.size() - 1);
      anchor = point_on(shape.parts[pick(rng)], u(rng));
    }
    const double r = u(rng);
    Primitive p;
    const double dir = 2 * M_PI * u(rng);
    if (r < 0.45) {
      p.kind = Kind::Line;
      const double len = 0.3 + 0.4 * u(rng);
      p.x0 = anchor.x;
      p.y0 = anchor.y;
      p.x1 = anchor.x + len * std::cos(dir);
      p.y1 = anchor.y + len * std::sin(dir);
    } else if (r < 0.6) {
      p.kind = Kind::Ring;
      p.r = 0.1 + 0.12 * u(rng);
      p.cx = anchor.x + p.r * std::cos(dir);
      p.cy = anchor.y + p.r * std::sin(dir);
    } else if (r < 0.8) {
      p.kind = Kind::Arc;
      p.r = 0.15 + 0.15 * u(rng);
      p.cx = anchor.x + p.r * std::cos(dir);
      p.cy = anchor.y + p.r * std::sin(dir);
      // arc starts at the anchor
      p.a0 = dir + M_PI;
      p.a1 = p.a0 + M_PI * (0.5 + u(rng));
    } else if (r < 0.92) {
      p.kind = Kind::Box;
      const double w = 0.15 + 0.25 * u(rng), h = 0.15 + 0.25 * u(rng);
      p.x0 = anchor.x;
      p.y0 = anchor.y;
      p.x1 = anchor.x + (u(rng) < 0.5 ? w : -w);
      p.y1 = anchor.y + (u(rng) < 0.5 ? h : -h);
    } else {
      p.kind = Kind::Dot;
      p.r = 0.05 + 0.04 * u(rng);
      p.cx = anchor.x;
      p.cy = anchor.y;
    }
    shape.parts.push_back(p);
  }
  normalize_extent(shape, 0.12, 0.88);
  return shape;
}

std::vector<bool> ink_mask(const Image &img) {
  std::vector<bool> mask(img.pixels.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = img.pixels[i] < 128;
  return mask;
}

double iou(const std::vector<bool> &a, const std::vector<bool> &b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni ? static_cast<double>(inter) / uni : 0.0;
}

// Dilated masks make the similarity test tolerant to small offsets.
std::vector<bool> dilate(const std::vector<bool> &m, int size, int radius) {
  std::vector<bool> out(m.size());
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      bool any = false;
      for (int dy = -radius; dy <= radius && !any; ++dy)
        for (int dx = -radius; dx <= radius && !any; ++dx) {
          const int xx = x + dx, yy = y + dy;
          any = xx >= 0 && yy >= 0 && xx < size && yy < size && m[yy * size + xx];
        }
      out[y * size + x] = any;
    }
  return out;
}

} // namespace

RenderOptions clean_options() {
  RenderOptions o;
  o.max_rotation_deg = 0;
  o.scale_jitter = 0;
  o.shift = 0;
  o.point_jitter = 0;
  o.thickness_jitter = 0;
  o.salt_noise = 0;
  o.gray_noise = 0;
  return o;
}

namespace {

Image render_shape(const GlyphShape &shape, int size, std::mt19937_64 &rng,
                   const RenderOptions &o) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double angle = o.max_rotation_deg * M_PI / 180.0 * u(rng);
  const double scale = 1.0 + o.scale_jitter * u(rng);
  const double tx = o.shift * u(rng), ty = o.shift * u(rng);
  auto jitter = [&] { return o.point_jitter * u(rng); };
  std::vector<Primitive> parts;
  for (const auto &p : shape.parts)
    parts.push_back(transform(p, angle, scale, tx, ty, jitter));
  parts = expand_boxes(parts, angle);

  const double thickness =
      std::max(1.2, o.thickness * size * (1.0 + o.thickness_jitter * u(rng)));
  Image img(size, size, 1, kBackground);
  render_parts(img, parts, 0, 0, size, thickness);

  if (o.gray_noise > 0 || o.salt_noise > 0) {
    std::normal_distribution<double> gauss(0.0, o.gray_noise > 0 ? o.gray_noise : 1.0);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    for (auto &v : img.pixels) {
      double value = v;
      if (o.gray_noise > 0)
        value += gauss(rng);
      if (o.salt_noise > 0 && coin(rng) < o.salt_noise)
        value = 40;
      v = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
    }
  }
  return img;
}

} // namespace

GlyphFamily::GlyphFamily(std::size_t num_classes, std::uint64_t seed) {
  require(num_classes > 0 && num_classes <= kCodes.size(),
          "synthetic family supports 1.." + std::to_string(kCodes.size()) + " classes");
  std::mt19937_64 rng(seed);
  constexpr int probe = 32;
  std::vector<std::vector<bool>> masks;
  int attempts = 0;
  while (shapes_.size() < num_classes) {
    GlyphShape candidate = random_shape(rng);
    std::mt19937_64 unused(0);
    const auto mask =
        dilate(ink_mask(render_shape(candidate, probe, unused, clean_options())), probe, 1);
    bool distinct = true;
    for (const auto &m : masks)
      if (iou(mask, m) > 0.45) {
        distinct = false;
        break;
      }
    if (!distinct && ++attempts < 10000)
      continue;
    masks.push_back(mask);
    shapes_.push_back(std::move(candidate));
    codes_.emplace_back(kCodes[codes_.size()]);
  }
}

Image GlyphFamily::render(std::size_t k, int size, std::mt19937_64 &rng,
                          const RenderOptions &o) const {
  return render_shape(shapes_.at(k), size, rng, o);
}

Image GlyphFamily::prototype(std::size_t k, int size) const {
  std::mt19937_64 rng(0);
  return render(k, size, rng, clean_options());
}

std::vector<corpus::LabeledSample>
make_samples(const GlyphFamily &family, const std::vector<std::size_t> &classes,
             const std::vector<std::size_t> &per_class, int size,
             std::uint64_t seed, const RenderOptions &options,
             const std::string &prefix) {
  require(classes.size() == per_class.size(), "classes and per_class differ in length");
  std::mt19937_64 rng(seed);
  std::vector<corpus::LabeledSample> out;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    for (std::size_t j = 0; j < per_class[i]; ++j) {
      corpus::LabeledSample s;
      s.code = family.code(classes[i]);
      char name[32];
      std::snprintf(name, sizeof name, "%04zu", j);
      s.sample_id = s.code + "/" + prefix + name + ".png";
      s.page_id = "synthetic";
      s.image = family.render(classes[i], size, rng, options);
      out.push_back(std::move(s));
    }
  }
  return out;
}

void write_dataset(const std::filesystem::path &root,
                   const std::vector<corpus::LabeledSample> &samples) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::ofstream manifest(root / "manifest.csv", std::ios::binary);
  if (!manifest)
    fail(ErrorCode::Io, "cannot write " + (root / "manifest.csv").string());
  manifest << "path,page_id\n";
  for (const auto &s : samples) {
    const fs::path file = root / s.sample_id;
    fs::create_directories(file.parent_path());
    save_png(s.image, file);
    manifest << s.sample_id << ',' << s.page_id << '\n';
  }
}

SyntheticPage render_page(const GlyphFamily &family, const PageLayout &layout,
                          std::uint64_t seed, const RenderOptions &options) {
  const int width = 2 * layout.margin + (layout.columns - 1) * layout.column_pitch +
                    layout.glyph_size;
  const int height = 2 * layout.margin +
                     (layout.glyphs_per_column - 1) * layout.row_pitch + layout.glyph_size;
  SyntheticPage page;
  page.image = Image(width, height, 1, kBackground);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, family.size() - 1);
  RenderOptions glyph_options = options;
  glyph_options.salt_noise = 0;
  glyph_options.gray_noise = 0;
  for (int c = 0; c < layout.columns; ++c) {
    for (int r = 0; r < layout.glyphs_per_column; ++r) {
      const std::size_t k = pick(rng);
      const Image g = family.render(k, layout.glyph_size, rng, glyph_options);
      const int ox = layout.margin + c * layout.column_pitch;
      const int oy = layout.margin + r * layout.row_pitch;
      PageGlyph truth;
      truth.class_index = k;
      truth.code = family.code(k);
      truth.column = c;
      truth.order = r;
      truth.x0 = truth.y0 = 1 << 30;
      truth.x1 = truth.y1 = -1;
      for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) {
          const auto v = g.at(x, y);
          auto &dst = page.image.at(ox + x, oy + y);
          dst = std::min(dst, v);
          if (v < 128) {
            truth.x0 = std::min(truth.x0, ox + x);
            truth.y0 = std::min(truth.y0, oy + y);
            truth.x1 = std::max(truth.x1, ox + x + 1);
            truth.y1 = std::max(truth.y1, oy + y + 1);
          }
        }
      page.glyphs.push_back(truth);
    }
  }
  if (options.salt_noise > 0 || options.gray_noise > 0) {
    std::normal_distribution<double> gauss(0.0, options.gray_noise > 0 ? options.gray_noise : 1.0);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    for (auto &v : page.image.pixels) {
      double value = v;
      if (options.gray_noise > 0)
        value += gauss(rng);
      if (options.salt_noise > 0 && coin(rng) < options.salt_noise)
        value = 40;
      v = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
    }
  }
  return page;
}

void stamp_editorial_mark(Image &page, int x, int y, int height) {
  const int w = std::max(3, height * 2 / 3);
  auto dot = [&](int px, int py) {
    if (px >= 0 && py >= 0 && px < page.width && py < page.height)
      page.at(px, py) = kInk;
  };
  for (int i = 0; i < height; ++i) {
    dot(x, y + i);
    dot(x + w - 1, y + i);
    dot(x + (w - 1) * i / std::max(1, height - 1), y + i);
  }
}

} // namespace glyphscribe::synth
