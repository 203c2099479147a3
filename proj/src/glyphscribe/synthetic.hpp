#pragma once

#include "glyphscribe/corpus.hpp"
#include "glyphscribe/image.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

// Procedural stand-in for a facsimile sign corpus: every class is a connected
// stroke figure built from lines, rings, arcs, boxes and dots; instances are
// perturbed renderings of it.
namespace glyphscribe::synth {

struct Primitive {
  enum class Kind { Line, Ring, Arc, Box, Dot };
  Kind kind = Kind::Line;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0; // line / box corners
  double cx = 0, cy = 0, r = 0;          // ring, arc, dot
  double a0 = 0, a1 = 0;                 // arc angles (radians)
};

struct GlyphShape {
  std::vector<Primitive> parts;
};

struct RenderOptions {
  double max_rotation_deg = 8.0;
  double scale_jitter = 0.08;   // relative
  double shift = 0.04;          // fraction of the canvas
  double point_jitter = 0.025;  // per-vertex, fraction of the canvas
  double thickness = 0.07;      // stroke width, fraction of the canvas
  double thickness_jitter = 0.2;
  double salt_noise = 0.003;    // probability of an isolated dark speck
  double gray_noise = 6.0;      // std-dev of additive intensity noise
};

/// No perturbation and no noise.
RenderOptions clean_options();

class GlyphFamily {
public:
  /// Builds `num_classes` mutually dissimilar shapes; deterministic in seed.
  GlyphFamily(std::size_t num_classes, std::uint64_t seed);

  std::size_t size() const noexcept { return shapes_.size(); }
  const std::string &code(std::size_t k) const { return codes_.at(k); }
  const GlyphShape &shape(std::size_t k) const { return shapes_.at(k); }

  Image render(std::size_t k, int size, std::mt19937_64 &rng,
               const RenderOptions &options = {}) const;
  Image prototype(std::size_t k, int size) const;

private:
  std::vector<GlyphShape> shapes_;
  std::vector<std::string> codes_;
};

/// Renders `per_class[k]` samples of class k. Sample ids are
/// "<CODE>/<prefix><index>.png" so they line up with write_dataset.
std::vector<corpus::LabeledSample>
make_samples(const GlyphFamily &family, const std::vector<std::size_t> &classes,
             const std::vector<std::size_t> &per_class, int size,
             std::uint64_t seed, const RenderOptions &options = {},
             const std::string &prefix = "s");

/// Writes <root>/<CODE>/<file>.png plus manifest.csv (path,page_id).
void write_dataset(const std::filesystem::path &root,
                   const std::vector<corpus::LabeledSample> &samples);

struct PageGlyph {
  std::size_t class_index = 0;
  std::string code;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0; // ink bounding box, half-open
  int column = 0;
  int order = 0;
};

struct SyntheticPage {
  Image image;
  std::vector<PageGlyph> glyphs;
};

struct PageLayout {
  int columns = 3;
  int glyphs_per_column = 4;
  int glyph_size = 40;
  int column_pitch = 80;
  int row_pitch = 56;
  int margin = 30;
};

/// Columns of glyphs on white paper, read left to right, top to bottom.
SyntheticPage render_page(const GlyphFamily &family, const PageLayout &layout,
                          std::uint64_t seed,
                          const RenderOptions &options = clean_options());

/// Stamps a small letter "N" (the editorial abbreviation mark) at (x, y).
void stamp_editorial_mark(Image &page, int x, int y, int height);

} // namespace glyphscribe::synth
