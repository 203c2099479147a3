#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace glyphscribe {

/// 8-bit raster, interleaved channels (1 = gray, 3 = RGB), row-major.
/// Facsimiles follow the dark-ink-on-light-background convention.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c = 1, std::uint8_t fill = 0);

  bool empty() const noexcept { return width == 0 || height == 0; }
  std::size_t index(int x, int y, int c = 0) const noexcept {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  std::uint8_t at(int x, int y, int c = 0) const noexcept {
    return pixels[index(x, y, c)];
  }
  std::uint8_t &at(int x, int y, int c = 0) noexcept {
    return pixels[index(x, y, c)];
  }

  friend bool operator==(const Image &, const Image &) = default;
};

constexpr std::uint8_t kBackground = 255;
constexpr std::uint8_t kInk = 0;

// Codecs. PNG goes through libpng; binary PGM/PPM are accepted for inputs.
Image decode_image(std::span<const std::uint8_t> bytes);
Image load_image(const std::filesystem::path &path);
std::vector<std::uint8_t> encode_png(const Image &image);
void save_png(const Image &image, const std::filesystem::path &path);

Image to_gray(const Image &image);
Image to_rgb(const Image &image);

/// Half-open crop clamped to the image.
Image crop(const Image &image, int x0, int y0, int x1, int y1);

/// Centres the image on a square canvas filled with `fill`.
Image pad_to_square(const Image &image, std::uint8_t fill = kBackground);

/// Bilinear when enlarging, area averaging when either axis shrinks.
Image resize(const Image &image, int width, int height);

/// Gray, square-padded with background, resized to size x size.
Image fit_canonical(const Image &image, int size);

/// Rotation about the centre (degrees) followed by a
/// translation, bilinear sampling, uncovered pixels set to `fill`.
Image warp_rotate_shift(const Image &image, double degrees, double dx,
                        double dy, std::uint8_t fill = kBackground);

Image flip_left_right(const Image &image);
Image flip_top_bottom(const Image &image);

} // namespace glyphscribe
