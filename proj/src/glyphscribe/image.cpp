#include "glyphscribe/image.hpp"

#include "glyphscribe/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace glyphscribe {

Image::Image(int w, int h, int c, std::uint8_t fill)
    : width(w), height(h), channels(c),
      pixels(static_cast<std::size_t>(w) * h * c, fill) {
  require(w >= 0 && h >= 0 && (c == 1 || c == 3),
          "image dimensions must be non-negative with 1 or 3 channels");
}

namespace {

bool is_png(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()))
    fail(ErrorCode::Format, std::string("cannot decode PNG: ") + png.message);

  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image out(static_cast<int>(png.width), static_cast<int>(png.height),
            color ? 3 : 1);
  // Transparent regions composite onto white paper.
  png_color background{255, 255, 255};
  if (!png_image_finish_read(&png, &background, out.pixels.data(), 0,
                             nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorCode::Format, "cannot decode PNG: " + msg);
  }
  return out;
}

// Binary P5/P6 with maxval <= 255.
Image decode_pnm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 2;
  auto skip_ws = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n')
          ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_ws();
    long value = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + (bytes[pos++] - '0');
      any = true;
      if (value > 1 << 20)
        fail(ErrorCode::Format, "PNM header value out of range");
    }
    if (!any)
      fail(ErrorCode::Format, "malformed PNM header");
    return static_cast<int>(value);
  };
  const int channels = bytes[1] == '6' ? 3 : 1;
  const int w = read_int();
  const int h = read_int();
  const int maxval = read_int();
  if (maxval <= 0 || maxval > 255)
    fail(ErrorCode::Format, "only 8-bit PNM is supported");
  ++pos; // single whitespace before raster
  Image out(w, h, channels);
  if (bytes.size() < pos + out.pixels.size())
    fail(ErrorCode::Format, "truncated PNM raster");
  std::memcpy(out.pixels.data(), bytes.data() + pos, out.pixels.size());
  if (maxval != 255)
    for (auto &p : out.pixels)
      p = static_cast<std::uint8_t>(std::min(255, p * 255 / maxval));
  return out;
}

} // namespace

Image decode_image(std::span<const std::uint8_t> bytes) {
  if (is_png(bytes))
    return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6'))
    return decode_pnm(bytes);
  fail(ErrorCode::Format, "unrecognized raster format");
}

Image load_image(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_image(bytes);
  } catch (const Error &e) {
    fail(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const Image &image) {
  require(!image.empty(), "cannot encode an empty image");
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.pixels.data(),
                                 0, nullptr))
    fail(ErrorCode::Format, std::string("cannot encode PNG: ") + png.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0,
                                 image.pixels.data(), 0, nullptr))
    fail(ErrorCode::Format, std::string("cannot encode PNG: ") + png.message);
  out.resize(size);
  return out;
}

void save_png(const Image &image, const std::filesystem::path &path) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out)
    fail(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char *>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out)
    fail(ErrorCode::Io, "short write to " + path.string());
}

Image to_gray(const Image &image) {
  if (image.channels == 1)
    return image;
  Image out(image.width, image.height, 1);
  for (std::size_t i = 0, n = out.pixels.size(); i < n; ++i) {
    const auto *p = &image.pixels[i * 3];
    // ITU-R 601 luma, integer rounding
    out.pixels[i] =
        static_cast<std::uint8_t>((299 * p[0] + 587 * p[1] + 114 * p[2] + 500) / 1000);
  }
  return out;
}

Image to_rgb(const Image &image) {
  if (image.channels == 3)
    return image;
  Image out(image.width, image.height, 3);
  for (std::size_t i = 0, n = image.pixels.size(); i < n; ++i)
    std::fill_n(&out.pixels[i * 3], 3, image.pixels[i]);
  return out;
}

Image crop(const Image &image, int x0, int y0, int x1, int y1) {
  x0 = std::clamp(x0, 0, image.width);
  x1 = std::clamp(x1, 0, image.width);
  y0 = std::clamp(y0, 0, image.height);
  y1 = std::clamp(y1, 0, image.height);
  Image out(std::max(0, x1 - x0), std::max(0, y1 - y0), image.channels);
  for (int y = y0; y < y1; ++y)
    std::memcpy(&out.pixels[out.index(0, y - y0)], &image.pixels[image.index(x0, y)],
                static_cast<std::size_t>(x1 - x0) * image.channels);
  return out;
}

Image pad_to_square(const Image &image, std::uint8_t fill) {
  const int side = std::max(image.width, image.height);
  if (side == image.width && side == image.height)
    return image;
  Image out(side, side, image.channels, fill);
  const int ox = (side - image.width) / 2;
  const int oy = (side - image.height) / 2;
  for (int y = 0; y < image.height; ++y)
    std::memcpy(&out.pixels[out.index(ox, y + oy)], &image.pixels[image.index(0, y)],
                static_cast<std::size_t>(image.width) * image.channels);
  return out;
}

namespace {

double sample_bilinear(const Image &image, double fx, double fy, int c,
                       std::uint8_t fill) {
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0;
  const double ay = fy - y0;
  auto px = [&](int x, int y) -> double {
    if (x < 0 || y < 0 || x >= image.width || y >= image.height)
      return fill;
    return image.at(x, y, c);
  };
  return (1 - ay) * ((1 - ax) * px(x0, y0) + ax * px(x0 + 1, y0)) +
         ay * ((1 - ax) * px(x0, y0 + 1) + ax * px(x0 + 1, y0 + 1));
}

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

} // namespace

namespace {

// Exact box-filter coverage, used whenever an axis shrinks.
Image resize_area(const Image &image, int width, int height) {
  Image out(width, height, image.channels);
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  std::vector<double> acc(static_cast<std::size_t>(image.channels));
  for (int y = 0; y < height; ++y) {
    const double fy0 = y * sy, fy1 = (y + 1) * sy;
    for (int x = 0; x < width; ++x) {
      const double fx0 = x * sx, fx1 = (x + 1) * sx;
      std::fill(acc.begin(), acc.end(), 0.0);
      double total = 0;
      for (int iy = static_cast<int>(fy0); iy < std::min<double>(fy1, image.height); ++iy) {
        const double wy = std::min<double>(iy + 1, fy1) - std::max<double>(iy, fy0);
        for (int ix = static_cast<int>(fx0); ix < std::min<double>(fx1, image.width); ++ix) {
          const double w = wy * (std::min<double>(ix + 1, fx1) - std::max<double>(ix, fx0));
          if (w <= 0)
            continue;
          total += w;
          for (int c = 0; c < image.channels; ++c)
            acc[c] += w * image.at(ix, iy, c);
        }
      }
      for (int c = 0; c < image.channels; ++c)
        out.at(x, y, c) = to_u8(acc[c] / total);
    }
  }
  return out;
}

} // namespace

Image resize(const Image &image, int width, int height) {
  require(width > 0 && height > 0, "resize target must be positive");
  require(!image.empty(), "cannot resize an empty image");
  if (width == image.width && height == image.height)
    return image;
  if (width < image.width || height < image.height)
    return resize_area(image, width, height);
  Image out(width, height, image.channels);
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      for (int c = 0; c < image.channels; ++c)
        out.at(x, y, c) = to_u8(sample_bilinear(image, fx, fy, c, 0));
    }
  }
  return out;
}

Image fit_canonical(const Image &image, int size) {
  return resize(pad_to_square(to_gray(image)), size, size);
}

Image warp_rotate_shift(const Image &image, double degrees, double dx,
                        double dy, std::uint8_t fill) {
  Image out(image.width, image.height, image.channels);
  const double rad = degrees * M_PI / 180.0;
  const double c = std::cos(rad);
  const double s = std::sin(rad);
  const double cx = (image.width - 1) / 2.0;
  const double cy = (image.height - 1) / 2.0;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      // inverse map: undo shift, then undo rotation (y axis points down)
      const double ux = x - dx - cx;
      const double uy = y - dy - cy;
      const double sx = c * ux - s * uy + cx;
      const double sy = s * ux + c * uy + cy;
      for (int ch = 0; ch < image.channels; ++ch)
        out.at(x, y, ch) = to_u8(sample_bilinear(image, sx, sy, ch, fill));
    }
  }
  return out;
}

Image flip_left_right(const Image &image) {
  Image out(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c)
        out.at(x, y, c) = image.at(image.width - 1 - x, y, c);
  return out;
}

Image flip_top_bottom(const Image &image) {
  Image out(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y)
    std::memcpy(&out.pixels[out.index(0, y)],
                &image.pixels[image.index(0, image.height - 1 - y)],
                static_cast<std::size_t>(image.width) * image.channels);
  return out;
}

} // namespace glyphscribe
