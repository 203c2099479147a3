#pragma once

#include "glyphscribe/error.hpp"
#include "glyphscribe/image.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string &tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("glyphscribe_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;

  const std::filesystem::path &path() const { return path_; }
  std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline glyphscribe::Image random_image(int w, int h, std::mt19937_64 &rng) {
  glyphscribe::Image img(w, h, 1);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto &p : img.pixels)
    p = static_cast<std::uint8_t>(d(rng));
  return img;
}

template <typename F> glyphscribe::ErrorCode error_code_of(F &&f) {
  try {
    f();
  } catch (const glyphscribe::Error &e) {
    return e.code();
  }
  FAIL("expected a glyphscribe::Error");
  return glyphscribe::ErrorCode::InvalidArgument;
}

template <typename F> std::string error_message_of(F &&f) {
  try {
    f();
  } catch (const glyphscribe::Error &e) {
    return e.what();
  }
  FAIL("expected a glyphscribe::Error");
  return {};
}

} // namespace testing

#define CHECK_ERROR(expr, code) CHECK(::testing::error_code_of([&] { (void)(expr); }) == (code))
