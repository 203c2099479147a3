#include "glyphscribe/io.hpp"

#include "glyphscribe/error.hpp"

#include <fstream>
#include <sstream>

namespace glyphscribe::io {

std::string read_text(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(ErrorCode::NotFound, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path &path, const std::string &text) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out)
    fail(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  if (!out)
    fail(ErrorCode::Io, "write failed for " + path.string());
}

nlohmann::json read_json(const std::filesystem::path &path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception &e) {
    fail(ErrorCode::Format, path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path &path, const nlohmann::json &doc) {
  write_text(path, doc.dump() + "\n");
}

void check_header(const nlohmann::json &doc, const std::string &format, int version,
                  const std::string &what) {
  if (!doc.is_object() || doc.value("format", std::string{}) != format)
    fail(ErrorCode::Format, what + " is not a " + format + " document");
  if (doc.value("version", -1) != version)
    fail(ErrorCode::Format, what + " has unsupported version " +
                                std::to_string(doc.value("version", -1)));
}

} // namespace glyphscribe::io
