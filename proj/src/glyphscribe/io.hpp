#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>

namespace glyphscribe::io {

std::string read_text(const std::filesystem::path &path);
void write_text(const std::filesystem::path &path, const std::string &text);
nlohmann::json read_json(const std::filesystem::path &path);
void write_json(const std::filesystem::path &path, const nlohmann::json &doc);

/// Throws Format unless doc["format"] == format and doc["version"] == version.
void check_header(const nlohmann::json &doc, const std::string &format, int version,
                  const std::string &what);

} // namespace glyphscribe::io
