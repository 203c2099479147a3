#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace glyphscribe::csv {

// RFC 4180 fields: quoted only when they contain a comma, quote, CR or LF.
std::string escape(std::string_view field);
std::string format_row(const std::vector<std::string> &fields);

/// Accepts LF or CRLF line endings; a trailing newline does not produce an
/// empty record. Throws Format on an unterminated quoted field.
std::vector<std::vector<std::string>> parse(std::string_view text);

} // namespace glyphscribe::csv
