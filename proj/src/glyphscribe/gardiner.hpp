#pragma once

#include <string>
#include <string_view>

namespace glyphscribe {

/// True for a Gardiner/MdC code such as "A1", "Aa15", "T9D" or a
/// '+'-joined composite such as "G17+M17".
bool is_valid_code(std::string_view code);

/// Throws InvalidArgument naming `what` when `code` is not a valid code.
void validate_code(std::string_view code, std::string_view what = "code");

/// Alphabetic prefix of the (first) sign: "Aa15" -> "Aa", "G17+M17" -> "G".
/// With `first_letter_only`, "Aa15" -> "A".
std::string code_group(std::string_view code, bool first_letter_only = false);

} // namespace glyphscribe
