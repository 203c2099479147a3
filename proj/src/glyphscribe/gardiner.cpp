#include "glyphscribe/gardiner.hpp"

#include "glyphscribe/error.hpp"

#include <cctype>

namespace glyphscribe {

namespace {

// [A-Z][a-z]?[0-9]+[A-Z]?, returns characters consumed or 0.
std::size_t match_simple(std::string_view s) {
  std::size_t i = 0;
  auto upper = [&](std::size_t k) { return k < s.size() && std::isupper(static_cast<unsigned char>(s[k])); };
  auto lower = [&](std::size_t k) { return k < s.size() && std::islower(static_cast<unsigned char>(s[k])); };
  auto digit = [&](std::size_t k) { return k < s.size() && std::isdigit(static_cast<unsigned char>(s[k])); };
  if (!upper(i))
    return 0;
  ++i;
  if (lower(i))
    ++i;
  if (!digit(i))
    return 0;
  while (digit(i))
    ++i;
  if (upper(i))
    ++i;
  return i;
}

} // namespace

bool is_valid_code(std::string_view code) {
  while (true) {
    const std::size_t n = match_simple(code);
    if (n == 0)
      return false;
    if (n == code.size())
      return true;
    if (code[n] != '+')
      return false;
    code.remove_prefix(n + 1);
  }
}

void validate_code(std::string_view code, std::string_view what) {
  if (!is_valid_code(code))
    fail(ErrorCode::InvalidArgument,
         std::string(what) + " '" + std::string(code) +
             "' is not a Gardiner code (expected e.g. A1, Aa15, G17+M17)");
}

std::string code_group(std::string_view code, bool first_letter_only) {
  std::string group;
  for (char c : code) {
    if (!std::isalpha(static_cast<unsigned char>(c)))
      break;
    group.push_back(c);
    if (first_letter_only)
      break;
  }
  return group;
}

} // namespace glyphscribe
