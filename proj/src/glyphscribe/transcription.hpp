#pragma once

#include "glyphscribe/segmentation.hpp"

#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace glyphscribe::transcription {

enum class Connector { None, Stack, Beside }; // joins a sign to the previous one

struct TokenSign {
  std::string code;
  seg::ComponentBox box;
  Connector connector = Connector::None;
  int source = -1; // caller's index, copied from PlacedSign
};

struct TranscriptionToken {
  std::vector<TokenSign> signs;

  /// MdC rendering: ':' for stack, '*' for beside.
  std::string render() const;
};

/// Tokens joined by '-'.
std::string render_line(const std::vector<TranscriptionToken> &tokens);

struct PlacedSign {
  std::string code;
  seg::ComponentBox box;
  int source = -1;
};

struct LineGeometry {
  double stack_gap = 0.4;     // x median glyph height
  double token_gap = 1.2;     // x median glyph height
  double min_x_overlap = 0.5; // of the narrower extent, for ':'
  double band_overlap = 0.5;  // vertical overlap of the shorter sign, for '*'
  std::set<std::string> excluded = {"N"};

  void validate() const;
};

struct DroppedSign {
  std::string code;
  seg::ComponentBox box;
  std::string reason;
};

struct AssembledLine {
  std::vector<TranscriptionToken> tokens;
  std::vector<DroppedSign> dropped; // audit of excluded codes
};

/// Groups signs sharing a horizontal band with '*', joins bands separated by
/// a small gap and overlapping in x with ':', and starts a new token
/// otherwise. Input must be one column in reading order.
AssembledLine assemble_lines(const std::vector<PlacedSign> &column,
                             const LineGeometry &geometry = {});

enum class ReviewStatus { Auto, Corrected, Confirmed };

std::string to_string(ReviewStatus s);
ReviewStatus review_status_from_string(const std::string &s);

struct TranscriptionRecord {
  std::string support;
  std::string spell;
  std::string column_label;
  int token_index = 0;
  std::string mdc;
  ReviewStatus review_status = ReviewStatus::Auto;

  friend bool operator==(const TranscriptionRecord &, const TranscriptionRecord &) = default;
};

inline constexpr const char *kCsvHeader = "support,spell,column,token_index,mdc,review_status";

/// Records sorted by (column, token_index, support, spell).
std::vector<TranscriptionRecord> sorted_records(std::vector<TranscriptionRecord> records);

/// UTF-8 CSV with LF line endings; throws on a duplicate key.
std::string format_csv(const std::vector<TranscriptionRecord> &records);
/// Writes format_csv to `destination` and returns the byte count.
std::size_t export_csv(const std::vector<TranscriptionRecord> &records,
                       const std::filesystem::path &destination);
std::vector<TranscriptionRecord> parse_csv(const std::string &text);

} // namespace glyphscribe::transcription
