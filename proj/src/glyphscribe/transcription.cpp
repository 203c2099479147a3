#include "glyphscribe/transcription.hpp"

#include "glyphscribe/csv.hpp"
#include "glyphscribe/error.hpp"
#include "glyphscribe/gardiner.hpp"
#include "glyphscribe/io.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <tuple>

namespace glyphscribe::transcription {

std::string TranscriptionToken::render() const {
  std::string out;
  for (const auto &s : signs) {
    if (!out.empty())
      out += s.connector == Connector::Beside ? '*' : ':';
    out += s.code;
  }
  return out;
}

std::string render_line(const std::vector<TranscriptionToken> &tokens) {
  std::string out;
  for (const auto &t : tokens) {
    if (!out.empty())
      out += '-';
    out += t.render();
  }
  return out;
}

void LineGeometry::validate() const {
  require(stack_gap >= 0, "stack_gap must be >= 0");
  require(token_gap >= stack_gap, "token_gap must be >= stack_gap");
  require(min_x_overlap >= 0 && min_x_overlap <= 1, "min_x_overlap must be in [0, 1]");
  require(band_overlap > 0 && band_overlap <= 1, "band_overlap must be in (0, 1]");
}

namespace {

struct Band {
  std::vector<const PlacedSign *> signs;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  void add(const PlacedSign *s) {
    if (signs.empty()) {
      x0 = s->box.x0, y0 = s->box.y0, x1 = s->box.x1, y1 = s->box.y1;
    } else {
      x0 = std::min(x0, s->box.x0), y0 = std::min(y0, s->box.y0);
      x1 = std::max(x1, s->box.x1), y1 = std::max(y1, s->box.y1);
    }
    signs.push_back(s);
  }
};

double overlap_fraction(int a0, int a1, int b0, int b1) {
  const int inter = std::min(a1, b1) - std::max(a0, b0);
  const int shorter = std::min(a1 - a0, b1 - b0);
  if (shorter <= 0)
    return 0.0;
  return std::max(0, inter) / static_cast<double>(shorter);
}

} // namespace

AssembledLine assemble_lines(const std::vector<PlacedSign> &column, const LineGeometry &geometry) {
  geometry.validate();
  AssembledLine out;
  std::vector<const PlacedSign *> kept;
  for (const auto &s : column) {
    if (geometry.excluded.count(s.code)) {
      out.dropped.push_back({s.code, s.box, "excluded code"});
      spdlog::info("dropping excluded sign {} at ({}, {})", s.code, s.box.x0, s.box.y0);
      continue;
    }
    validate_code(s.code, "sign code");
    require(s.box.x1 > s.box.x0 && s.box.y1 > s.box.y0, "sign box must have positive area");
    kept.push_back(&s);
  }
  if (kept.empty())
    return out;

  std::vector<int> heights;
  for (const auto *s : kept)
    heights.push_back(s->box.height());
  std::sort(heights.begin(), heights.end());
  const std::size_t n = heights.size();
  const double median_h =
      n % 2 ? heights[n / 2] : 0.5 * (heights[n / 2 - 1] + heights[n / 2]);

  // Horizontal bands: consecutive signs that overlap vertically.
  std::vector<Band> bands;
  for (const auto *s : kept) {
    if (!bands.empty() &&
        overlap_fraction(bands.back().y0, bands.back().y1, s->box.y0, s->box.y1) >=
            geometry.band_overlap) {
      bands.back().add(s);
      continue;
    }
    bands.emplace_back();
    bands.back().add(s);
  }

  const Band *prev = nullptr;
  for (auto &band : bands) {
    std::stable_sort(band.signs.begin(), band.signs.end(),
                     [](const PlacedSign *a, const PlacedSign *b) { return a->box.x0 < b->box.x0; });
    Connector join = Connector::None;
    if (prev) {
      const double gap = band.y0 - prev->y1;
      const bool stacked = gap < geometry.stack_gap * median_h &&
                           overlap_fraction(prev->x0, prev->x1, band.x0, band.x1) >=
                               geometry.min_x_overlap;
      // Anything that is not a tight stack opens a new token, including gaps
      // between stack_gap and token_gap.
      join = stacked ? Connector::Stack : Connector::None;
    }
    if (join == Connector::None)
      out.tokens.emplace_back();
    for (std::size_t i = 0; i < band.signs.size(); ++i) {
      const Connector c = i == 0 ? join : Connector::Beside;
      out.tokens.back().signs.push_back(
          {band.signs[i]->code, band.signs[i]->box, c, band.signs[i]->source});
    }
    prev = &band;
  }
  return out;
}

std::string to_string(ReviewStatus s) {
  switch (s) {
  case ReviewStatus::Auto:
    return "auto";
  case ReviewStatus::Corrected:
    return "corrected";
  case ReviewStatus::Confirmed:
    return "confirmed";
  }
  return "auto";
}

ReviewStatus review_status_from_string(const std::string &s) {
  if (s == "auto")
    return ReviewStatus::Auto;
  if (s == "corrected")
    return ReviewStatus::Corrected;
  if (s == "confirmed")
    return ReviewStatus::Confirmed;
  fail(ErrorCode::Format, "unknown review status '" + s + "'");
}

namespace {

auto key(const TranscriptionRecord &r) {
  return std::tie(r.column_label, r.token_index, r.support, r.spell);
}

std::string describe_key(const TranscriptionRecord &r) {
  return "(support=" + r.support + ", spell=" + r.spell + ", column=" + r.column_label +
         ", token_index=" + std::to_string(r.token_index) + ")";
}

void check_unique(const std::vector<TranscriptionRecord> &sorted) {
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (key(sorted[i - 1]) == key(sorted[i]))
      fail(ErrorCode::Conflict, "duplicate transcription key " + describe_key(sorted[i]));
}

} // namespace

std::vector<TranscriptionRecord> sorted_records(std::vector<TranscriptionRecord> records) {
  std::stable_sort(records.begin(), records.end(),
                   [](const auto &a, const auto &b) { return key(a) < key(b); });
  return records;
}

std::string format_csv(const std::vector<TranscriptionRecord> &records) {
  const auto sorted = sorted_records(records);
  check_unique(sorted);
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto &r : sorted) {
    require(r.token_index >= 0, "token_index must be >= 0");
    out += csv::format_row({r.support, r.spell, r.column_label, std::to_string(r.token_index),
                            r.mdc, to_string(r.review_status)});
    out += '\n';
  }
  return out;
}

std::size_t export_csv(const std::vector<TranscriptionRecord> &records,
                       const std::filesystem::path &destination) {
  const std::string text = format_csv(records);
  io::write_text(destination, text);
  return text.size();
}

std::vector<TranscriptionRecord> parse_csv(const std::string &text) {
  const auto rows = csv::parse(text);
  if (rows.empty() || csv::format_row(rows.front()) != kCsvHeader)
    fail(ErrorCode::Format, std::string("CSV header must be '") + kCsvHeader + "'");
  std::vector<TranscriptionRecord> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto &row = rows[i];
    if (row.size() != 6)
      fail(ErrorCode::Format, "CSV record " + std::to_string(i) + " has " +
                                  std::to_string(row.size()) + " fields, expected 6");
    TranscriptionRecord r;
    r.support = row[0];
    r.spell = row[1];
    r.column_label = row[2];
    const auto &idx = row[3];
    const auto [ptr, ec] = std::from_chars(idx.data(), idx.data() + idx.size(), r.token_index);
    if (ec != std::errc{} || ptr != idx.data() + idx.size() || idx.empty() || r.token_index < 0)
      fail(ErrorCode::Format, "CSV record " + std::to_string(i) + " has a bad token_index '" +
                                  idx + "'");
    r.mdc = row[4];
    r.review_status = review_status_from_string(row[5]);
    out.push_back(std::move(r));
  }
  check_unique(sorted_records(out));
  return out;
}

} // namespace glyphscribe::transcription
