#include "itb/csv.hpp"

#include <charconv>
#include <cmath>

#include "itb/errors.hpp"

namespace itb::csv {

std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string write(const std::vector<Row>& rows) {
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i > 0) out += ',';
      out += escape(row[i]);
    }
    out += "\r\n";
  }
  return out;
}

std::vector<Row> parse(std::string_view text) {
  std::vector<Row> rows;
  Row row;
  std::string field;
  bool quoted = false, field_started = false, after_quote = false;
  std::size_t line = 1;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = after_quote = false;
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
    ++line;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
          after_quote = true;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == ',') {
      end_field();
    } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      ++i;
      end_row();
    } else if (c == '\n') {
      end_row();
    } else if (c == '"') {
      if (field_started || after_quote)
        throw IoFailure("csv line " + std::to_string(line) + ": stray quote inside a field");
      quoted = field_started = true;
    } else {
      if (after_quote) throw IoFailure("csv line " + std::to_string(line) + ": text after a closing quote");
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw IoFailure("csv line " + std::to_string(line) + ": unterminated quoted field");
  if (field_started || after_quote || !row.empty()) end_row();
  return rows;
}

std::string number(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double to_double(const std::string& field) {
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size())
    throw IoFailure("csv: '" + field + "' is not a number");
  return v;
}

}  // namespace itb::csv
