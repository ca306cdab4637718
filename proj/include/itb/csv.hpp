#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace itb::csv {

using Row = std::vector<std::string>;

// Quotes a field when it contains a comma, quote, CR or LF.
std::string escape(std::string_view field);

// RFC 4180: CRLF record separators, trailing CRLF after the last record.
std::string write(const std::vector<Row>& rows);

// Accepts CRLF or LF separators. Throws IoFailure on an unterminated quote or
// a quote in the middle of an unquoted field.
std::vector<Row> parse(std::string_view text);

// Shortest decimal form that reads back to the same double.
std::string number(double v);
double to_double(const std::string& field);

}  // namespace itb::csv
