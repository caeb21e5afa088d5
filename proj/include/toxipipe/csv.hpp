#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace toxipipe::csv {

// Minimal RFC 4180 support: comma separated, double-quote quoting with
// doubled quotes as escape, CRLF or LF line ends.
using Row = std::vector<std::string>;

// Reads one logical record (quoted fields may span lines). Returns nullopt
// at end of input. Throws FormatError on an unterminated quote.
std::optional<Row> read_row(std::istream& in);

std::string quote(std::string_view field);
void write_row(std::ostream& out, const Row& row);

// Index of `name` in a header row, or throws FormatError.
std::size_t column(const Row& header, std::string_view name);

}  // namespace toxipipe::csv
