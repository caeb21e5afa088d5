#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace toxipipe {

// Seconds since 1970-01-01T00:00:00Z. All timestamps in the toolkit are UTC
// at one-second resolution.
using UtcSeconds = std::int64_t;

inline constexpr UtcSeconds kSecondsPerDay = 86400;

// Parses ISO-8601 timestamps of the forms
//   YYYY-MM-DD
//   YYYY-MM-DDTHH:MM[:SS[.fff]](Z|+HH:MM|-HH:MM)?
// A missing offset means UTC; fractional seconds are truncated.
// Throws FormatError on anything else or on dates before 1970.
UtcSeconds parse_iso8601(std::string_view text);

// Formats as "YYYY-MM-DDTHH:MM:SSZ".
std::string format_iso8601(UtcSeconds t);

// Days since epoch for a proleptic Gregorian civil date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d);

}  // namespace toxipipe
