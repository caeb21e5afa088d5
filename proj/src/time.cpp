#include "toxipipe/time.hpp"

#include <charconv>
#include <cstdio>

#include "toxipipe/error.hpp"

namespace toxipipe {

namespace {

// Civil-from-days and days-from-civil after H. Hinnant's public domain
// date algorithms.
void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y += (m <= 2);
}

bool is_leap(std::int64_t y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

unsigned days_in_month(std::int64_t y, unsigned m) {
  static constexpr unsigned kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  return m == 2 && is_leap(y) ? 29 : kDays[m - 1];
}

class Cursor {
 public:
  explicit Cursor(std::string_view s) : s_(s) {}

  int digits(std::size_t n) {
    if (pos_ + n > s_.size()) fail();
    int value = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const char c = s_[pos_ + i];
      if (c < '0' || c > '9') fail();
      value = value * 10 + (c - '0');
    }
    pos_ += n;
    return value;
  }

  bool accept(char c) {
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) fail();
  }

  bool done() const { return pos_ == s_.size(); }
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }

  [[noreturn]] void fail() const {
    throw FormatError("invalid ISO-8601 timestamp: '" + std::string(s_) + "'");
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

UtcSeconds parse_iso8601(std::string_view text) {
  Cursor c(text);
  const int year = c.digits(4);
  c.expect('-');
  const int month = c.digits(2);
  c.expect('-');
  const int day = c.digits(2);
  if (month < 1 || month > 12 || day < 1 ||
      static_cast<unsigned>(day) > days_in_month(year, static_cast<unsigned>(month))) {
    c.fail();
  }
  int hour = 0, minute = 0, second = 0;
  int offset_seconds = 0;
  if (!c.done()) {
    if (!c.accept('T') && !c.accept(' ')) c.fail();
    hour = c.digits(2);
    c.expect(':');
    minute = c.digits(2);
    if (c.accept(':')) {
      second = c.digits(2);
      if (c.accept('.')) {
        std::size_t n = 0;
        while (c.peek() >= '0' && c.peek() <= '9') {
          c.digits(1);
          ++n;
        }
        if (n == 0) c.fail();
      }
    }
    if (hour > 23 || minute > 59 || second > 60) c.fail();
    if (c.accept('Z')) {
    } else if (c.peek() == '+' || c.peek() == '-') {
      const int sign = c.accept('+') ? 1 : (c.expect('-'), -1);
      const int oh = c.digits(2);
      c.accept(':');
      const int om = c.digits(2);
      if (oh > 23 || om > 59) c.fail();
      offset_seconds = sign * (oh * 3600 + om * 60);
    }
    if (!c.done()) c.fail();
  }
  const std::int64_t days =
      days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
  const UtcSeconds t = days * kSecondsPerDay + hour * 3600 + minute * 60 + second - offset_seconds;
  if (t < 0) {
    throw FormatError("timestamp before 1970-01-01: '" + std::string(text) + "'");
  }
  return t;
}

std::string format_iso8601(UtcSeconds t) {
  std::int64_t days = t / kSecondsPerDay;
  std::int64_t rem = t % kSecondsPerDay;
  if (rem < 0) {
    rem += kSecondsPerDay;
    --days;
  }
  std::int64_t y = 0;
  unsigned m = 0, d = 0;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld:%02lldZ",
                static_cast<long long>(y), m, d, static_cast<long long>(rem / 3600),
                static_cast<long long>(rem / 60 % 60), static_cast<long long>(rem % 60));
  return buf;
}

}  // namespace toxipipe
