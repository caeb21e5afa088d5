#include <gtest/gtest.h>

#include <sstream>

#include "support/gen.hpp"
#include "support/tempdir.hpp"
#include "toxipipe/csv.hpp"
#include "toxipipe/error.hpp"
#include "toxipipe/hashing.hpp"
#include "toxipipe/labels.hpp"
#include "toxipipe/text.hpp"
#include "toxipipe/time.hpp"

#include <fstream>

using namespace toxipipe;

TEST(Text, Utf8RoundTrip) {
  const std::string s = "a\xC3\xA9\xE2\x84\xA2\xF0\x9F\x98\x80";
  const auto u = text::decode_utf8(s);
  ASSERT_EQ(u.size(), 4u);
  EXPECT_EQ(u[2], U'™');
  EXPECT_EQ(text::encode_utf8(u), s);
}

TEST(Text, FoldCase) {
  EXPECT_EQ(text::fold_case("XaNaX"), "xanax");
  EXPECT_EQ(text::fold_case("\xC3\x89T\xC3\x89"), "\xC3\xA9t\xC3\xA9");  // ÉTÉ
  EXPECT_EQ(text::fold_case(U'Ÿ'), U'ÿ');
}

TEST(Text, TokenizeReportsByteOffsets) {
  const std::string s = "took xanaxx, today!";
  const auto toks = text::tokenize(s);
  ASSERT_EQ(toks.size(), 3u);
  EXPECT_EQ(toks[1].text, "xanaxx");
  EXPECT_EQ(toks[1].offset, 5u);
  EXPECT_EQ(s.substr(toks[2].offset, toks[2].text.size()), "today");
}

TEST(Text, Trim) {
  EXPECT_EQ(text::trim("  a b \t\n"), "a b");
  EXPECT_EQ(text::trim("   "), "");
}

TEST(Time, Iso8601RoundTrip) {
  EXPECT_EQ(parse_iso8601("1970-01-01T00:00:00Z"), 0);
  EXPECT_EQ(parse_iso8601("2024-03-01T12:30:05Z"), days_from_civil(2024, 3, 1) * kSecondsPerDay + 45005);
  gen::Source g(21);
  for (int i = 0; i < 1000; ++i) {
    const UtcSeconds t = g.between(0, 4102444800);
    EXPECT_EQ(parse_iso8601(format_iso8601(t)), t);
  }
  EXPECT_THROW(parse_iso8601("2024-13-01T00:00:00Z"), FormatError);
  EXPECT_THROW(parse_iso8601("yesterday"), FormatError);
}

TEST(Time, DaysFromCivilMatchesDayCounting) {
  std::int64_t days = 0;
  const unsigned month_len[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  for (std::int64_t y = 1970; y < 2100; ++y) {
    for (unsigned m = 1; m <= 12; ++m) {
      EXPECT_EQ(days_from_civil(y, m, 1), days);
      const bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
      days += month_len[m - 1] + (m == 2 && leap ? 1 : 0);
    }
  }
}

TEST(Labels, ParseAndPrint) {
  for (auto c : kAllClasses) EXPECT_EQ(parse_label(to_string(c)), c);
  EXPECT_EQ(to_string(LabelClass::NonmedicalUse), "nonmedical_use");
  EXPECT_FALSE(parse_label("recreational"));
  EXPECT_THROW(require_label("bogus"), FormatError);
}

TEST(Csv, QuotesAndRoundTrips) {
  gen::Source g(22);
  for (int i = 0; i < 300; ++i) {
    csv::Row row;
    const std::size_t n = 1 + g.below(5);
    for (std::size_t k = 0; k < n; ++k) {
      std::string f = g.word(4);
      if (g.coin(0.2)) f += ",";
      if (g.coin(0.2)) f += "\"q\"";
      if (g.coin(0.1)) f += "\nline";
      row.push_back(f);
    }
    std::stringstream buf;
    csv::write_row(buf, row);
    const auto back = csv::read_row(buf);
    ASSERT_TRUE(back);
    EXPECT_EQ(*back, row);
  }
  EXPECT_EQ(csv::quote("plain"), "plain");
  EXPECT_EQ(csv::quote("a,b"), "\"a,b\"");
}

TEST(Hashing, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  TempDir dir;
  std::ofstream(dir / "f") << "abc";
  EXPECT_EQ(sha256_file(dir / "f"), sha256_hex("abc"));
  EXPECT_THROW(sha256_file(dir / "missing"), IoError);
}
