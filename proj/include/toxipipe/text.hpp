#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace toxipipe::text {

// Decodes UTF-8 into Unicode scalar values. Invalid bytes are mapped to
// U+DC80..U+DCFF (one per byte) so distinct garbage stays distinct.
std::u32string decode_utf8(std::string_view s);

void append_utf8(std::string& out, char32_t cp);
std::string encode_utf8(std::u32string_view s);

// Simple lowercase mapping for ASCII, Latin-1, Latin Extended-A, Greek and
// basic Cyrillic. Other scripts pass through unchanged.
char32_t fold_case(char32_t cp);
std::string fold_case(std::string_view s);

// Letters and digits; every non-ASCII scalar that is not whitespace or
// a known symbol counts as alphanumeric so non-Latin words form tokens.
bool is_alnum(char32_t cp);
bool is_space(char32_t cp);

struct Token {
  std::string_view text;
  std::size_t offset = 0;  // byte offset into the source string
};

// Maximal runs of alphanumeric scalars. The "<url>" and "<user>"
// placeholders produced by corpus::normalize are skipped.
std::vector<Token> tokenize(std::string_view s);

// Splits on ASCII whitespace, dropping empty pieces.
std::vector<std::string> split_whitespace(std::string_view s);

std::string_view trim(std::string_view s);

}  // namespace toxipipe::text
