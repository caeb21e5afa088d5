#include "toxipipe/labels.hpp"

#include <string>

#include "toxipipe/error.hpp"

namespace toxipipe {

namespace {
constexpr std::array<std::string_view, kNumClasses> kNames = {"nonmedical_use", "consumption",
                                                              "mention", "unrelated"};
}

std::string_view to_string(LabelClass c) { return kNames[index_of(c)]; }

std::optional<LabelClass> parse_label(std::string_view s) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (kNames[i] == s) return static_cast<LabelClass>(i);
  }
  return std::nullopt;
}

LabelClass require_label(std::string_view s) {
  if (auto c = parse_label(s)) return *c;
  throw FormatError("unknown label '" + std::string(s) +
                    "' (expected nonmedical_use|consumption|mention|unrelated)");
}

}  // namespace toxipipe
