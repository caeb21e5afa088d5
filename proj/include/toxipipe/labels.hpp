#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>

namespace toxipipe {

// The four-class annotation scheme. Declaration order is significant: it
// breaks argmax ties and favors the surveillance class.
enum class LabelClass : std::size_t {
  NonmedicalUse = 0,
  Consumption = 1,
  Mention = 2,
  Unrelated = 3,
};

inline constexpr std::size_t kNumClasses = 4;

inline constexpr std::array<LabelClass, kNumClasses> kAllClasses = {
    LabelClass::NonmedicalUse, LabelClass::Consumption, LabelClass::Mention,
    LabelClass::Unrelated};

constexpr std::size_t index_of(LabelClass c) { return static_cast<std::size_t>(c); }

std::string_view to_string(LabelClass c);

// Accepts the serialized names ("nonmedical_use", ...). Returns nullopt for
// anything else.
std::optional<LabelClass> parse_label(std::string_view s);

// Like parse_label but throws FormatError naming the bad value.
LabelClass require_label(std::string_view s);

}  // namespace toxipipe
