#pragma once

#include <array>
#include <cctype>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace mac {

/// Feature groups, in the order used for inter-group tokens.
enum class Group { Char = 0, Cpu = 1, Memory = 2, Other = 3 };

inline constexpr std::size_t kGroupCount = 4;
inline constexpr std::array<Group, kGroupCount> kAllGroups{Group::Char, Group::Cpu, Group::Memory,
                                                           Group::Other};

inline constexpr std::string_view group_name(Group g) {
  switch (g) {
    case Group::Char: return "Char";
    case Group::Cpu: return "CPU";
    case Group::Memory: return "Memory";
    case Group::Other: return "Other";
  }
  return "?";
}

/// Accepts the canonical names case-insensitively, plus "mem" and "cpu".
inline std::optional<Group> parse_group(std::string_view text) {
  std::string lower;
  for (char ch : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (lower == "char") return Group::Char;
  if (lower == "cpu") return Group::Cpu;
  if (lower == "memory" || lower == "mem") return Group::Memory;
  if (lower == "other") return Group::Other;
  return std::nullopt;
}

inline constexpr std::size_t group_index(Group g) { return static_cast<std::size_t>(g); }

}  // namespace mac
