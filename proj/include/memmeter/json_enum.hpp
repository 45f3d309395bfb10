#pragma once

#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "memmeter/error.hpp"

// Enum <-> JSON string mapping that rejects unknown names instead of falling
// back to the first enumerator.
#define MEMMETER_JSON_ENUM(ENUM_TYPE, ...)                                                        \
  inline const auto& json_names(ENUM_TYPE) {                                                      \
    static const std::pair<ENUM_TYPE, const char*> table[] = __VA_ARGS__;                         \
    return table;                                                                                 \
  }                                                                                               \
  inline void to_json(nlohmann::json& j, const ENUM_TYPE& e) {                                    \
    for (const auto& [value, name] : json_names(ENUM_TYPE{}))                                     \
      if (value == e) {                                                                           \
        j = name;                                                                                 \
        return;                                                                                   \
      }                                                                                           \
    throw config_error("unnamed " #ENUM_TYPE " value");                                           \
  }                                                                                               \
  inline void from_json(const nlohmann::json& j, ENUM_TYPE& e) {                                  \
    const std::string text = j.is_string() ? j.get<std::string>() : j.dump();                     \
    std::string expected;                                                                         \
    for (const auto& [value, name] : json_names(ENUM_TYPE{})) {                                   \
      if (text == name) {                                                                         \
        e = value;                                                                                \
        return;                                                                                   \
      }                                                                                           \
      expected += expected.empty() ? name : std::string(", ") + name;                             \
    }                                                                                             \
    throw config_error("unknown " #ENUM_TYPE " '" + text + "' (expected one of: " + expected + ")"); \
  }
