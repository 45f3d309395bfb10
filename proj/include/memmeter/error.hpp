#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace memmeter {

// Invalid configuration or shape contract (exit code 2 in the CLI).
class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse: calling an operation outside its preconditions.
class usage_error : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite values where finite ones are required.
class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data that is missing, too small, or inconsistent (exit code 3).
class data_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file contents. Carries the byte offset where parsing failed.
class format_error : public data_error {
 public:
  format_error(const std::string& what, std::uint64_t offset)
      : data_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// No usable episode survived the measurement (exit code 4).
class measurement_failure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace memmeter
