#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "memmeter/error.hpp"
#include "memmeter/machine.hpp"

namespace memmeter {

// Parameter checkpoint layout (all integers little-endian):
//   "MMT1"
//   repeated until EOF:
//     u32 name_length, name bytes, u32 rank, u64 dims[rank], f64 values[prod(dims)]
struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

namespace detail {

template <typename T>
void put_le(std::ostream& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((value >> (8 * i)) & 0xff));
}

class LeReader {
 public:
  explicit LeReader(std::istream& in) : in_(in) {}

  std::uint64_t offset() const { return offset_; }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

  template <typename T>
  T get(const char* what) {
    T value = 0;
    const auto start = offset_;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      const int c = in_.get();
      if (c == std::char_traits<char>::eof()) throw format_error(std::string("truncated checkpoint reading ") + what, start);
      value |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * i);
      ++offset_;
    }
    return value;
  }

  std::string bytes(std::size_t count, const char* what) {
    std::string s(count, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in_.gcount()) != count)
      throw format_error(std::string("truncated checkpoint reading ") + what, offset_ + in_.gcount());
    offset_ += count;
    return s;
  }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const std::vector<NamedArray>& arrays) {
  out.write("MMT1", 4);
  for (const auto& a : arrays) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) detail::put_le<std::uint64_t>(out, d);
    for (double v : a.values) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
}

inline std::vector<NamedArray> read_checkpoint(std::istream& in) {
  detail::LeReader reader(in);
  if (reader.bytes(4, "magic") != "MMT1") throw format_error("bad checkpoint magic, expected MMT1", 0);
  std::vector<NamedArray> arrays;
  while (!reader.at_end()) {
    NamedArray a;
    const auto name_len = reader.get<std::uint32_t>("name length");
    if (name_len > (1u << 16)) throw format_error("implausible parameter name length", reader.offset() - 4);
    a.name = reader.bytes(name_len, "name");
    const auto rank = reader.get<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) throw format_error("implausible rank for " + a.name, reader.offset() - 4);
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = reader.get<std::uint64_t>("dimension");
      if (d == 0 || d > (1ull << 32)) throw format_error("bad dimension for " + a.name, reader.offset() - 8);
      a.shape.push_back(static_cast<std::size_t>(d));
      count *= d;
    }
    a.values.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) a.values.push_back(std::bit_cast<double>(reader.get<std::uint64_t>("values")));
    arrays.push_back(std::move(a));
  }
  return arrays;
}

inline std::vector<NamedArray> export_parameters(const Machine& machine) {
  std::vector<NamedArray> out;
  for (const auto& [name, t] : machine.named_parameters()) {
    out.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
  }
  return out;
}

// Copies checkpoint values into `machine`. Names and shapes must match exactly.
inline void import_parameters(Machine& machine, const std::vector<NamedArray>& arrays) {
  auto params = machine.named_parameters();
  if (params.size() != arrays.size()) {
    throw config_error("checkpoint has " + std::to_string(arrays.size()) + " parameters, machine expects " +
                       std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, tensor] = params[i];
    if (arrays[i].name != name || arrays[i].shape != tensor.shape()) {
      throw config_error("checkpoint parameter " + arrays[i].name + shape_to_string(arrays[i].shape) +
                         " does not match " + name + shape_to_string(tensor.shape()));
    }
    std::copy(arrays[i].values.begin(), arrays[i].values.end(), tensor.data().begin());
  }
}

inline void save_checkpoint(const Machine& machine, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot open " + path + " for writing");
  write_checkpoint(out, export_parameters(machine));
  if (!out) throw data_error("failed writing " + path);
}

inline void load_checkpoint(Machine& machine, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open checkpoint " + path);
  import_parameters(machine, read_checkpoint(in));
}

}  // namespace memmeter
