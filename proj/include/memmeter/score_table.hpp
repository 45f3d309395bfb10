#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "memmeter/csv.hpp"
#include "memmeter/error.hpp"

namespace memmeter {

struct ScoreRow {
  std::string image_id;
  double score = 0.0;
};

// Image id -> score in [0, 1] with provenance. Tables read from plain
// two-column CSVs (predictions, external columns) leave provenance empty.
struct ScoreTable {
  std::vector<ScoreRow> rows;
  std::size_t m_effective = 0;
  std::string config_hash;
  std::string machine;
  std::uint64_t base_seed = 0;

  std::size_t size() const { return rows.size(); }

  std::unordered_map<std::string, double> as_map() const {
    std::unordered_map<std::string, double> out;
    for (const auto& r : rows) out.emplace(r.image_id, r.score);
    return out;
  }

  std::optional<double> find(const std::string& id) const {
    for (const auto& r : rows)
      if (r.image_id == id) return r.score;
    return std::nullopt;
  }
};

inline const char* kScoreCsvHeader = "image_id,score,m_effective,machine,config_hash,base_seed";

inline std::string score_table_csv(const ScoreTable& table) {
  std::ostringstream out;
  out << kScoreCsvHeader << '\n';
  for (const auto& r : table.rows) {
    out << r.image_id << ',' << format_double(r.score) << ',' << table.m_effective << ',' << table.machine << ','
        << table.config_hash << ',' << table.base_seed << '\n';
  }
  return out.str();
}

// Reads any CSV whose first column is an image id and second a numeric
// score, with a header row. Provenance columns are picked up when present.
inline ScoreTable read_score_table(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  if (rows.empty()) throw data_error(path.string() + ": empty score file");
  const auto& header = rows.front();
  if (header.size() < 2) throw data_error(path.string() + ": score file needs image_id and score columns");
  auto column = [&header](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  };
  ScoreTable table;
  const auto m_col = column("m_effective");
  const auto machine_col = column("machine");
  const auto hash_col = column("config_hash");
  const auto seed_col = column("base_seed");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() < 2) throw data_error(path.string() + ": short row " + std::to_string(r + 1));
    const auto score = parse_double(row[1]);
    if (!score || !std::isfinite(*score)) {
      throw data_error(path.string() + ": row " + std::to_string(r + 1) + " has a non-numeric score");
    }
    table.rows.push_back({row[0], *score});
    if (r == 1) {
      if (m_col && *m_col < row.size()) table.m_effective = std::stoul(row[*m_col]);
      if (machine_col && *machine_col < row.size()) table.machine = row[*machine_col];
      if (hash_col && *hash_col < row.size()) table.config_hash = row[*hash_col];
      if (seed_col && *seed_col < row.size()) table.base_seed = std::stoull(row[*seed_col]);
    }
  }
  return table;
}

}  // namespace memmeter
