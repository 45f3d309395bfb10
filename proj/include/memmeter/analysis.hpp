#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "memmeter/attributes.hpp"
#include "memmeter/csv.hpp"
#include "memmeter/error.hpp"
#include "memmeter/metrics.hpp"
#include "memmeter/score_table.hpp"

namespace memmeter {

// Named numeric columns keyed by image id; missing values are nullopt.
struct AttributeTable {
  std::vector<std::string> columns;
  std::map<std::string, std::vector<std::optional<double>>> rows;

  std::optional<std::size_t> column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    return std::nullopt;
  }
};

inline AttributeTable attribute_table(std::span<const std::pair<std::string, AttributeVector>> values) {
  AttributeTable t;
  t.columns = attribute_names();
  for (const auto& [id, a] : values) {
    t.rows[id] = {a.hue, a.saturation, a.value, a.contrast, a.colorfulness, a.entropy};
  }
  return t;
}

inline std::string attribute_table_csv(const AttributeTable& table, const std::vector<std::string>& order) {
  std::ostringstream out;
  out << "image_id";
  for (const auto& c : table.columns) out << ',' << c;
  out << '\n';
  for (const auto& id : order) {
    out << id;
    for (const auto& v : table.rows.at(id)) out << ',' << format_optional(v);
    out << '\n';
  }
  return out.str();
}

// CSV with an "image_id" (or first) column and numeric columns; "n/a" and
// empty cells read as missing.
inline AttributeTable read_attribute_table(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  if (rows.empty() || rows.front().size() < 2) throw data_error(path.string() + ": needs a header with data columns");
  AttributeTable t;
  t.columns.assign(rows.front().begin() + 1, rows.front().end());
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    std::vector<std::optional<double>> values(t.columns.size());
    for (std::size_t c = 0; c < t.columns.size() && c + 1 < row.size(); ++c) {
      const auto& cell = row[c + 1];
      if (cell.empty() || cell == "n/a") continue;
      const auto v = parse_double(cell);
      if (!v) throw data_error(path.string() + ": row " + std::to_string(r + 1) + " has non-numeric " + t.columns[c]);
      values[c] = *v;
    }
    t.rows[row[0]] = std::move(values);
  }
  return t;
}

// Column-wise union of two tables; ids absent on one side get missing values.
inline AttributeTable merge_tables(const AttributeTable& left, const AttributeTable& right) {
  AttributeTable out;
  out.columns = left.columns;
  for (const auto& c : right.columns) {
    out.columns.push_back(left.column_index(c) ? c + "_merged" : c);
  }
  auto fill = [&](const std::string& id) {
    std::vector<std::optional<double>> values(out.columns.size());
    if (auto it = left.rows.find(id); it != left.rows.end())
      std::copy(it->second.begin(), it->second.end(), values.begin());
    if (auto it = right.rows.find(id); it != right.rows.end())
      std::copy(it->second.begin(), it->second.end(), values.begin() + static_cast<std::ptrdiff_t>(left.columns.size()));
    out.rows[id] = std::move(values);
  };
  for (const auto& [id, _] : left.rows) fill(id);
  for (const auto& [id, _] : right.rows) fill(id);
  return out;
}

// ---------------------------------------------------------------------------

struct ScoreGroup {
  std::size_t index = 0;  // 1 = lowest scores
  std::size_t size = 0;
  double mean_score = 0.0;
  std::vector<std::optional<double>> attribute_means;
  std::vector<std::string> ids;
};

struct GroupSummary {
  std::vector<std::string> columns;
  std::vector<ScoreGroup> groups;
};

// Sorts scored images (ties by id) and cuts them into `group_count` groups
// whose sizes differ by at most one; earlier groups take the remainder.
// Only ids present in `attributes` are used unless it has no columns.
inline GroupSummary group_by_decile(const ScoreTable& scores, const AttributeTable& attributes,
                                    std::size_t group_count = 10) {
  std::vector<ScoreRow> rows;
  for (const auto& r : scores.rows) {
    if (attributes.columns.empty() || attributes.rows.contains(r.image_id)) rows.push_back(r);
  }
  if (rows.size() < group_count) {
    throw usage_error("grouping into " + std::to_string(group_count) + " groups needs at least that many images, got " +
                      std::to_string(rows.size()));
  }
  std::sort(rows.begin(), rows.end(), [](const ScoreRow& a, const ScoreRow& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.image_id < b.image_id;
  });
  GroupSummary summary;
  summary.columns = attributes.columns;
  const std::size_t base = rows.size() / group_count, extra = rows.size() % group_count;
  std::size_t pos = 0;
  for (std::size_t g = 0; g < group_count; ++g) {
    ScoreGroup group;
    group.index = g + 1;
    group.size = base + (g < extra ? 1 : 0);
    std::vector<double> sums(attributes.columns.size(), 0.0);
    std::vector<std::size_t> counts(attributes.columns.size(), 0);
    double score_sum = 0.0;
    for (std::size_t i = 0; i < group.size; ++i, ++pos) {
      const auto& r = rows[pos];
      group.ids.push_back(r.image_id);
      score_sum += r.score;
      if (attributes.columns.empty()) continue;
      const auto& values = attributes.rows.at(r.image_id);
      for (std::size_t c = 0; c < values.size(); ++c) {
        if (values[c]) {
          sums[c] += *values[c];
          ++counts[c];
        }
      }
    }
    group.mean_score = score_sum / static_cast<double>(group.size);
    for (std::size_t c = 0; c < sums.size(); ++c) {
      group.attribute_means.push_back(counts[c] ? std::optional<double>(sums[c] / static_cast<double>(counts[c]))
                                                : std::nullopt);
    }
    summary.groups.push_back(std::move(group));
  }
  return summary;
}

// Plot data: one row per (group, attribute).
inline std::string group_plot_csv(const GroupSummary& summary) {
  std::ostringstream out;
  out << "group_index,mean_score,attribute,mean_value\n";
  for (const auto& g : summary.groups) {
    for (std::size_t c = 0; c < summary.columns.size(); ++c) {
      out << g.index << ',' << format_double(g.mean_score) << ',' << summary.columns[c] << ','
          << format_optional(g.attribute_means[c]) << '\n';
    }
  }
  return out.str();
}

inline nlohmann::json to_json_report(const GroupSummary& summary) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : summary.groups) {
    nlohmann::json means = nlohmann::json::object();
    for (std::size_t c = 0; c < summary.columns.size(); ++c) {
      means[summary.columns[c]] = g.attribute_means[c] ? nlohmann::json(*g.attribute_means[c]) : nlohmann::json("n/a");
    }
    groups.push_back({{"group_index", g.index}, {"size", g.size}, {"mean_score", g.mean_score}, {"attribute_means", means}});
  }
  return {{"report", "groups"}, {"groups", groups}};
}

// ---------------------------------------------------------------------------

struct ColumnCorrelation {
  std::string column;
  std::optional<double> rho;  // nullopt = undefined
  std::size_t count = 0;
  std::size_t dropped = 0;  // scored ids without a value in this column
};

struct CorrelationReport {
  std::vector<ColumnCorrelation> columns;
};

// Strength label for |rho|: moderate >= 0.3, weak >= 0.15, very weak >= 0.08.
// Annotation only.
inline std::string correlation_band(std::optional<double> rho) {
  if (!rho) return "n/a";
  const double a = std::abs(*rho);
  if (a >= 0.3) return "moderate";
  if (a >= 0.15) return "weak";
  if (a >= 0.08) return "very weak";
  return "negligible";
}

// Spearman rho of every column against the scores over ids that have both.
inline CorrelationReport correlate(const ScoreTable& scores, const AttributeTable& table) {
  std::size_t shared = 0;
  for (const auto& r : scores.rows) shared += table.rows.contains(r.image_id) ? 1 : 0;
  if (shared == 0) throw usage_error("scores and attribute columns share no image ids");
  CorrelationReport report;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    std::vector<double> xs, ys;
    ColumnCorrelation entry{table.columns[c], std::nullopt, 0, 0};
    for (const auto& r : scores.rows) {
      auto it = table.rows.find(r.image_id);
      if (it == table.rows.end() || !it->second[c]) {
        ++entry.dropped;
        continue;
      }
      xs.push_back(r.score);
      ys.push_back(*it->second[c]);
    }
    entry.count = xs.size();
    if (xs.size() >= 3) entry.rho = spearman(xs, ys);
    report.columns.push_back(std::move(entry));
  }
  return report;
}

// Reference correlations observed at full LaMem scale; documentation only.
inline const std::map<std::string, double>& reference_correlations() {
  static const std::map<std::string, double> ref{
      {"value", -0.40}, {"contrast", -0.33}, {"hue", -0.15}, {"saturation", 0.16}, {"entropy", 0.10}, {"colorfulness", 0.04}};
  return ref;
}

inline nlohmann::json to_json_report(const CorrelationReport& report) {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : report.columns) {
    cols.push_back({{"column", c.column},
                    {"rho", c.rho ? nlohmann::json(*c.rho) : nlohmann::json("n/a")},
                    {"n", c.count},
                    {"dropped", c.dropped},
                    {"band", correlation_band(c.rho)}});
  }
  return {{"report", "correlations"},
          {"reference_full_scale", reference_correlations()},
          {"bands", {{"moderate", ">= 0.3"}, {"weak", "[0.15, 0.3)"}, {"very weak", "[0.08, 0.15)"}}},
          {"columns", cols}};
}

inline std::string correlation_csv(const CorrelationReport& report) {
  std::ostringstream out;
  out << "column,rho,n\n";
  for (const auto& c : report.columns) out << c.column << ',' << format_optional(c.rho) << ',' << c.count << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------

struct LabelStat {
  std::string label;
  double mean_score = 0.0;
  std::size_t count = 0;
};

struct LabelRanking {
  std::vector<LabelStat> ranked;  // highest mean first, ties by label
  std::vector<LabelStat> top;
  std::vector<LabelStat> bottom;  // lowest mean first
};

inline LabelRanking rank_labels(const ScoreTable& scores, const std::map<std::string, std::string>& labels,
                                std::size_t k = 5, std::size_t min_count = 5) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  std::size_t labeled = 0;
  for (const auto& r : scores.rows) {
    auto it = labels.find(r.image_id);
    if (it == labels.end()) continue;
    ++labeled;
    auto& [sum, count] = acc[it->second];
    sum += r.score;
    ++count;
  }
  if (labeled == 0) throw usage_error("no scored image has a label");
  LabelRanking out;
  for (const auto& [label, sc] : acc) {
    if (sc.second < min_count) continue;
    out.ranked.push_back({label, sc.first / static_cast<double>(sc.second), sc.second});
  }
  std::sort(out.ranked.begin(), out.ranked.end(), [](const LabelStat& a, const LabelStat& b) {
    if (a.mean_score != b.mean_score) return a.mean_score > b.mean_score;
    return a.label < b.label;
  });
  const std::size_t kk = std::min(k, out.ranked.size());
  out.top.assign(out.ranked.begin(), out.ranked.begin() + static_cast<std::ptrdiff_t>(kk));
  out.bottom.assign(out.ranked.rbegin(), out.ranked.rbegin() + static_cast<std::ptrdiff_t>(kk));
  return out;
}

inline nlohmann::json to_json_report(const LabelRanking& ranking) {
  auto list = [](const std::vector<LabelStat>& xs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : xs) arr.push_back({{"label", s.label}, {"mean_score", s.mean_score}, {"count", s.count}});
    return arr;
  };
  return {{"report", "labels"}, {"top", list(ranking.top)}, {"bottom", list(ranking.bottom)}, {"ranked", list(ranking.ranked)}};
}

inline std::string label_ranking_csv(const LabelRanking& ranking) {
  std::ostringstream out;
  out << "rank,label,mean_score,count\n";
  for (std::size_t i = 0; i < ranking.ranked.size(); ++i) {
    const auto& s = ranking.ranked[i];
    out << i + 1 << ',' << s.label << ',' << format_double(s.mean_score) << ',' << s.count << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

struct NamedScoreTable {
  std::string run_id;
  ScoreTable table;
};

struct ConsistencyMatrix {
  std::vector<std::string> run_ids;
  std::vector<std::vector<std::optional<double>>> rho;
  std::vector<std::vector<std::size_t>> shared;
};

// Spearman rho between every pair of runs over the ids both runs scored.
inline ConsistencyMatrix consistency_matrix(std::span<const NamedScoreTable> runs) {
  if (runs.size() < 2) throw usage_error("a consistency matrix needs at least two score tables");
  const std::size_t k = runs.size();
  ConsistencyMatrix out;
  out.rho.assign(k, std::vector<std::optional<double>>(k));
  out.shared.assign(k, std::vector<std::size_t>(k, 0));
  std::vector<std::unordered_map<std::string, double>> maps;
  for (const auto& r : runs) {
    out.run_ids.push_back(r.run_id);
    maps.push_back(r.table.as_map());
  }
  for (std::size_t i = 0; i < k; ++i) {
    out.rho[i][i] = 1.0;
    out.shared[i][i] = runs[i].table.size();
    for (std::size_t j = i + 1; j < k; ++j) {
      std::vector<double> xs, ys;
      for (const auto& row : runs[i].table.rows) {
        auto it = maps[j].find(row.image_id);
        if (it == maps[j].end()) continue;
        xs.push_back(row.score);
        ys.push_back(it->second);
      }
      if (xs.empty()) throw usage_error("runs " + runs[i].run_id + " and " + runs[j].run_id + " share no image ids");
      if (xs.size() < 3) throw usage_error("runs " + runs[i].run_id + " and " + runs[j].run_id + " share fewer than 3 ids");
      out.rho[i][j] = out.rho[j][i] = spearman(xs, ys);
      out.shared[i][j] = out.shared[j][i] = xs.size();
    }
  }
  return out;
}

inline std::string consistency_csv(const ConsistencyMatrix& m) {
  std::ostringstream out;
  out << "run";
  for (const auto& id : m.run_ids) out << ',' << id;
  out << '\n';
  for (std::size_t i = 0; i < m.run_ids.size(); ++i) {
    out << m.run_ids[i];
    for (const auto& v : m.rho[i]) out << ',' << format_optional(v);
    out << '\n';
  }
  return out.str();
}

inline nlohmann::json to_json_report(const ConsistencyMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : m.rho) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& v : row) r.push_back(v ? nlohmann::json(*v) : nlohmann::json("n/a"));
    rows.push_back(r);
  }
  return {{"report", "consistency"}, {"runs", m.run_ids}, {"rho", rows}, {"shared", m.shared}};
}

}  // namespace memmeter
