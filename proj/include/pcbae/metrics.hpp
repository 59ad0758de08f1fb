#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcbae/tensor.hpp"

namespace pcbae {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t p() const { return tp + fn; }
  std::uint64_t n() const { return tn + fp; }
  std::uint64_t total() const { return p() + n(); }

  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Each metric is empty when its denominator is zero.
struct Metrics {
  std::optional<double> recall;
  std::optional<double> precision;
  std::optional<double> selectivity;
  std::optional<double> accuracy;
  std::optional<double> f_score;

  bool any_undefined() const {
    return !recall || !precision || !selectivity || !accuracy || !f_score;
  }
};

inline std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

inline Metrics metrics(const ConfusionCounts& c) {
  Metrics m;
  m.recall = ratio(c.tp, c.p());
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.selectivity = ratio(c.tn, c.n());
  m.accuracy = ratio(c.tp + c.tn, c.total());
  if (m.precision && m.recall && *m.precision + *m.recall > 0.0) {
    m.f_score = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
  }
  return m;
}

struct ScoredSample {
  double score = 0.0;
  bool defective = false;  // ground truth
};

struct SweepRow {
  double threshold = 0.0;
  ConfusionCounts counts;
  Metrics metrics;
};

struct SweepTable {
  std::vector<SweepRow> rows;
  std::optional<std::size_t> best_row;  // highest accuracy, first on ties

  std::optional<double> best_threshold() const {
    if (!best_row) return std::nullopt;
    return rows[*best_row].threshold;
  }
};

inline const std::vector<double>& default_thresholds() {
  static const std::vector<double> t{50.0, 100.0, 150.0, 200.0};
  return t;
}

/// Metrics for each threshold with verdict = score > threshold * area_scale.
inline SweepTable sweep_thresholds(const std::vector<ScoredSample>& samples,
                                   const std::vector<double>& thresholds, double area_scale = 1.0) {
  if (samples.empty()) throw Error("sweep_thresholds: no scored samples");
  if (thresholds.empty()) throw Error("sweep_thresholds: no thresholds");
  SweepTable t;
  for (double th : thresholds) {
    SweepRow row;
    row.threshold = th;
    const double cut = th * area_scale;
    for (const auto& s : samples) {
      const bool flagged = s.score > cut;
      if (s.defective) (flagged ? row.counts.tp : row.counts.fn)++;
      else (flagged ? row.counts.fp : row.counts.tn)++;
    }
    row.metrics = metrics(row.counts);
    if (row.metrics.accuracy &&
        (!t.best_row || *row.metrics.accuracy > *t.rows[*t.best_row].metrics.accuracy)) {
      t.best_row = t.rows.size();
    }
    t.rows.push_back(row);
  }
  return t;
}

enum class TableFormat { csv, json, markdown };

inline constexpr const char* kSweepCsvHeader = "threshold,recall,precision,selectivity,accuracy,f_score";

namespace detail {

inline std::string fmt_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v, bool full) {
  if (!v) return "undefined";
  if (full) return fmt_full(*v);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

inline nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace detail

/// Render the sweep table. CSV and JSON keep full precision; markdown rounds
/// to three decimals. Undefined metrics print as "undefined" (CSV, markdown)
/// or null (JSON).
inline std::string emit_table(const SweepTable& table, TableFormat format) {
  std::ostringstream os;
  switch (format) {
    case TableFormat::csv:
      os << kSweepCsvHeader << '\n';
      for (const auto& r : table.rows) {
        const auto& m = r.metrics;
        os << detail::fmt_full(r.threshold) << ',' << detail::fmt_opt(m.recall, true) << ','
           << detail::fmt_opt(m.precision, true) << ',' << detail::fmt_opt(m.selectivity, true) << ','
           << detail::fmt_opt(m.accuracy, true) << ',' << detail::fmt_opt(m.f_score, true) << '\n';
      }
      break;
    case TableFormat::json: {
      nlohmann::ordered_json rows = nlohmann::ordered_json::array();
      for (const auto& r : table.rows) {
        const auto& m = r.metrics;
        rows.push_back({{"threshold", r.threshold},
                        {"recall", detail::opt_json(m.recall)},
                        {"precision", detail::opt_json(m.precision)},
                        {"selectivity", detail::opt_json(m.selectivity)},
                        {"accuracy", detail::opt_json(m.accuracy)},
                        {"f_score", detail::opt_json(m.f_score)},
                        {"tp", r.counts.tp},
                        {"fp", r.counts.fp},
                        {"tn", r.counts.tn},
                        {"fn", r.counts.fn}});
      }
      nlohmann::ordered_json j;
      j["rows"] = std::move(rows);
      j["best_threshold"] = table.best_threshold() ? nlohmann::ordered_json(*table.best_threshold())
                                                   : nlohmann::ordered_json(nullptr);
      os << j.dump(2) << '\n';
      break;
    }
    case TableFormat::markdown:
      os << "| Threshold | recall | precision | selectivity | accuracy | F-score |\n";
      os << "|---|---|---|---|---|---|\n";
      for (const auto& r : table.rows) {
        const auto& m = r.metrics;
        os << "| " << detail::fmt_full(r.threshold) << " | " << detail::fmt_opt(m.recall, false) << " | "
           << detail::fmt_opt(m.precision, false) << " | " << detail::fmt_opt(m.selectivity, false) << " | "
           << detail::fmt_opt(m.accuracy, false) << " | " << detail::fmt_opt(m.f_score, false) << " |\n";
      }
      break;
  }
  return os.str();
}

}  // namespace pcbae
