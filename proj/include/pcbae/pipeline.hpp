#pragma once

// Scoring a labeled manifest: every pair contributes its defective image
// (ground truth from the label) and its template (ground truth intact).

#include <string>
#include <vector>

#include "pcbae/dataset.hpp"
#include "pcbae/localizer.hpp"
#include "pcbae/metrics.hpp"
#include "pcbae/train.hpp"

namespace pcbae {

/// Entries of split `name`. A manifest without any split tags is treated
/// as one split containing everything.
inline std::vector<ManifestEntry> select_split(const Manifest& m, const std::string& name) {
  const bool unsplit = std::all_of(m.entries.begin(), m.entries.end(), [](const auto& e) { return e.split.empty(); });
  auto out = m.split(unsplit ? "all" : name);
  if (out.empty()) throw DatasetError("manifest has no entries in split '" + name + "'");
  return out;
}

struct BoardScore {
  std::string id;
  std::string source;  // "defective" or "template"
  bool defective = false;  // ground truth
  DiffReport report;
};

inline std::vector<BoardScore> score_boards(const Autoencoder& model, const Manifest& m,
                                            const std::vector<ManifestEntry>& entries, double threshold,
                                            const LocalizerParams& params) {
  for (const auto& e : entries) {
    if (e.label == Label::unknown) {
      throw DatasetError("entry '" + e.id + "' has no label; sweep needs a labeled manifest");
    }
  }
  const std::size_t h = model.config().input_height, w = model.config().input_width;
  std::vector<BoardScore> out;
  for (const auto& e : entries) {
    ImagePair p = load_pair(m, e, h, w);
    out.push_back({e.id, "defective", e.label == Label::defective,
                   inspect(model, p.defective, threshold, params, e.id)});
    out.push_back({e.id, "template", false, inspect(model, p.templ, threshold, params, e.id + "#template")});
  }
  return out;
}

inline std::vector<ScoredSample> scored_samples(const std::vector<BoardScore>& boards) {
  std::vector<ScoredSample> s;
  for (const auto& b : boards) s.push_back({b.report.score, b.defective});
  return s;
}

/// Per-board scores as CSV (id,source,truth,score,verdict).
inline std::string board_scores_csv(const std::vector<BoardScore>& boards) {
  std::string s = "id,source,truth,score,verdict\n";
  char buf[64];
  for (const auto& b : boards) {
    std::snprintf(buf, sizeof buf, "%.17g", b.report.score);
    s += detail::csv_field(b.id) + "," + b.source + "," + (b.defective ? "defective" : "intact") + "," + buf + "," +
         to_string(b.report.verdict) + "\n";
  }
  return s;
}

/// Mean BCE of a checkpointed model on split entries: templates for a
/// phase-A model, noisy defective -> template pairs (fixed noise) otherwise.
inline double evaluate_split_loss(const Autoencoder& model, const std::string& phase, const Manifest& m,
                                  const std::vector<ManifestEntry>& entries, double noise_density,
                                  std::uint64_t seed) {
  const std::size_t h = model.config().input_height, w = model.config().input_width;
  if (phase == "A") return evaluate_loss(model, load_templates(m, entries, h, w));
  return evaluate_loss(model, with_noise(load_pairs(m, entries, h, w), noise_density, seed, 0));
}

}  // namespace pcbae
