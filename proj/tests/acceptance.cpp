// Acceptance run: one PASS/FAIL/SKIP line per criterion, exit status 1 if
// any criterion fails. Usage: acceptance [--work-dir DIR] [--only N,...]

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "pcbae/pcbae.hpp"

namespace fs = std::filesystem;
using namespace pcbae;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTolerance = 1e-3;
constexpr std::size_t kMinGradCases = 20;
constexpr double kGradBudgetSeconds = 30.0;
constexpr double kConvTolerance = 1e-5;
constexpr double kSsimOracleTolerance = 1e-6;
constexpr double kOracleBudgetSeconds = 60.0;
constexpr double kClosedFormTolerance = 1e-7;
constexpr float kIdentityTolerance = 1.1920929e-7f;  // float epsilon
constexpr double kMinAccuracy = 0.90;
constexpr double kMinLocalized = 0.80;
constexpr std::size_t kMinDefectArea = 25;

// Desk-scale run.
constexpr std::uint64_t kSeed = 2024;
constexpr std::size_t kPairs = 200;
constexpr std::size_t kSize = 128;
constexpr std::size_t kEpochs = 10;
const std::vector<std::uint64_t> kTransferSeeds{kSeed, 2025, 2026};

struct Outcome {
  enum class Status { pass, fail, skip } status = Status::fail;
  std::string detail;
};

Outcome pass(std::string d) { return {Outcome::Status::pass, std::move(d)}; }
Outcome fail(std::string d) { return {Outcome::Status::fail, std::move(d)}; }
Outcome skip(std::string d) { return {Outcome::Status::skip, std::move(d)}; }
Outcome verdict(bool ok, std::string d) { return ok ? pass(std::move(d)) : fail(std::move(d)); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void progress(const std::string& s) {
  std::fprintf(stderr, "[acceptance] %s\n", s.c_str());
  std::fflush(stderr);
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cases = gradcheck::run_suite(20240501);
  const double elapsed = seconds_since(t0);
  double worst = 0;
  std::string worst_name;
  for (const auto& c : cases) {
    if (!(c.error <= worst)) {
      worst = c.error;
      worst_name = c.name;
    }
  }
  const bool ok = cases.size() >= kMinGradCases && worst <= kGradTolerance && elapsed < kGradBudgetSeconds;
  return verdict(ok, fmt("%zu cases, worst relative error %.3g (%s), %.2f s", cases.size(), worst,
                         worst_name.c_str(), elapsed));
}

Outcome oracle_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 gen(77);
  std::vector<std::string> problems;

  double conv_worst = 0;
  const std::vector<std::pair<ConvSpec, Shape>> convs{
      {ConvSpec::same(1, 16, 3), {2, 1, 32, 32}},  {ConvSpec::same(16, 32, 3), {1, 16, 16, 16}},
      {ConvSpec::same(3, 2, 5), {2, 3, 9, 11}},    {ConvSpec{2, 3, {3, 3}, {2, 2}, {1, 1}}, {1, 2, 10, 7}},
      {ConvSpec{2, 2, {1, 3}, {1, 2}, {0, 1}}, {3, 2, 6, 8}}, {ConvSpec::same(64, 64, 3), {1, 64, 16, 16}},
      {ConvSpec::same(16, 1, 3), {2, 16, 64, 64}},
  };
  for (const auto& [spec, shape] : convs) {
    const Tensor x = oracle::random_tensor(shape, gen);
    const Tensor w = oracle::random_tensor(spec.weight_shape(), gen);
    const Tensor b = oracle::random_tensor({spec.out_channels}, gen);
    const Tensor fast = conv2d_forward(x, w, b, spec), ref = oracle::conv2d(x, w, b, spec);
    for (std::size_t i = 0; i < ref.size(); ++i) conv_worst = std::max(conv_worst, double(std::abs(fast[i] - ref[i])));
  }
  if (conv_worst > kConvTolerance) problems.push_back(fmt("conv2d abs error %.3g", conv_worst));

  std::size_t ccl_mismatch = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t h = 1 + gen() % 40, w = 1 + gen() % 40;
    std::bernoulli_distribution on(0.05 + 0.6 * (trial % 7) / 6.0);
    Tensor m({1, h, w});
    for (float& v : m.values()) v = on(gen) ? 1.0f : 0.0f;
    const Labeling l = label_components(m);
    const auto f = oracle::flood_fill(m, h, w);
    bool same = l.labels == f.labels && l.components.size() == f.areas.size();
    for (std::size_t i = 0; same && i < f.areas.size(); ++i) same = l.components[i].area == f.areas[i];
    ccl_mismatch += !same;
  }
  if (ccl_mismatch) problems.push_back(fmt("%zu labeling mismatches", ccl_mismatch));

  std::size_t metric_mismatch = 0;
  std::uniform_real_distribution<double> score(0, 300);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<ScoredSample> s(1 + gen() % 40);
    for (auto& x : s) x = {std::floor(score(gen)), gen() % 2 == 0};
    const SweepTable t = sweep_thresholds(s, default_thresholds(), trial % 2 ? 1.0 : 1.0 / 16.0);
    for (const auto& row : t.rows) {
      const auto r = oracle::recount(s, row.threshold * (trial % 2 ? 1.0 : 1.0 / 16.0));
      const Metrics m = row.metrics;
      bool same = row.counts == ConfusionCounts{r.tp, r.fp, r.tn, r.fn};
      same = same && *m.accuracy == double(r.tp + r.tn) / double(s.size());
      if (r.tp + r.fn) same = same && *m.recall == double(r.tp) / double(r.tp + r.fn);
      if (r.tp + r.fp) same = same && *m.precision == double(r.tp) / double(r.tp + r.fp);
      if (r.tn + r.fp) same = same && *m.selectivity == double(r.tn) / double(r.tn + r.fp);
      metric_mismatch += !same;
    }
  }
  if (metric_mismatch) problems.push_back(fmt("%zu metric rows differ from recount", metric_mismatch));

  double ssim_worst = 0;
  for (auto [h, w] : {std::pair{16L, 16L}, {33L, 21L}, {7L, 40L}, {64L, 64L}}) {
    const Shape s{1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
    const Tensor a = oracle::random_tensor(s, gen, 0, 1);
    Tensor b = a;
    std::normal_distribution<double> noise(0, 0.15);
    for (float& v : b.values()) v = std::clamp(v + static_cast<float>(noise(gen)), 0.0f, 1.0f);
    const Tensor fast = ssim_map(a, b);
    const auto ref = oracle::ssim_direct(a, b, h, w);
    for (std::size_t i = 0; i < ref.size(); ++i) ssim_worst = std::max(ssim_worst, std::abs(fast[i] - ref[i]));
  }
  if (ssim_worst > kSsimOracleTolerance) problems.push_back(fmt("SSIM abs error %.3g", ssim_worst));

  const double elapsed = seconds_since(t0);
  if (elapsed >= kOracleBudgetSeconds) problems.push_back(fmt("took %.1f s", elapsed));
  std::string detail = fmt("conv %.2g, labeling 500 masks, metrics 10^4 sets, SSIM %.2g, %.2f s", conv_worst,
                           ssim_worst, elapsed);
  for (const auto& p : problems) detail += "; " + p;
  return verdict(problems.empty(), detail);
}

Outcome ssim_invariants() {
  std::mt19937_64 gen(5);
  float identity_worst = 0;
  bool symmetric = true;
  for (int trial = 0; trial < 4; ++trial) {
    const Tensor a = oracle::random_tensor({1, 24 + 8u * trial, 30}, gen, 0, 1);
    const Tensor b = oracle::random_tensor(a.shape(), gen, 0, 1);
    const Tensor self = ssim_map(a, a);
    for (float v : self.values()) identity_worst = std::max(identity_worst, std::abs(v - 1.0f));
    symmetric = symmetric && ssim_map(a, b) == ssim_map(b, a);
  }
  Tensor zeros({1, 16, 16}), ones({1, 16, 16});
  for (float& v : ones.values()) v = 1.0f;
  const SsimParams p;
  const double closed = p.c1() / (1.0 + p.c1());
  double closed_worst = 0;
  const Tensor flat = ssim_map(zeros, ones);
  for (float v : flat.values()) closed_worst = std::max(closed_worst, std::abs(v - closed));
  const bool ok = identity_worst <= kIdentityTolerance && symmetric && closed_worst <= kClosedFormTolerance;
  return verdict(ok, fmt("max |ssim(a,a)-1| %.3g, symmetric %s, |ssim(0,1) - C1/(1+C1)| %.3g", identity_worst,
                         symmetric ? "yes" : "no", closed_worst));
}

// ---------------------------------------------------------------------------
// Desk-scale end-to-end on synthetic boards.

RunConfig desk_config(std::uint64_t seed, const fs::path& out) {
  RunConfig c;
  c.seed = seed;
  c.out_dir = out.string();
  c.image_size = kSize;
  c.epochs_a = kEpochs;
  c.epochs_b = kEpochs;
  c.patience = 0;
  c.validate();
  return c;
}

struct DeskRun {
  Manifest manifest;
  TrainResult phase_a, phase_b;
  std::string log_csv, sweep_csv;
  SweepTable table;
  std::size_t localized = 0, localizable = 0, test_defective = 0, test_intact = 0;
};

// Every ground-truth defect component of at least kMinDefectArea pixels has
// a pixel inside some reported box.
bool all_defects_hit(const Tensor& truth, const std::vector<Contour>& boxes, bool& any) {
  const Labeling gt = label_components(truth);
  const std::size_t w = truth.dim(truth.rank() - 1);
  any = false;
  bool all = true;
  for (std::size_t k = 0; k < gt.components.size(); ++k) {
    if (gt.components[k].area < kMinDefectArea) continue;
    any = true;
    bool hit = false;
    for (std::size_t i = 0; i < gt.labels.size() && !hit; ++i) {
      if (gt.labels[i] != k + 1) continue;
      for (const auto& b : boxes) hit = hit || b.contains(i % w, i / w, 1, 1);
    }
    all = all && hit;
  }
  return all;
}

DeskRun desk_run(const fs::path& out) {
  const RunConfig cfg = desk_config(kSeed, out);
  fs::create_directories(out);
  DeskRun r;
  progress("generating " + std::to_string(kPairs) + " synthetic pairs in " + out.string());
  Manifest m = make_synthetic_dataset(kPairs, kSize, DefectSpec::parse(cfg.defects),
                                      derive_seed(cfg.seed, "synthetic"), out / "synthetic");
  m = split_manifest(m, cfg.split(), derive_seed(cfg.seed, "split"));
  write_manifest(out / "manifest.csv", rebase_manifest(m, out));
  r.manifest = read_manifest(out / "manifest.csv");

  auto log = [](const char* phase) {
    return [phase](const EpochRecord& e) {
      progress(fmt("phase %s epoch %zu train %.5f val %.5f (%.1f s)", phase, e.epoch, e.train_loss, e.val_loss,
                   e.seconds));
    };
  };
  r.phase_a = train_phase_a(r.manifest, cfg.model_config(), cfg.train_config(Phase::A), log("A"));
  r.phase_b = train_phase_b(r.manifest, r.phase_a.best, cfg.train_config(Phase::B), log("B"));
  r.log_csv = train_log_csv(r.phase_a.log) + train_log_csv(r.phase_b.log);
  write_text_file(out / "train_log.csv", r.log_csv);

  const Autoencoder model = model_from_checkpoint(r.phase_b.best);
  const auto test = r.manifest.split("test");
  const auto boards = score_boards(model, r.manifest, test, cfg.threshold, cfg.localizer_params());
  r.table = sweep_thresholds(scored_samples(boards), cfg.thresholds, area_scale(kSize, kSize));
  r.sweep_csv = emit_table(r.table, TableFormat::csv);
  write_text_file(out / "sweep.csv", r.sweep_csv);
  write_text_file(out / "scores.csv", board_scores_csv(boards));

  for (const auto& b : boards) {
    if (!b.defective) {
      ++r.test_intact;
      continue;
    }
    ++r.test_defective;
    const auto& e = *std::find_if(test.begin(), test.end(), [&](const auto& x) { return x.id == b.id; });
    const Tensor truth = load_image(r.manifest.resolve(mask_path_for(e.defective)), kSize);
    bool any = false;
    const bool all = all_defects_hit(truth, b.report.contours, any);
    if (any) {
      ++r.localizable;
      r.localized += all;
    }
  }
  return r;
}

Outcome end_to_end(const DeskRun& r, double elapsed) {
  const auto& best = r.table.rows[*r.table.best_row];
  const double acc = *best.metrics.accuracy;
  const double loc = r.localizable ? double(r.localized) / double(r.localizable) : 0.0;
  const bool ok = r.test_defective == 20 && r.test_intact == 20 && acc >= kMinAccuracy && loc >= kMinLocalized;
  std::string rows;
  for (const auto& row : r.table.rows) rows += fmt(" %g:%.3f", row.threshold, *row.metrics.accuracy);
  return verdict(ok, fmt("%zu defective + %zu intact boards; accuracy %.3f at threshold %g (per threshold%s); "
                         "defects localized on %zu/%zu boards (%.0f%%); %.0f s",
                         r.test_defective, r.test_intact, acc, best.threshold, rows.c_str(), r.localized,
                         r.localizable, 100 * loc, elapsed));
}

Outcome paper_scale() {
  const char* root = std::getenv("DEEPPCB_ROOT");
  if (!root || !*root) return skip("set DEEPPCB_ROOT to a DeepPCB checkout to run the 256x256 check (hours)");
  const fs::path out = fs::temp_directory_path() / "pcbae_paper_scale";
  RunConfig cfg;
  cfg.out_dir = out.string();
  cfg.image_size = 256;
  cfg.validate();
  fs::create_directories(out);
  Manifest m = split_manifest(scan_deeppcb(root), cfg.split(), derive_seed(cfg.seed, "split"));
  if (m.entries.empty()) return fail("no pairs under DEEPPCB_ROOT");
  const TrainResult a = train_phase_a(m, cfg.model_config(), cfg.train_config(Phase::A));
  const TrainResult b = train_phase_b(m, a.best, cfg.train_config(Phase::B));
  const Autoencoder model = model_from_checkpoint(b.best);
  const auto boards = score_boards(model, m, m.split("test"), cfg.threshold, cfg.localizer_params());
  const SweepTable t = sweep_thresholds(scored_samples(boards), default_thresholds(), area_scale(256, 256));
  const std::size_t best = *t.best_row;
  const double acc = *t.rows[best].metrics.accuracy;
  const bool interior = best != 0 && best + 1 != t.rows.size();
  return verdict(interior && acc >= kMinAccuracy,
                 fmt("best threshold %g (%s), accuracy %.3f", t.rows[best].threshold,
                     interior ? "interior" : "endpoint", acc));
}

Outcome transfer_learning(const DeskRun& first) {
  std::vector<double> transfer, cold;
  std::string detail;
  for (std::uint64_t seed : kTransferSeeds) {
    const RunConfig cfg = desk_config(seed, fs::path(first.manifest.base_dir) / ("transfer_" + std::to_string(seed)));
    TrainResult with;
    if (seed == kSeed) {
      with = first.phase_b;
    } else {
      progress(fmt("transfer seed %llu: phase A + B", static_cast<unsigned long long>(seed)));
      const TrainResult a = train_phase_a(first.manifest, cfg.model_config(), cfg.train_config(Phase::A));
      with = train_phase_b(first.manifest, a.best, cfg.train_config(Phase::B));
    }
    progress(fmt("transfer seed %llu: cold phase B", static_cast<unsigned long long>(seed)));
    Autoencoder fresh(cfg.model_config());
    const TrainResult without = train_denoiser(first.manifest, fresh, cfg.train_config(Phase::B));
    transfer.push_back(with.log.epochs.back().val_loss);
    cold.push_back(without.log.epochs.back().val_loss);
    detail += fmt(" seed %llu %.5f vs %.5f;", static_cast<unsigned long long>(seed), transfer.back(), cold.back());
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double mt = median(transfer), mc = median(cold);
  return verdict(mt <= mc, fmt("median final validation loss %.5f (pretrained) vs %.5f (cold);%s", mt, mc,
                               detail.c_str()));
}

Outcome determinism(const DeskRun& a, const DeskRun& b) {
  const bool log_same = a.log_csv == b.log_csv, sweep_same = a.sweep_csv == b.sweep_csv;
  return verdict(log_same && sweep_same, fmt("train log %s (%zu bytes), sweep CSV %s (%zu bytes)",
                                             log_same ? "identical" : "DIFFERENT", a.log_csv.size(),
                                             sweep_same ? "identical" : "DIFFERENT", a.sweep_csv.size()));
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"acceptance criteria"};
  std::string work = (fs::temp_directory_path() / "pcbae_acceptance").string();
  std::vector<int> only;
  app.add_option("--work-dir", work, "scratch directory for generated data and runs");
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  auto want = [&](int n) { return selected.empty() || selected.count(n); };

  int failures = 0;
  auto report = [&](int n, const char* title, const Outcome& o) {
    const char* tag = o.status == Outcome::Status::pass ? "PASS" : o.status == Outcome::Status::fail ? "FAIL" : "SKIP";
    std::printf("%s criterion %d (%s): %s\n", tag, n, title, o.detail.c_str());
    std::fflush(stdout);
    failures += o.status == Outcome::Status::fail;
  };
  auto guarded = [](const std::function<Outcome()>& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      return fail(std::string("exception: ") + e.what());
    }
  };

  if (want(1)) report(1, "gradient suite", guarded(gradient_suite));
  if (want(2)) report(2, "oracle equivalence", guarded(oracle_suite));
  if (want(3)) report(3, "SSIM invariants", guarded(ssim_invariants));

  std::optional<DeskRun> first;
  if (want(4) || want(6) || want(7)) {
    const fs::path dir = fs::path(work) / "run1";
    fs::remove_all(dir);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      first = desk_run(dir);
    } catch (const std::exception& e) {
      report(4, "desk-scale end-to-end", fail(std::string("exception: ") + e.what()));
    }
    if (first && want(4)) report(4, "desk-scale end-to-end", end_to_end(*first, seconds_since(t0)));
  }
  if (want(5)) report(5, "paper-scale DeepPCB", guarded(paper_scale));
  if (want(6)) {
    report(6, "transfer learning", first ? guarded([&] { return transfer_learning(*first); })
                                         : fail("criterion 4 run did not complete"));
  }
  if (want(7)) {
    report(7, "determinism", first ? guarded([&] {
      const fs::path dir = fs::path(work) / "run2";
      fs::remove_all(dir);
      return determinism(*first, desk_run(dir));
    })
                                   : fail("criterion 4 run did not complete"));
  }
  std::printf("%s\n", failures ? "ACCEPTANCE FAILED" : "ACCEPTANCE PASSED");
  return failures ? 1 : 0;
}
