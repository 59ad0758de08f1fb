#pragma once

// Two-phase training. Phase A fits the autoencoder to intact templates
// (input = target); phase B starts from phase-A weights and learns to map
// salt-and-pepper corrupted defective boards to their templates.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pcbae/checkpoint.hpp"
#include "pcbae/dataset.hpp"
#include "pcbae/model.hpp"
#include "pcbae/optim.hpp"

namespace pcbae {

enum class Phase { A, B };
enum class Optimizer { adam, sgd };

inline std::string to_string(Phase p) { return p == Phase::A ? "A" : "B"; }
inline std::string to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }

inline Optimizer parse_optimizer(const std::string& s) {
  if (s == "adam") return Optimizer::adam;
  if (s == "sgd") return Optimizer::sgd;
  throw Error("unknown optimizer '" + s + "' (expected adam or sgd)");
}

inline constexpr std::size_t kDefaultEpochsA = 4;
inline constexpr std::size_t kDefaultEpochsB = 17;

struct TrainConfig {
  Phase phase = Phase::A;
  std::size_t batch_size = 2;
  std::size_t epochs = kDefaultEpochsA;
  double lr = 1e-3;
  Optimizer optimizer = Optimizer::adam;
  double momentum = 0.9;  // sgd only
  double noise_density = 0.05;
  std::uint64_t seed = 0;
  std::size_t early_stop_patience = 5;  // 0 disables early stopping
  std::filesystem::path checkpoint_dir;  // empty: keep the best checkpoint in memory only

  static TrainConfig defaults(Phase p) {
    TrainConfig c;
    c.phase = p;
    c.epochs = p == Phase::A ? kDefaultEpochsA : kDefaultEpochsB;
    return c;
  }

  void validate() const {
    if (batch_size < 1) throw Error("TrainConfig: batch_size must be >= 1");
    if (epochs < 1) throw Error("TrainConfig: epochs must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw Error("TrainConfig: lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("TrainConfig: momentum must be in [0, 1)");
    if (!(noise_density >= 0.0 && noise_density <= 1.0)) {
      throw Error("TrainConfig: noise_density must be in [0, 1]");
    }
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
  std::size_t steps = 0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::filesystem::path best_checkpoint;
  bool stopped_early = false;
};

struct TrainResult {
  Checkpoint best;
  TrainLog log;
};

/// Images held in memory for one split: model inputs and reconstruction
/// targets, each 1 x H x W, plus the ids they came from. Inputs flagged
/// `noisy` receive fresh salt-and-pepper noise in phase B.
struct SampleSet {
  std::vector<std::string> ids;
  std::vector<Tensor> inputs;
  std::vector<Tensor> targets;
  std::vector<char> noisy;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }

  void add(std::string id, Tensor input, Tensor target, bool add_noise) {
    ids.push_back(std::move(id));
    inputs.push_back(std::move(input));
    targets.push_back(std::move(target));
    noisy.push_back(add_noise ? 1 : 0);
  }
};

/// Per-sample noise seed. Training noise changes every epoch; validation
/// noise (epoch 0) is fixed so validation losses are comparable.
inline std::uint64_t noise_seed(std::uint64_t seed, std::size_t epoch, const std::string& id) {
  return derive_seed(derive_seed(seed, "noise"), "e" + std::to_string(epoch) + ":" + id);
}

/// Training split; every entry when the manifest marks no split at all.
inline std::vector<ManifestEntry> training_entries(const Manifest& m) {
  const bool unsplit = std::all_of(m.entries.begin(), m.entries.end(), [](const auto& e) { return e.split.empty(); });
  auto train = m.split(unsplit ? "all" : "train");
  if (train.empty()) throw DatasetError("manifest has an empty training split");
  return train;
}

/// Validation split, or the training split when the manifest has no
/// validation entries.
inline std::vector<ManifestEntry> validation_entries(const Manifest& m) {
  auto val = m.split("val");
  return val.empty() ? training_entries(m) : val;
}

/// Phase A samples: input = target = template.
inline SampleSet load_templates(const Manifest& m, const std::vector<ManifestEntry>& entries,
                                std::size_t height, std::size_t width) {
  SampleSet s;
  for (const auto& e : entries) {
    Tensor t = load_image(m.resolve(e.templ), height, width);
    s.add(e.id, t, t, false);
  }
  return s;
}

/// Phase B samples: (noisy defective -> template) for every pair, plus the
/// clean template mapped to itself. Only the defective boards are noised.
inline SampleSet load_pairs(const Manifest& m, const std::vector<ManifestEntry>& entries,
                            std::size_t height, std::size_t width) {
  SampleSet s;
  for (const auto& e : entries) {
    ImagePair p = load_pair(m, e, height, width);
    s.add(e.id, std::move(p.defective), p.templ, true);
    s.add(e.id + "#template", p.templ, p.templ, false);
  }
  return s;
}

inline SampleSet with_noise(const SampleSet& s, double density, std::uint64_t seed, std::size_t epoch) {
  SampleSet out = s;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (s.noisy[i]) out.inputs[i] = add_salt_pepper(s.inputs[i], density, noise_seed(seed, epoch, s.ids[i]));
  }
  return out;
}

namespace detail {

inline Tensor stack(const std::vector<Tensor>& images, const std::vector<std::size_t>& order,
                    std::size_t begin, std::size_t end) {
  const Shape& s = images[order[begin]].shape();
  const std::size_t per = shape_numel(s);
  Tensor batch({end - begin, 1, s[s.size() - 2], s[s.size() - 1]});
  for (std::size_t i = begin; i < end; ++i) {
    const Tensor& img = images[order[i]];
    if (img.size() != per) throw ShapeError("training images differ in size");
    std::copy(img.data(), img.data() + per, batch.data() + (i - begin) * per);
  }
  return batch;
}

}  // namespace detail

/// Mean per-pixel BCE over the set in inference mode (running BN statistics).
inline double evaluate_loss(const Autoencoder& model, const SampleSet& set) {
  if (set.empty()) throw Error("evaluate_loss: empty split");
  double sum = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Shape shape = model.input_shape(1);
    const Tensor pred = model.infer(set.inputs[i].reshaped(shape));
    sum += bce_loss(pred, set.targets[i].reshaped(shape));
  }
  return sum / static_cast<double>(set.size());
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Train `model` in place on `train` (inputs noised per epoch when
/// cfg.phase is B), validating on `val` after every epoch. Returns the best
/// validation checkpoint and the per-epoch log.
inline TrainResult fit(Autoencoder& model, const SampleSet& train, const SampleSet& val,
                       const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) throw Error("training split is empty");
  if (val.empty()) throw Error("validation split is empty");

  const std::vector<Tensor*> params = model.parameters();
  AdamState adam = AdamState::for_params(params);
  SgdState sgd = SgdState::for_params(params);
  const AdamOptions adam_opt{static_cast<float>(cfg.lr), 0.9f, 0.999f, 1e-8f};
  const SgdOptions sgd_opt{static_cast<float>(cfg.lr), static_cast<float>(cfg.momentum)};
  const bool denoise = cfg.phase == Phase::B;
  const SampleSet val_set = denoise ? with_noise(val, cfg.noise_density, cfg.seed, 0) : val;
  const std::string phase = to_string(cfg.phase);

  TrainResult result;
  std::vector<std::size_t> order(train.size());
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(derive_seed(cfg.seed, "shuffle"), static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());
    const SampleSet epoch_set = denoise ? with_noise(train, cfg.noise_density, cfg.seed, epoch) : SampleSet{};
    const SampleSet& src = denoise ? epoch_set : train;

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      const Tensor x = detail::stack(src.inputs, order, b, e);
      const Tensor y = detail::stack(src.targets, order, b, e);
      ForwardTape tape;
      const Tensor prob = model.forward(x, Mode::train, &tape);
      loss_sum += bce_loss(prob, y) * static_cast<double>(e - b);
      const std::vector<Tensor> grads = model.backward(tape, sigmoid_bce_backward(prob, y));
      if (cfg.optimizer == Optimizer::adam) adam_step(params, grads, adam, adam_opt);
      else sgd_step(params, grads, sgd, sgd_opt);
      ++rec.steps;
    }
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_loss = evaluate_loss(model, val_set);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) {
      throw Error("training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)");
    }
    result.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_loss < result.log.best_val_loss) {
      result.log.best_val_loss = rec.val_loss;
      result.log.best_epoch = epoch;
      result.best = make_checkpoint(model, {phase, epoch, rec.val_loss});
      since_best = 0;
    } else if (cfg.early_stop_patience > 0 && ++since_best >= cfg.early_stop_patience) {
      result.log.stopped_early = epoch < cfg.epochs;
      break;
    }
  }
  if (!cfg.checkpoint_dir.empty()) {
    std::filesystem::create_directories(cfg.checkpoint_dir);
    result.log.best_checkpoint = cfg.checkpoint_dir / (cfg.phase == Phase::A ? "phase_a_best.ckpt" : "phase_b_best.ckpt");
    save_checkpoint(result.log.best_checkpoint, result.best);
  }
  return result;
}

/// Phase A: plain autoencoder on the intact templates of the training split.
inline TrainResult train_phase_a(const Manifest& manifest, const ModelConfig& model_config,
                                 const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  model_config.validate();
  const std::size_t h = model_config.input_height, w = model_config.input_width;
  const SampleSet train = load_templates(manifest, training_entries(manifest), h, w);
  const SampleSet val = load_templates(manifest, validation_entries(manifest), h, w);
  Autoencoder model(model_config);
  TrainConfig c = cfg;
  c.phase = Phase::A;
  return fit(model, train, val, c, on_epoch);
}

/// Phase B: denoising fine-tune from `initial` (pretrained or cold) on
/// (noisy defective, template) pairs.
inline TrainResult train_denoiser(const Manifest& manifest, Autoencoder& model, const TrainConfig& cfg,
                                  const EpochCallback& on_epoch = {}) {
  const auto& mc = model.config();
  const SampleSet train = load_pairs(manifest, training_entries(manifest), mc.input_height, mc.input_width);
  const SampleSet val = load_pairs(manifest, validation_entries(manifest), mc.input_height, mc.input_width);
  TrainConfig c = cfg;
  c.phase = Phase::B;
  return fit(model, train, val, c, on_epoch);
}

inline TrainResult train_phase_b(const Manifest& manifest, const Checkpoint& pretrained, const TrainConfig& cfg,
                                 const EpochCallback& on_epoch = {}) {
  Autoencoder model(pretrained.config);
  transfer_init(model, pretrained);
  return train_denoiser(manifest, model, cfg, on_epoch);
}

inline constexpr const char* kTrainLogHeader = "epoch,train_loss,val_loss,seconds";

/// CSV log. Wall time is written only when asked for, so that identical
/// runs produce identical files.
inline std::string train_log_csv(const TrainLog& log, bool include_wall_time = false) {
  std::ostringstream os;
  os << kTrainLogHeader << '\n';
  char buf[128];
  for (const auto& r : log.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.3f\n", r.epoch, r.train_loss, r.val_loss,
                  include_wall_time ? r.seconds : 0.0);
    os << buf;
  }
  return os.str();
}

/// Line plot of train and validation loss per epoch.
inline std::string train_log_svg(const TrainLog& log, const std::string& title = "loss") {
  constexpr double W = 640, H = 400, left = 70, right = 20, top = 40, bottom = 50;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& r : log.epochs) {
    lo = std::min({lo, r.train_loss, r.val_loss});
    hi = std::max({hi, r.train_loss, r.val_loss});
  }
  if (log.epochs.empty()) lo = 0, hi = 1;
  if (hi - lo < 1e-12) lo -= 0.5 * std::max(1e-6, std::abs(lo)), hi += 0.5 * std::max(1e-6, std::abs(hi));
  const std::size_t n = log.epochs.size();
  auto px = [&](std::size_t epoch) {
    return n <= 1 ? left + (W - left - right) / 2
                  : left + (W - left - right) * static_cast<double>(epoch - 1) / static_cast<double>(n - 1);
  };
  auto py = [&](double v) { return top + (H - top - bottom) * (hi - v) / (hi - lo); };
  char buf[256];
  std::ostringstream os;
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" viewBox=\"0 0 %g %g\">\n", W,
                H, W, H);
  os << buf << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
     << title << "</text>\n";
  std::snprintf(buf, sizeof buf,
                "<path d=\"M%g %g V%g H%g\" stroke=\"black\" fill=\"none\"/>\n", left, top, H - bottom, W - right);
  os << buf;
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%.2f\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">%.4g</text>\n",
                  left - 6, py(v) + 4, v);
    os << buf;
  }
  for (std::size_t e = 1; e <= n; ++e) {
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.2f\" y=\"%g\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">%zu</text>\n",
                  px(e), H - bottom + 16, e);
    os << buf;
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">epoch</text>\n",
                (left + W - right) / 2, H - 10);
  os << buf;
  auto series = [&](auto value, const char* color, const char* name, double legend_y) {
    std::string pts;
    for (const auto& r : log.epochs) {
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", pts.empty() ? "" : " ", px(r.epoch), py(value(r)));
      pts += buf;
    }
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts << "\"/>\n";
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%g\" fill=\"%s\" font-family=\"sans-serif\" font-size=\"12\">%s</text>\n",
                  W - right - 90, legend_y, color, name);
    os << buf;
  };
  series([](const EpochRecord& r) { return r.train_loss; }, "steelblue", "train", top + 14);
  series([](const EpochRecord& r) { return r.val_loss; }, "darkorange", "validation", top + 30);
  os << "</svg>\n";
  return os.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("error writing '" + path.string() + "'");
}

}  // namespace pcbae
