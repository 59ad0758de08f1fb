#pragma once

// Run configuration shared by the command-line tool: one table of options,
// each with a dotted config-file key, a command-line flag and a default.
// Precedence is flags > config file > defaults.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcbae/dataset.hpp"
#include "pcbae/localizer.hpp"
#include "pcbae/metrics.hpp"
#include "pcbae/model.hpp"
#include "pcbae/train.hpp"

namespace pcbae {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  bool verbose = false;

  std::size_t image_size = 128;
  std::vector<std::size_t> channels{16, 32, 64};
  std::size_t kernel = 3;

  std::size_t batch_size = 2;
  std::size_t epochs_a = kDefaultEpochsA;
  std::size_t epochs_b = kDefaultEpochsB;
  double lr = 1e-3;
  std::string optimizer = "adam";
  double momentum = 0.9;
  std::size_t patience = 5;
  bool log_wall_time = false;

  double noise_density = 0.05;

  std::vector<double> split_ratios{0.8, 0.1, 0.1};
  std::string defects = "random";

  std::size_t ssim_window = 11;
  double ssim_sigma = 1.5;
  double ssim_k1 = 0.01;
  double ssim_k2 = 0.03;
  double dynamic_range = 1.0;
  double smooth_sigma = 1.0;
  double cutoff = LocalizerParams{}.cutoff;
  std::size_t min_area = 4;

  double threshold = 100.0;
  std::vector<double> thresholds = default_thresholds();
  std::string eval_split = "test";

  ModelConfig model_config() const {
    ModelConfig m;
    m.input_height = m.input_width = image_size;
    m.channels = channels;
    m.kernel = kernel;
    m.seed = derive_seed(seed, "model");
    return m;
  }

  TrainConfig train_config(Phase phase) const {
    TrainConfig t = TrainConfig::defaults(phase);
    t.batch_size = batch_size;
    t.epochs = phase == Phase::A ? epochs_a : epochs_b;
    t.lr = lr;
    t.optimizer = parse_optimizer(optimizer);
    t.momentum = momentum;
    t.noise_density = noise_density;
    t.seed = derive_seed(seed, phase == Phase::A ? "train-a" : "train-b");
    t.early_stop_patience = patience;
    t.checkpoint_dir = out_dir;
    return t;
  }

  LocalizerParams localizer_params() const {
    LocalizerParams p;
    p.ssim = {ssim_window, ssim_sigma, ssim_k1, ssim_k2, dynamic_range};
    p.smooth_sigma = smooth_sigma;
    p.cutoff = cutoff;
    p.min_area = min_area;
    return p;
  }

  SplitRatios split() const {
    if (split_ratios.size() != 3) throw ConfigError("data.split_ratios needs three values (train, val, test)");
    return {split_ratios[0], split_ratios[1], split_ratios[2]};
  }

  /// Throws ConfigError describing the first invalid setting.
  void validate() const {
    auto check = [](auto&& fn) {
      try {
        fn();
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw ConfigError(e.what());
      }
    };
    check([&] { model_config().validate(); });
    check([&] { train_config(Phase::A).validate(); });
    check([&] { train_config(Phase::B).validate(); });
    check([&] { localizer_params().ssim.validate(); });
    if (!(cutoff > 0.0 && cutoff < 1.0)) throw ConfigError("localizer.cutoff must be in (0, 1)");
    if (smooth_sigma < 0.0) throw ConfigError("localizer.smooth_sigma must be >= 0");
    if (!(threshold >= 0.0)) throw ConfigError("eval.threshold must be >= 0");
    if (thresholds.empty()) throw ConfigError("eval.thresholds must be nonempty");
    const SplitRatios r = split();
    if (r.train < 0 || r.val < 0 || r.test < 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-6) {
      throw ConfigError("data.split_ratios must be nonnegative and sum to 1");
    }
    check([&] { DefectSpec::parse(defects); });
    if (out_dir.empty()) throw ConfigError("out_dir must be nonempty");
  }
};

enum class OptionKind { integer, number, string, boolean, integer_list, number_list };

/// One configurable setting: config-file key, command-line flag and accessors.
struct ConfigOption {
  std::string key;   // "section.name" or a top-level name
  std::string flag;  // "--name"
  std::string help;
  OptionKind kind;
  std::function<nlohmann::json(const RunConfig&)> get;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
};

namespace detail {

template <class T>
ConfigOption make_option(std::string key, std::string flag, std::string help, OptionKind kind,
                         T RunConfig::*member) {
  return {std::move(key), std::move(flag), std::move(help), kind,
          [member](const RunConfig& c) { return nlohmann::json(c.*member); },
          [member](RunConfig& c, const nlohmann::json& j) { c.*member = j.get<T>(); }};
}

inline bool kind_matches(OptionKind kind, const nlohmann::json& j) {
  auto all = [&](auto pred) {
    if (!j.is_array()) return false;
    for (const auto& v : j)
      if (!pred(v)) return false;
    return true;
  };
  switch (kind) {
    case OptionKind::integer: return j.is_number_unsigned();
    case OptionKind::number: return j.is_number();
    case OptionKind::string: return j.is_string();
    case OptionKind::boolean: return j.is_boolean();
    case OptionKind::integer_list: return all([](const auto& v) { return v.is_number_unsigned(); });
    case OptionKind::number_list: return all([](const auto& v) { return v.is_number(); });
  }
  return false;
}

inline std::string render_value(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_array()) {
    std::string s;
    for (const auto& v : j) s += (s.empty() ? "" : ",") + render_value(v);
    return s;
  }
  if (j.is_number_float()) {  // shortest round-trip form, so 100.0 reads as 100
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, j.get<double>());
    return std::string(buf, r.ptr);
  }
  return j.dump();
}

}  // namespace detail

inline const std::vector<ConfigOption>& config_options() {
  using K = OptionKind;
  using detail::make_option;
  static const std::vector<ConfigOption> options{
      make_option("seed", "--seed", "global random seed", K::integer, &RunConfig::seed),
      make_option("out_dir", "--out-dir", "directory for every output", K::string, &RunConfig::out_dir),
      make_option("verbose", "--verbose", "print the merged configuration and progress", K::boolean,
                  &RunConfig::verbose),
      make_option("model.image_size", "--image-size", "working resolution (square, divisible by 2^blocks)",
                  K::integer, &RunConfig::image_size),
      make_option("model.channels", "--channels", "encoder channel counts, comma separated", K::integer_list,
                  &RunConfig::channels),
      make_option("model.kernel", "--kernel", "convolution kernel size (odd)", K::integer, &RunConfig::kernel),
      make_option("train.batch_size", "--batch-size", "images per optimizer step", K::integer,
                  &RunConfig::batch_size),
      make_option("train.epochs_a", "--epochs-a", "phase A (intact boards) epochs", K::integer,
                  &RunConfig::epochs_a),
      make_option("train.epochs_b", "--epochs-b", "phase B (denoising) epochs", K::integer, &RunConfig::epochs_b),
      make_option("train.lr", "--lr", "learning rate", K::number, &RunConfig::lr),
      make_option("train.optimizer", "--optimizer", "adam or sgd", K::string, &RunConfig::optimizer),
      make_option("train.momentum", "--momentum", "sgd momentum", K::number, &RunConfig::momentum),
      make_option("train.patience", "--patience", "early-stopping patience in epochs, 0 disables", K::integer,
                  &RunConfig::patience),
      make_option("train.log_wall_time", "--log-wall-time", "record wall time in the log CSV (breaks byte-identical logs)",
                  K::boolean, &RunConfig::log_wall_time),
      make_option("noise.density", "--noise-density", "salt-and-pepper fraction of pixels", K::number,
                  &RunConfig::noise_density),
      make_option("data.split_ratios", "--split-ratios", "train,val,test fractions for make-manifest",
                  K::number_list, &RunConfig::split_ratios),
      make_option("data.defects", "--defects", "synthetic defects: none, random or random:MIN-MAX:SMIN-SMAX",
                  K::string, &RunConfig::defects),
      make_option("localizer.ssim_window", "--ssim-window", "SSIM Gaussian window size (odd)", K::integer,
                  &RunConfig::ssim_window),
      make_option("localizer.ssim_sigma", "--ssim-sigma", "SSIM Gaussian sigma", K::number, &RunConfig::ssim_sigma),
      make_option("localizer.ssim_k1", "--ssim-k1", "SSIM k1", K::number, &RunConfig::ssim_k1),
      make_option("localizer.ssim_k2", "--ssim-k2", "SSIM k2", K::number, &RunConfig::ssim_k2),
      make_option("localizer.dynamic_range", "--dynamic-range", "SSIM dynamic range L", K::number,
                  &RunConfig::dynamic_range),
      make_option("localizer.smooth_sigma", "--smooth-sigma", "blur applied to the SSIM map, 0 disables", K::number,
                  &RunConfig::smooth_sigma),
      make_option("localizer.cutoff", "--cutoff", "dissimilarity (1-ssim)/2 above which a pixel differs",
                  K::number, &RunConfig::cutoff),
      make_option("localizer.min_area", "--min-area", "smallest contour kept, in pixels", K::integer,
                  &RunConfig::min_area),
      make_option("eval.threshold", "--threshold", "defect score threshold in pixels at 512x512", K::number,
                  &RunConfig::threshold),
      make_option("eval.thresholds", "--thresholds", "thresholds for sweep, comma separated", K::number_list,
                  &RunConfig::thresholds),
      make_option("eval.split", "--eval-split", "manifest split scored by sweep and eval-loss", K::string,
                  &RunConfig::eval_split),
  };
  return options;
}

inline const ConfigOption* find_option_by_key(const std::string& key) {
  for (const auto& o : config_options())
    if (o.key == key) return &o;
  return nullptr;
}

inline const ConfigOption* find_option_by_flag(const std::string& flag) {
  for (const auto& o : config_options())
    if (o.flag == flag) return &o;
  return nullptr;
}

/// Default value rendered the way it is written on the command line.
inline std::string default_text(const ConfigOption& o) { return detail::render_value(o.get(RunConfig{})); }

inline void set_option(RunConfig& cfg, const ConfigOption& o, const nlohmann::json& value, const std::string& origin) {
  if (!detail::kind_matches(o.kind, value)) {
    throw ConfigError(origin + ": bad value " + value.dump() + " for '" + o.key + "'");
  }
  o.set(cfg, value);
}

/// Parse command-line text for an option into the JSON value it stands for.
inline nlohmann::json parse_flag_value(const ConfigOption& o, const std::string& text) {
  auto bad = [&] { return ConfigError("invalid value '" + text + "' for " + o.flag); };
  auto to_uint = [&](const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) throw bad();
    try {
      return nlohmann::json(std::stoull(s));
    } catch (const std::exception&) {
      throw bad();
    }
  };
  auto to_num = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw bad();
    }
    if (used != s.size() || !std::isfinite(v)) throw bad();
    return nlohmann::json(v);
  };
  auto list = [&](auto conv) {
    nlohmann::json arr = nlohmann::json::array();
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) arr.push_back(conv(item));
    if (arr.empty()) throw bad();
    return arr;
  };
  switch (o.kind) {
    case OptionKind::integer: return to_uint(text);
    case OptionKind::number: return to_num(text);
    case OptionKind::string: return text;
    case OptionKind::boolean:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw bad();
    case OptionKind::integer_list: return list(to_uint);
    case OptionKind::number_list: return list(to_num);
  }
  throw bad();
}

/// Apply a JSON config document. Top-level scalars and one level of
/// sections are accepted; unknown keys are rejected.
inline void apply_config_json(RunConfig& cfg, const nlohmann::json& doc, const std::string& origin) {
  if (!doc.is_object()) throw ConfigError(origin + ": config must be a JSON object");
  for (const auto& [name, value] : doc.items()) {
    if (const ConfigOption* o = find_option_by_key(name)) {
      set_option(cfg, *o, value, origin);
      continue;
    }
    if (!value.is_object()) throw ConfigError(origin + ": unknown config key '" + name + "'");
    for (const auto& [sub, v] : value.items()) {
      const std::string key = name + "." + sub;
      const ConfigOption* o = find_option_by_key(key);
      if (!o) throw ConfigError(origin + ": unknown config key '" + key + "'");
      set_option(cfg, *o, v, origin);
    }
  }
}

inline void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  apply_config_json(cfg, doc, path.string());
}

/// The full configuration as a sectioned JSON document (loadable by
/// apply_config_json).
inline nlohmann::ordered_json config_to_json(const RunConfig& cfg) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& o : config_options()) {
    const auto dot = o.key.find('.');
    const nlohmann::ordered_json v = nlohmann::ordered_json::parse(o.get(cfg).dump());
    if (dot == std::string::npos) doc[o.key] = v;
    else doc[o.key.substr(0, dot)][o.key.substr(dot + 1)] = v;
  }
  return doc;
}

}  // namespace pcbae
