// pcbae_cli: dataset preparation, two-phase training, single-board
// inspection, threshold sweeps and loss evaluation.
//
// Exit codes: 0 success (inspect: intact), 1 inspect found a defect, 2 error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "pcbae/pcbae.hpp"

namespace fs = std::filesystem;
using namespace pcbae;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDefective = 1;
constexpr int kExitError = 2;

struct Inputs {
  std::string root;
  std::vector<std::size_t> synthetic;  // n, size
  std::string manifest;
  std::string checkpoint;
  std::string image;
  std::string pretrained;
};

void log_epoch(const RunConfig& cfg, const std::string& phase, const EpochRecord& r) {
  if (!cfg.verbose) return;
  std::fprintf(stderr, "phase %s epoch %zu: train %.6f val %.6f (%.1f s)\n", phase.c_str(), r.epoch, r.train_loss,
               r.val_loss, r.seconds);
}

void write_training_outputs(const RunConfig& cfg, const TrainResult& res, const std::string& prefix,
                            const std::string& title) {
  const fs::path out = cfg.out_dir;
  write_text_file(out / (prefix + "_log.csv"), train_log_csv(res.log, cfg.log_wall_time));
  write_text_file(out / (prefix + "_loss.svg"), train_log_svg(res.log, title));
  std::printf("best epoch %zu, validation loss %.6f, checkpoint %s\n", res.log.best_epoch, res.log.best_val_loss,
              res.log.best_checkpoint.string().c_str());
}

int cmd_make_manifest(const RunConfig& cfg, const Inputs& in) {
  const fs::path out = cfg.out_dir;
  Manifest m;
  if (!in.synthetic.empty()) {
    if (!in.root.empty()) throw ConfigError("make-manifest takes either a root directory or --synthetic, not both");
    m = make_synthetic_dataset(in.synthetic[0], in.synthetic[1], DefectSpec::parse(cfg.defects),
                               derive_seed(cfg.seed, "synthetic"), out / "synthetic");
  } else {
    if (in.root.empty()) throw ConfigError("make-manifest needs a root directory or --synthetic N SIZE");
    m = scan_deeppcb(in.root);
  }
  if (m.entries.empty()) throw DatasetError("no image pairs found");
  m = split_manifest(m, cfg.split(), derive_seed(cfg.seed, "split"));
  const fs::path path = out / "manifest.csv";
  write_manifest(path, rebase_manifest(m, out));
  std::printf("%zu entries written to %s\n", m.entries.size(), path.string().c_str());
  return kExitOk;
}

int cmd_pretrain(const RunConfig& cfg, const Inputs& in) {
  const Manifest m = read_manifest(in.manifest);
  const TrainResult res = train_phase_a(m, cfg.model_config(), cfg.train_config(Phase::A),
                                        [&](const EpochRecord& r) { log_epoch(cfg, "A", r); });
  write_training_outputs(cfg, res, "phase_a", "phase A validation loss");
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const Inputs& in) {
  const Checkpoint pretrained = read_checkpoint(in.pretrained);
  if (pretrained.config.input_height != cfg.image_size || pretrained.config.input_width != cfg.image_size) {
    throw ConfigError("pretrained checkpoint is " + std::to_string(pretrained.config.input_height) + "x" +
                      std::to_string(pretrained.config.input_width) + " but --image-size is " +
                      std::to_string(cfg.image_size));
  }
  const Manifest m = read_manifest(in.manifest);
  const TrainResult res = train_phase_b(m, pretrained, cfg.train_config(Phase::B),
                                        [&](const EpochRecord& r) { log_epoch(cfg, "B", r); });
  write_training_outputs(cfg, res, "phase_b", "phase B validation loss");
  return kExitOk;
}

int cmd_inspect(const RunConfig& cfg, const Inputs& in) {
  const Autoencoder model = load_checkpoint(in.checkpoint);
  const auto& mc = model.config();
  const Tensor board = load_image(in.image, mc.input_height, mc.input_width);
  const std::string id = fs::path(in.image).stem().string();
  const DiffReport r = inspect(model, board, cfg.threshold, cfg.localizer_params(), id);
  const fs::path out = cfg.out_dir;
  write_text_file(out / (id + "_report.json"), report_to_json(r).dump(2) + "\n");
  write_png(out / (id + "_overlay.png"), render_overlay(board, r.contours));
  std::printf("%s %s score %.17g threshold %.17g\n", id.c_str(), to_string(r.verdict).c_str(), r.score,
              r.effective_threshold);
  return r.verdict == Verdict::defective ? kExitDefective : kExitOk;
}

int cmd_sweep(const RunConfig& cfg, const Inputs& in) {
  const Autoencoder model = load_checkpoint(in.checkpoint);
  const Manifest m = read_manifest(in.manifest);
  const auto entries = select_split(m, cfg.eval_split);
  const auto boards = score_boards(model, m, entries, cfg.threshold, cfg.localizer_params());
  const auto& mc = model.config();
  const SweepTable table = sweep_thresholds(scored_samples(boards), cfg.thresholds,
                                            area_scale(mc.input_height, mc.input_width));
  const fs::path out = cfg.out_dir;
  write_text_file(out / "sweep.csv", emit_table(table, TableFormat::csv));
  write_text_file(out / "sweep.md", emit_table(table, TableFormat::markdown));
  write_text_file(out / "sweep.json", emit_table(table, TableFormat::json));
  write_text_file(out / "scores.csv", board_scores_csv(boards));
  std::cout << emit_table(table, TableFormat::markdown);
  if (const auto best = table.best_threshold()) std::printf("best threshold %g\n", *best);
  return kExitOk;
}

int cmd_eval_loss(const RunConfig& cfg, const Inputs& in) {
  const Checkpoint ckpt = read_checkpoint(in.checkpoint);
  const Autoencoder model = model_from_checkpoint(ckpt);
  const Manifest m = read_manifest(in.manifest);
  const auto entries = select_split(m, cfg.eval_split);
  const double loss =
      evaluate_split_loss(model, ckpt.meta.phase, m, entries, cfg.noise_density, derive_seed(cfg.seed, "eval"));
  nlohmann::ordered_json j;
  j["split"] = cfg.eval_split;
  j["phase"] = ckpt.meta.phase;
  j["entries"] = entries.size();
  j["loss"] = loss;
  write_text_file(fs::path(cfg.out_dir) / "eval_loss.json", j.dump(2) + "\n");
  std::printf("%.17g\n", loss);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"PCB defect detection with a denoising convolutional autoencoder"};
  app.fallthrough();
  app.require_subcommand(1);
  app.get_formatter()->column_width(34);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; flags override its values")->check(CLI::ExistingFile);

  std::map<std::string, std::string> flag_text;
  std::map<std::string, bool> flag_bool;
  std::map<std::string, CLI::Option*> flag_opts;
  for (const auto& o : config_options()) {
    CLI::Option* opt = nullptr;
    if (o.kind == OptionKind::boolean) {
      opt = app.add_flag(o.flag, flag_bool[o.key], o.help);
    } else {
      opt = app.add_option(o.flag, flag_text[o.key], o.help);
    }
    opt->default_str(default_text(o));
    flag_opts[o.key] = opt;
  }

  Inputs in;
  auto* mk = app.add_subcommand("make-manifest", "write manifest.csv for a DeepPCB tree or a synthetic set");
  mk->add_option("root", in.root, "DeepPCB root directory (pairs named *_test.* / *_temp.*)");
  mk->add_option("--synthetic", in.synthetic, "generate N synthetic SIZE x SIZE pairs instead")
      ->expected(2)
      ->type_name("N SIZE");

  auto* pre = app.add_subcommand("pretrain", "phase A: train on intact templates");
  pre->add_option("manifest", in.manifest, "manifest CSV")->required();

  auto* tr = app.add_subcommand("train", "phase B: denoising fine-tune from a phase A checkpoint");
  tr->add_option("manifest", in.manifest, "manifest CSV")->required();
  tr->add_option("--pretrained", in.pretrained, "phase A checkpoint")->required();

  auto* ins = app.add_subcommand("inspect", "score one board; exit 0 intact, 1 defective");
  ins->add_option("checkpoint", in.checkpoint, "trained checkpoint")->required();
  ins->add_option("image", in.image, "board image (PNG, JPEG or PGM)")->required();

  auto* sw = app.add_subcommand("sweep", "score a labeled split and sweep thresholds");
  sw->add_option("checkpoint", in.checkpoint, "trained checkpoint")->required();
  sw->add_option("manifest", in.manifest, "labeled manifest CSV")->required();

  auto* ev = app.add_subcommand("eval-loss", "mean BCE of a checkpoint on a split");
  ev->add_option("checkpoint", in.checkpoint, "trained checkpoint")->required();
  ev->add_option("manifest", in.manifest, "manifest CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitError;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    for (const auto& o : config_options()) {
      if (flag_opts[o.key]->count() == 0) continue;
      const nlohmann::json v =
          o.kind == OptionKind::boolean ? nlohmann::json(flag_bool[o.key]) : parse_flag_value(o, flag_text[o.key]);
      set_option(cfg, o, v, o.flag);
    }
    cfg.validate();
    if (cfg.verbose) std::cerr << "configuration:\n" << config_to_json(cfg).dump(2) << "\n";
    fs::create_directories(cfg.out_dir);

    if (mk->parsed()) return cmd_make_manifest(cfg, in);
    if (pre->parsed()) return cmd_pretrain(cfg, in);
    if (tr->parsed()) return cmd_train(cfg, in);
    if (ins->parsed()) return cmd_inspect(cfg, in);
    if (sw->parsed()) return cmd_sweep(cfg, in);
    if (ev->parsed()) return cmd_eval_loss(cfg, in);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
  return kExitError;
}
