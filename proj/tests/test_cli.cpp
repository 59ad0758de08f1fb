#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pcbae/dataset.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;  // stdout and stderr interleaved
};

std::string cli() {
  const char* p = std::getenv("PCBAE_CLI");
  return p ? p : "";
}

CliResult run(const std::string& args) {
  const std::string cmd = "'" + cli() + "' " + args + " 2>&1";
  CliResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "pcbae_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small, fast settings shared by the training tests.
const std::string kTiny = "--image-size 16 --channels 4,8 --epochs-a 2 --epochs-b 2 --patience 0 --seed 5";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    if (cli().empty()) GTEST_SKIP() << "PCBAE_CLI not set";
  }
};

}  // namespace

TEST_F(Cli, HelpListsSubcommandsAndDefaults) {
  const CliResult r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* s : {"make-manifest", "pretrain", "train", "inspect", "sweep", "eval-loss", "--noise-density",
                        "--cutoff", "--threshold", "--config"}) {
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
  }
  EXPECT_NE(r.out.find("0.05"), std::string::npos);  // noise density default
  EXPECT_NE(r.out.find("50,100,150,200"), std::string::npos);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("pretrain").code, 2);
  EXPECT_EQ(run("--noise-density lots make-manifest --synthetic 2 16").code, 2);
}

TEST_F(Cli, SyntheticManifest) {
  const fs::path dir = scratch("synthetic");
  const CliResult r = run("make-manifest --synthetic 40 128 --out-dir " + dir.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const pcbae::Manifest m = pcbae::read_manifest(dir / "manifest.csv");
  ASSERT_EQ(m.entries.size(), 40u);
  std::size_t train = 0, val = 0, test = 0;
  for (const auto& e : m.entries) {
    train += e.split == "train";
    val += e.split == "val";
    test += e.split == "test";
    EXPECT_EQ(e.label, pcbae::Label::defective);
  }
  EXPECT_EQ(train, 32u);
  EXPECT_EQ(val, 4u);
  EXPECT_EQ(test, 4u);
  const pcbae::Tensor img = pcbae::load_image(m.resolve(m.entries[0].defective), 128);
  EXPECT_EQ(img.shape(), (pcbae::Shape{1, 128, 128}));
}

TEST_F(Cli, EmptyDirectoryIsAnError) {
  const fs::path dir = scratch("empty");
  fs::create_directories(dir / "root");
  const CliResult r = run("make-manifest " + (dir / "root").string() + " --out-dir " + dir.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("no image pairs"), std::string::npos) << r.out;
}

TEST_F(Cli, TrainWithoutCheckpointFails) {
  const fs::path dir = scratch("nockpt");
  ASSERT_EQ(run("make-manifest --synthetic 4 16 --out-dir " + dir.string()).code, 0);
  const CliResult r = run("train " + (dir / "manifest.csv").string() + " --pretrained " + (dir / "nope.ckpt").string() +
                    " --out-dir " + dir.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("nope.ckpt"), std::string::npos) << r.out;
}

TEST_F(Cli, ConfigFileRejectsUnknownKeysAndFlagsOverride) {
  const fs::path dir = scratch("config");
  std::ofstream(dir / "bad.json") << R"({"train": {"epochz": 3}})";
  CliResult r = run("--config " + (dir / "bad.json").string() + " make-manifest --synthetic 2 16 --out-dir " + dir.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("epochz"), std::string::npos) << r.out;
  std::ofstream(dir / "good.json") << R"({"data": {"split_ratios": [0.5, 0.5, 0.0]}, "seed": 3})";
  r = run("--config " + (dir / "good.json").string() + " --verbose --seed 4 make-manifest --synthetic 4 16 --out-dir " +
          dir.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("\"seed\": 4"), std::string::npos) << r.out;
  const pcbae::Manifest m = pcbae::read_manifest(dir / "manifest.csv");
  EXPECT_EQ(m.split("test").size(), 0u);
  EXPECT_EQ(m.split("val").size(), 2u);
}

TEST_F(Cli, PipelineIsDeterministicAndInspectExitCodes) {
  std::string logs[2], sweeps[2];
  for (int round = 0; round < 2; ++round) {
    const fs::path dir = scratch("pipeline" + std::to_string(round));
    const std::string out = " --out-dir " + dir.string() + " " + kTiny;
    ASSERT_EQ(run("make-manifest --synthetic 8 16" + out).code, 0);
    const std::string manifest = (dir / "manifest.csv").string();
    CliResult r = run("pretrain " + manifest + out);
    ASSERT_EQ(r.code, 0) << r.out;
    ASSERT_TRUE(fs::exists(dir / "phase_a_best.ckpt"));
    ASSERT_TRUE(fs::exists(dir / "phase_a_loss.svg"));
    r = run("train " + manifest + " --pretrained " + (dir / "phase_a_best.ckpt").string() + out);
    ASSERT_EQ(r.code, 0) << r.out;
    const std::string ckpt = (dir / "phase_b_best.ckpt").string();
    r = run("sweep " + ckpt + " " + manifest + out + " --eval-split all");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("| Threshold |"), std::string::npos);
    logs[round] = slurp(dir / "phase_a_log.csv") + slurp(dir / "phase_b_log.csv");
    sweeps[round] = slurp(dir / "sweep.csv") + slurp(dir / "scores.csv");

    r = run("eval-loss " + ckpt + " " + manifest + out);
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_TRUE(nlohmann::json::parse(slurp(dir / "eval_loss.json"))["loss"].is_number());

    if (round == 1) {
      // A template is intact under an impossible threshold; a flipped board is not.
      const pcbae::Manifest m = pcbae::read_manifest(manifest);
      const std::string templ = m.resolve(m.entries[0].templ).string();
      r = run("inspect " + ckpt + " " + templ + out + " --threshold 1e9");
      EXPECT_EQ(r.code, 0) << r.out;
      EXPECT_TRUE(fs::exists(dir / (fs::path(templ).stem().string() + "_report.json")));
      EXPECT_TRUE(fs::exists(dir / (fs::path(templ).stem().string() + "_overlay.png")));
      pcbae::Tensor inverted = pcbae::load_image(templ, 16);
      for (float& v : inverted.values()) v = 1.0f - v;
      pcbae::save_gray_png(dir / "inverted.png", inverted);
      r = run("inspect " + ckpt + " " + (dir / "inverted.png").string() + out + " --threshold 0");
      EXPECT_EQ(r.code, 1) << r.out;
      const auto report = nlohmann::json::parse(slurp(dir / "inverted_report.json"));
      EXPECT_EQ(report["verdict"], "defective");
      EXPECT_GT(report["score"].get<double>(), 0.0);
      r = run("inspect " + ckpt + " " + (dir / "missing.png").string() + out);
      EXPECT_EQ(r.code, 2);
    }
  }
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(sweeps[0], sweeps[1]);
}

TEST_F(Cli, TrainRejectsSizeMismatch) {
  const fs::path dir = scratch("mismatch");
  const std::string out = " --out-dir " + dir.string() + " " + kTiny;
  ASSERT_EQ(run("make-manifest --synthetic 4 16" + out).code, 0);
  ASSERT_EQ(run("pretrain " + (dir / "manifest.csv").string() + out).code, 0);
  const CliResult r = run("train " + (dir / "manifest.csv").string() + " --pretrained " +
                    (dir / "phase_a_best.ckpt").string() + out + " --image-size 32");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("image-size"), std::string::npos) << r.out;
}
