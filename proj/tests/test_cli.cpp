#include "denet/training.hpp"
#include "support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdio>
#include <sys/wait.h>

using namespace denet;
using denet::test::TempDir;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

Result run(const std::string& args, const TempDir& dir, const std::string& env = "") {
  const auto err_path = dir / "stderr.txt";
  const std::string cmd = env + " '" + std::string(DENET_CLI_PATH) + "' " + args + " 2>'" + err_path.string() + "'";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = test::read_bytes(err_path);
  return r;
}

const char* kSynth = R"({"train_normal": 4, "train_abnormal": 4, "test_normal": 2, "test_abnormal": 2,
                         "segments": 8, "dim": 8, "clip_len": 4, "max_duration": 3})";
const char* kTrain = R"({"segments": 8, "scales": 2, "heads": 2, "batch_size": 4, "max_iterations": 2,
                         "learning_rate": 1e-3})";

/// Synthetic dataset + config files shared by the cases below.
struct Workspace {
  TempDir dir{"cli"};
  Workspace() {
    test::write_text(dir / "synth.json", kSynth);
    test::write_text(dir / "train.json", kTrain);
    const Result r = run("synth --config " + (dir / "synth.json").string() + " --seed 3 --output-dir " +
                             (dir / "data").string(),
                         dir);
    REQUIRE(r.code == 0);
  }
  std::string p(const std::string& rel) const { return (dir / rel).string(); }
  Result train(const std::string& out, const std::string& extra = "") const {
    return run("train --config " + p("train.json") + " --manifest " + p("data/train.csv") + " --output-dir " + p(out) +
                   " " + extra,
               dir);
  }
};

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = test::read_bytes(e.path());
  }
  return files;
}

}  // namespace

TEST_CASE("synth writes manifests, features and ground truth deterministically") {
  TempDir dir("cli_synth");
  const std::string cfg = std::string(DENET_CONFIG_DIR) + "/easy_synth.json";
  const Result a = run("synth --config " + cfg + " --seed 7 --output-dir " + (dir / "a").string(), dir);
  REQUIRE(a.code == 0);
  const json out = json::parse(a.out);
  CHECK(out["train_videos"] == 200);
  CHECK(out["test_videos"] == 50);
  CHECK(fs::exists(dir / "a/train.csv"));
  CHECK(fs::exists(dir / "a/test.csv"));
  CHECK(fs::exists(dir / "a/features/train_normal_0000.dnf"));
  CHECK(fs::exists(dir / "a/gt/test_abnormal_0000.txt"));
  CHECK_FALSE(fs::exists(dir / "a/gt/train_abnormal_0000.txt"));
  const Result b = run("synth --config " + cfg + " --seed 7 --output-dir " + (dir / "b").string(), dir);
  REQUIRE(b.code == 0);
  CHECK(snapshot(dir / "a") == snapshot(dir / "b"));
}

TEST_CASE("invalid config key exits 2 naming the key") {
  TempDir dir("cli_badkey");
  test::write_text(dir / "bad.json", R"({"segments": 8, "sgements": 8})");
  const Result r = run("synth --config " + (dir / "bad.json").string() + " --output-dir " + (dir / "o").string(), dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("sgements") != std::string::npos);
  const Result t = run("train --config " + (dir / "bad.json").string() + " --manifest x.csv", dir);
  CHECK(t.code == 2);
  CHECK(t.err.find("sgements") != std::string::npos);
  CHECK(run("frobnicate", dir).code == 2);
  CHECK(run("train --no-such-flag", dir).code == 2);
  CHECK(run("eval --manifest x.csv", dir).code == 2);
}

TEST_CASE("train: zero iterations, erase flags, seed precedence") {
  Workspace ws;
  const Result zero = ws.train("zero", "--iterations 0");
  REQUIRE(zero.code == 0);
  const TrainState s0 = load_checkpoint(ws.p("zero/checkpoint.ckpt"));
  CHECK(s0.iteration == 0);
  CHECK(s0.config.erase_mode == EraseMode::dynamic);

  const Result ne = ws.train("noerase", "--no-erase");
  REQUIRE(ne.code == 0);
  const TrainState s1 = load_checkpoint(ws.p("noerase/checkpoint.ckpt"));
  CHECK(s1.iteration == 2);
  CHECK(s1.config.erase_mode == EraseMode::none);
  CHECK(s1.config.weights.lambda2 == 0.0);

  REQUIRE(ws.train("static", "--static-erase --audit-erase").code == 0);
  CHECK(load_checkpoint(ws.p("static/checkpoint.ckpt")).config.erase_mode == EraseMode::static_all);
  const std::string audit = test::read_bytes(ws.dir / "static/erase_audit.jsonl");
  CHECK(audit.find("\"era_m\":1") != std::string::npos);
  CHECK(audit.find("\"era_m\":0") == std::string::npos);
  CHECK(ws.train("both", "--static-erase --no-erase").code == 2);

  // --seed beats DENET_SEED; DENET_SEED applies when nothing else sets one.
  REQUIRE(run("train --config " + ws.p("train.json") + " --manifest " + ws.p("data/train.csv") + " --output-dir " +
                  ws.p("env") + " --iterations 0",
              ws.dir, "DENET_SEED=42")
              .code == 0);
  CHECK(load_checkpoint(ws.p("env/checkpoint.ckpt")).config.seed == 42);
  REQUIRE(run("train --config " + ws.p("train.json") + " --manifest " + ws.p("data/train.csv") + " --output-dir " +
                  ws.p("flag") + " --iterations 0 --seed 5",
              ws.dir, "DENET_SEED=42")
              .code == 0);
  CHECK(load_checkpoint(ws.p("flag/checkpoint.ckpt")).config.seed == 5);
}

TEST_CASE("train is deterministic and resumable from the command line") {
  Workspace ws;
  REQUIRE(ws.train("r1", "--seed 9 --iterations 4").code == 0);
  REQUIRE(ws.train("r2", "--seed 9 --iterations 4").code == 0);
  CHECK(test::read_bytes(ws.dir / "r1/checkpoint.ckpt") == test::read_bytes(ws.dir / "r2/checkpoint.ckpt"));

  REQUIRE(ws.train("half", "--seed 9 --iterations 2").code == 0);
  REQUIRE(run("train --manifest " + ws.p("data/train.csv") + " --output-dir " + ws.p("half") + " --resume " +
                  ws.p("half/checkpoint.ckpt") + " --iterations 4",
              ws.dir)
              .code == 0);
  CHECK(test::read_bytes(ws.dir / "half/checkpoint.ckpt") == test::read_bytes(ws.dir / "r1/checkpoint.ckpt"));
  const std::string metrics = test::read_bytes(ws.dir / "half/metrics.csv");
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 5);
}

TEST_CASE("eval: report, curves, plots; missing ground truth exits 2") {
  Workspace ws;
  REQUIRE(ws.train("run").code == 0);
  const Result r = run("eval --checkpoint " + ws.p("run/checkpoint.ckpt") + " --manifest " + ws.p("data/test.csv") +
                           " --output-dir " + ws.p("eval") + " --plot",
                       ws.dir);
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j["n_videos"] == 4);
  CHECK(j["n_frames"] == 4 * 32);
  CHECK(j["auc"].get<double>() >= 0.0);
  CHECK(fs::exists(ws.dir / "eval/report.json"));
  CHECK(fs::exists(ws.dir / "eval/curves/test_abnormal_0000.csv"));
  CHECK(fs::exists(ws.dir / "eval/plots/test_abnormal_0000.svg"));

  std::string manifest = test::read_bytes(ws.dir / "data/test.csv");
  const auto cut = manifest.rfind(",gt/");
  manifest = manifest.substr(0, cut + 1) + "\n";
  test::write_text(ws.dir / "data/test_nogt.csv", manifest);
  const Result bad = run("eval --checkpoint " + ws.p("run/checkpoint.ckpt") + " --manifest " +
                             ws.p("data/test_nogt.csv") + " --output-dir " + ws.p("eval2"),
                         ws.dir);
  CHECK(bad.code == 2);
  CHECK(bad.err.find("gt") != std::string::npos);
}

TEST_CASE("score: frame_count rows, deterministic, corrupt input exits 2") {
  Workspace ws;
  REQUIRE(ws.train("run").code == 0);
  const std::string feat = ws.p("data/features/test_abnormal_0001.dnf");
  const Result a = run("score --checkpoint " + ws.p("run/checkpoint.ckpt") + " --features " + feat, ws.dir);
  REQUIRE(a.code == 0);
  CHECK(std::count(a.out.begin(), a.out.end(), '\n') == 1 + 8 * 16);
  const Result b = run("score --checkpoint " + ws.p("run/checkpoint.ckpt") + " --features " + feat, ws.dir);
  CHECK(a.out == b.out);
  const Result c = run("score --checkpoint " + ws.p("run/checkpoint.ckpt") + " --features " + feat +
                           " --frame-count 50 --output-dir " + ws.p("scores"),
                       ws.dir);
  REQUIRE(c.code == 0);
  const std::string csv = test::read_bytes(ws.dir / "scores/test_abnormal_0001_scores.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 51);

  std::string bytes = test::read_bytes(feat);
  bytes[1] = '?';
  test::write_text(ws.dir / "corrupt.dnf", bytes);
  const Result d = run("score --checkpoint " + ws.p("run/checkpoint.ckpt") + " --features " + ws.p("corrupt.dnf"),
                       ws.dir);
  CHECK(d.code == 2);
  CHECK(d.err.find("corrupt.dnf") != std::string::npos);
}
