#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>

#include "test_util.hpp"
#include "uic/pipeline.hpp"

using namespace uic;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

Result run_cli(const std::string& args, const std::filesystem::path& dir) {
  const auto o = dir / "stdout.txt", e = dir / "stderr.txt";
  const std::string cmd = std::string(UIC_CLI_PATH) + " " + args + " >" + o.string() + " 2>" + e.string();
  const int st = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  r.out = io::read_file(o);
  r.err = io::read_file(e);
  return r;
}

// tiny config as INI text so the CLI sees the same settings as the library tests
std::filesystem::path write_config(const std::filesystem::path& dir) {
  const auto c = test::tiny_run(dir);
  const auto path = dir / "tiny.ini";
  io::write_file_atomic(path, config_to_text(c));
  return path;
}

}  // namespace

TEST(Cli, EvalWithoutRefsIsUsageError) {
  const auto dir = test::temp_dir("cli-eval");
  io::write_file_atomic(dir / "c.jsonl", "{\"image_id\":\"a\",\"caption\":\"x\"}\n");
  const auto r = run_cli("eval --candidates " + (dir / "c.jsonl").string() + " --out " + (dir / "r.json").string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--refs"), std::string::npos);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  const auto last = r.err.substr(r.err.rfind('{'));
  EXPECT_EQ(io::json::parse(last).at("error"), "usage");
  EXPECT_FALSE(std::filesystem::exists(dir / "r.json"));
}

TEST(Cli, TrainHelpHasNoSideEffects) {
  const auto dir = test::temp_dir("cli-help");
  const auto r = run_cli("train --help --out " + (dir / "x.ckpt").string(), dir);
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--from"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(dir / "x.ckpt"));
}

TEST(Cli, UnknownSubcommandAndFlag) {
  const auto dir = test::temp_dir("cli-unknown");
  EXPECT_EQ(run_cli("frobnicate", dir).code, 2);
  EXPECT_EQ(run_cli("eval --bogus", dir).code, 2);
}

TEST(Cli, UnknownConfigKeyIsReported) {
  const auto dir = test::temp_dir("cli-badkey");
  const auto r = run_cli("make-toy-world --out " + dir.string() + " --set reward.tua=1", dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(io::json::parse(r.err).at("error"), "input");
}

TEST(Cli, ToyPipelineScript) {
  const auto dir = test::temp_dir("cli-pipeline");
  const auto cfg = write_config(dir).string();
  const auto d = dir.string();
  ASSERT_EQ(run_cli("make-toy-world --config " + cfg + " --out " + d, dir).code, 0);
  ASSERT_EQ(run_cli("embed-corpus --config " + cfg + " --corpus " + d + "/corpus.jsonl --out " + d + "/table.bin", dir).code, 0);
  const std::string with_table = " --config " + cfg + " --set data.corpus_table=" + d + "/table.bin";
  ASSERT_EQ(run_cli("aggregate" + with_table + " --images " + d + "/images.jsonl --corpus-table " + d +
                        "/table.bin --tau 0.05 --out " + d + "/agg.bin",
                    dir)
                .code,
            0);
  auto r = run_cli("init-train" + with_table + " --out " + d + "/init.ckpt --log " + d + "/init.jsonl", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  r = run_cli("train" + with_table + " --from " + d + "/init.ckpt --out " + d + "/final.ckpt --log " + d + "/train.jsonl", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(run_cli("infer --checkpoint " + d + "/final.ckpt --out " + d + "/cands.jsonl", dir).code, 0);
  r = run_cli("eval --no-external --candidates " + d + "/cands.jsonl --refs " + d + "/refs.json --checkpoint " + d +
                  "/final.ckpt --out " + d + "/report.json",
              dir);
  ASSERT_EQ(r.code, 0) << r.err;

  const auto rep = read_report(dir / "report.json");
  EXPECT_EQ(rep.scores.size(), 3u);
  EXPECT_EQ(rep.per_image_cider.size(), 24u);
  EXPECT_EQ(rep.metadata.at("seed"), "1234");
  EXPECT_TRUE(std::filesystem::exists(dir / "report.csv"));
  const auto log = io::read_jsonl(dir / "train.jsonl");
  ASSERT_EQ(log.size(), 6u);
  for (const char* k : {"step", "d_loss", "mean_advantage", "lambda", "mean_reward"}) EXPECT_TRUE(log[0].contains(k)) << k;
  EXPECT_EQ(load_table(dir / "table.bin").rows.size(), 60u);
  EXPECT_EQ(load_aggregates(dir / "agg.bin").rows.size(), 24u);

  // resuming from the finished checkpoint has no steps left
  r = run_cli("train" + with_table + " --from " + d + "/final.ckpt --out " + d + "/again.ckpt", dir);
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(io::read_file(dir / "again.ckpt"), io::read_file(dir / "final.ckpt"));

  r = run_cli("explain --checkpoint " + d + "/final.ckpt --image img3", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ex = io::json::parse(r.out);
  EXPECT_EQ(ex.at("image_id"), "img3");
  EXPECT_EQ(ex.at("prompts").size(), 2u);
  EXPECT_EQ(run_cli("explain --checkpoint " + d + "/final.ckpt --image nope", dir).code, 1);
}

TEST(Cli, Baselines) {
  const auto dir = test::temp_dir("cli-baseline");
  const auto cfg = write_config(dir).string();
  ASSERT_EQ(run_cli("make-toy-world --config " + cfg + " --out " + dir.string(), dir).code, 0);
  auto r = run_cli("baseline --mode retrieval --config " + cfg + " --out " + (dir / "ret").string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_report(dir / "ret" / "report.json").metadata.at("baseline"), "retrieval");
  r = run_cli("baseline --mode pseudo --config " + cfg + " --out " + (dir / "pse").string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(io::read_jsonl(dir / "pse" / "pseudo_labels.jsonl").size(), 24u);
  EXPECT_TRUE(std::filesystem::exists(dir / "pse" / "report.json"));
  EXPECT_EQ(run_cli("baseline --mode other --config " + cfg + " --out " + (dir / "x").string(), dir).code, 2);
}

TEST(Sweep, SinglePointMatchesDirectRun) {
  const auto dir = test::temp_dir("sweep-one");
  auto cfg = test::tiny_run(dir);
  write_toy_world(cfg, dir);
  const auto rows = run_sweep(cfg, grid_points({"reward.tau=0.05"}), dir / "sweep");
  ASSERT_EQ(rows.size(), 1u);
  ASSERT_EQ(rows[0].status, "ok");
  RunOptions opt;
  opt.evaluate_init = false;
  const auto direct = run_pipeline(cfg, opt);
  EXPECT_EQ(rows[0].summary->report.scores, direct.report.scores);
  EXPECT_EQ(rows[0].summary->final_checkpoint, direct.final_checkpoint);
  const auto csv = io::read_file(dir / "sweep" / "sweep.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "reward.tau,BLEU-4,ROUGE-L,CIDEr,METEOR,SPICE,mean_cos,mean_semantic,mean_naturalness,status");
}

TEST(Sweep, TemperatureGridGivesDistinctRewardStatistics) {
  const auto dir = test::temp_dir("sweep-tau");
  auto cfg = test::tiny_run(dir);
  write_toy_world(cfg, dir);
  const auto rows = run_sweep(cfg, grid_points({"reward.tau=0.01,0.05,1.0"}));
  ASSERT_EQ(rows.size(), 3u);
  std::set<double> sem;
  for (const auto& r : rows) {
    ASSERT_EQ(r.status, "ok");
    sem.insert(r.summary->mean_semantic);
  }
  EXPECT_EQ(sem.size(), 3u);
}

TEST(Sweep, FailuresAreRecordedPerRow) {
  const auto dir = test::temp_dir("sweep-fail");
  auto cfg = test::tiny_run(dir);
  write_toy_world(cfg, dir);
  const auto rows = run_sweep(cfg, grid_points({"reward.tau=0.05,-1"}), dir / "out");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].status, "ok");
  EXPECT_NE(rows[1].status.find("error"), std::string::npos);
  EXPECT_NE(io::read_file(dir / "out" / "sweep.csv").find("unavailable"), std::string::npos);
  EXPECT_THROW(grid_points({}), InputError);
  EXPECT_THROW(preset_points("nope"), InputError);
}

TEST(Cli, SweepPresetWritesCsv) {
  const auto dir = test::temp_dir("cli-sweep");
  const auto cfg = write_config(dir).string();
  ASSERT_EQ(run_cli("make-toy-world --config " + cfg + " --out " + dir.string(), dir).code, 0);
  const auto r = run_cli("sweep --preset strategies --config " + cfg + " --out " + (dir / "sw").string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(io::json::parse(r.out).at("failed"), 0);
  const auto csv = io::read_file(dir / "sw" / "sweep.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(run_cli("sweep --config " + cfg + " --out " + (dir / "none").string(), dir).code, 2);
}
