#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "transzero/bench.hpp"
#include "transzero/config.hpp"
#include "transzero/plot.hpp"

namespace fs = std::filesystem;
using namespace tz;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "tz_cli_test";

struct Result {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

Result cli(const std::string& args) {
  fs::create_directories(kRoot);
  const auto out = kRoot / "stdout.txt", err = kRoot / "stderr.txt";
  const std::string cmd = std::string("\"") + TZ_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

// Small enough that a few episodes take well under a second.
fs::path tiny_config() {
  const auto p = kRoot / "tiny.json";
  spit(p, R"({"network": {"d_model": 8, "ffn_hidden": 16, "representation_hidden": 16, "head_hidden": 8},
              "planner": {"num_simulations": 2, "subtree_layers": 1},
              "train": {"batch_size": 4, "unroll_steps": 2, "warmup_episodes": 1, "updates_per_episode": 1},
              "bench": {"simulations": [2], "layers": [1, 2], "repetitions": 10, "warmup": 1}})");
  return p;
}

std::string metrics_csv(const std::vector<double>& rewards, double plan_ms) {
  std::ostringstream s;
  s << kMetricsHeader << "\n";
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    MetricsRow r;
    r.step = static_cast<std::int64_t>(i);
    r.episodes = static_cast<int>(i + 1);
    r.env_steps = static_cast<std::int64_t>(10 * (i + 1));
    r.mean_reward = rewards[i];
    r.plan_ms = plan_ms;
    s << format_metrics_row(r) << "\n";
  }
  return s.str();
}

}  // namespace

TEST_CASE("missing config exits 2 and names the path") {
  const auto r = cli("train -c /nonexistent/run.json");
  CHECK(r.code == 2);
  CHECK(r.err.find("/nonexistent/run.json") != std::string::npos);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("train --set planner.bogus=1 -o " + (kRoot / "x").string()).code == 2);
  CHECK(cli("train --set planner.num_simulations=\"\\\"four\\\"\" -o " + (kRoot / "x").string()).code == 2);
}

TEST_CASE("train writes metrics, config snapshot, and checkpoint; reruns are byte-identical") {
  const auto cfg = tiny_config();
  const auto a = kRoot / "run_a", b = kRoot / "run_b";
  fs::remove_all(a);
  fs::remove_all(b);
  REQUIRE(cli("train -c " + cfg.string() + " --episodes 1 -o " + a.string()).code == 0);
  std::istringstream lines(slurp(a / "metrics.csv"));
  std::string header, row;
  std::getline(lines, header);
  CHECK(header == kMetricsHeader);
  CHECK(std::getline(lines, row));
  CHECK(fs::exists(a / "checkpoint.bin"));

  REQUIRE(cli("train -c " + cfg.string() + " --episodes 4 --seed 3 -o " + a.string()).code == 0);
  REQUIRE(cli("train -c " + cfg.string() + " --episodes 4 --seed 3 -o " + b.string()).code == 0);
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
  CHECK(slurp(a / "checkpoint.bin") == slurp(b / "checkpoint.bin"));

  // The snapshot reproduces the run configuration exactly.
  const auto snap = load_config(a / "config.json");
  CHECK(snap.seed == 3);
  CHECK(snap.train.episodes == 4);
  CHECK(to_json(snap) == slurp(a / "config.json"));
  CHECK(parse_config(to_json(snap)) == snap);
}

TEST_CASE("output directory precedence: file, environment, flag") {
  const auto cfg = tiny_config();
  const auto env_dir = kRoot / "from_env", flag_dir = kRoot / "from_flag";
  fs::remove_all(env_dir);
  fs::remove_all(flag_dir);
  const std::string base = "train -c " + cfg.string() + " --episodes 1";
  CHECK(std::system(("TRANSZERO_OUT=" + env_dir.string() + " \"" + TZ_CLI_PATH + "\" " + base + " >/dev/null").c_str()) == 0);
  CHECK(fs::exists(env_dir / "metrics.csv"));
  CHECK(std::system(("TRANSZERO_OUT=" + env_dir.string() + " \"" + TZ_CLI_PATH + "\" " + base + " -o " +
                     flag_dir.string() + " >/dev/null").c_str()) == 0);
  CHECK(fs::exists(flag_dir / "metrics.csv"));
}

TEST_CASE("eval checks the checkpoint hash and reports mean and standard error") {
  const auto cfg = tiny_config();
  const auto dir = kRoot / "eval_run";
  fs::remove_all(dir);
  REQUIRE(cli("train -c " + cfg.string() + " --episodes 2 -o " + dir.string()).code == 0);
  const auto ckpt = (dir / "checkpoint.bin").string();

  auto r = cli("eval -c " + cfg.string() + " --checkpoint " + ckpt + " --episodes 1 -o " + dir.string());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("+- 0.0000") != std::string::npos);

  r = cli("eval -c " + cfg.string() + " --checkpoint " + ckpt + " --episodes 10 -o " + dir.string());
  REQUIRE(r.code == 0);
  std::istringstream csv(slurp(dir / "eval.csv"));
  std::string header, line;
  std::getline(csv, header);
  std::getline(csv, line);
  CHECK(header == "episodes,mean_reward,stderr");
  CHECK(line.rfind("10,", 0) == 0);
  CHECK(std::stod(line.substr(3)) >= 0.0);

  r = cli("eval -c " + cfg.string() + " --set network.d_model=12 --checkpoint " + ckpt + " -o " + dir.string());
  CHECK(r.code == 2);
  CHECK(r.err.find("hash") != std::string::npos);
  CHECK(cli("eval -c " + cfg.string() + " --checkpoint " + (dir / "nope.bin").string()).code == 2);
}

TEST_CASE("bench writes the speedup table") {
  const auto dir = kRoot / "bench_run";
  fs::remove_all(dir);
  REQUIRE(cli("bench -c " + tiny_config().string() + " -o " + dir.string()).code == 0);
  std::istringstream csv(slurp(dir / "bench.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == kBenchHeader);
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    if (rows == 1) CHECK(line.rfind("seq_mvc,", 0) == 0);
    if (rows == 1) CHECK(line.substr(line.rfind(',') + 1) == "1.000000");
  }
  CHECK(rows == 4);
  CHECK(cli("bench --set bench.width=2 -o " + dir.string()).code == 2);
}

TEST_CASE("speedup_report needs a sequential baseline") {
  BenchRow par;
  par.mode = PlannerMode::parallel_mvc;
  par.num_simulations = 4;
  par.nodes_expanded = 168;
  par.median_ms = 1.0;
  par.time_per_node_us = 1000.0 / 168;
  CHECK_THROWS_AS(speedup_report({par}), UsageError);
  BenchRow seq = par;
  seq.mode = PlannerMode::seq_mvc;
  seq.time_per_node_us = 2000.0 / 168;
  const auto report = speedup_report({seq, par});
  CHECK(report.find("1.000000") != std::string::npos);
  CHECK(report.find("0.500000") != std::string::npos);
}

TEST_CASE("plot rejects bad inputs with the file and line") {
  const auto dir = kRoot / "plot_bad";
  spit(dir / "empty.csv", std::string(kMetricsHeader) + "\n");
  auto r = cli("plot " + (dir / "empty.csv").string() + " -o " + (dir / "x.svg").string());
  CHECK(r.code == 2);
  CHECK(r.err.find("empty.csv") != std::string::npos);

  spit(dir / "bad.csv", metrics_csv({1.0, 2.0}, 0.0) + "3,3,30,abc,0,0,0,0,0\n");
  r = cli("plot " + (dir / "bad.csv").string() + " -o " + (dir / "x.svg").string());
  CHECK(r.code == 2);
  CHECK(r.err.find("bad.csv:4") != std::string::npos);
  CHECK(!fs::exists(dir / "x.svg"));
}

TEST_CASE("plot aggregates runs that share an experiment") {
  const auto dir = kRoot / "plot_ok";
  fs::remove_all(dir);
  const std::vector<std::vector<double>> rewards = {{1.0, 2.0, 4.0}, {3.0, 2.0, 8.0}, {2.0, 5.0}};
  RunConfig cfg;
  std::string args = "plot";
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    const auto sub = dir / ("s" + std::to_string(i));
    cfg.seed = i;  // the seed does not split the group
    spit(sub / "metrics.csv", metrics_csv(rewards[i], 2.0));
    spit(sub / "config.json", to_json(cfg));
    args += " " + (sub / "metrics.csv").string();
  }
  const auto svg = dir / "curve.svg";
  REQUIRE(cli(args + " -o " + svg.string()).code == 0);
  const auto text = slurp(svg);
  CHECK(text.rfind("<svg", 0) == 0);
  CHECK(text.find("class='band'") != std::string::npos);

  std::vector<std::vector<MetricsRow>> runs;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    runs.push_back(read_metrics_csv(dir / ("s" + std::to_string(i)) / "metrics.csv"));
  }
  const auto curve = aggregate_runs("x", runs);
  REQUIRE(curve.points.size() == 2);  // shortest run
  for (std::size_t j = 0; j < 2; ++j) {
    const double m = (rewards[0][j] + rewards[1][j] + rewards[2][j]) / 3.0;
    double ss = 0.0;
    for (const auto& r : rewards) ss += (r[j] - m) * (r[j] - m);
    CHECK(curve.points[j].mean == doctest::Approx(m).epsilon(1e-12));
    CHECK(curve.points[j].stderr_ == doctest::Approx(std::sqrt(ss / 2.0) / std::sqrt(3.0)).epsilon(1e-12));
    CHECK(curve.points[j].env_steps == doctest::Approx(10.0 * static_cast<double>(j + 1)));
    // 2 ms per planning step, 10 steps per row.
    CHECK(curve.points[j].wall_seconds == doctest::Approx(0.02 * static_cast<double>(j + 1)));
  }

  const auto single = dir / "single.svg";
  REQUIRE(cli("plot " + (dir / "s0" / "metrics.csv").string() + " -o " + single.string()).code == 0);
  CHECK(slurp(single).find("class='band'") == std::string::npos);

  spit(dir / "untimed" / "metrics.csv", metrics_csv({1.0, 2.0}, 0.0));
  REQUIRE(cli("plot " + (dir / "untimed" / "metrics.csv").string() + " -o " + single.string()).code == 0);
  CHECK(slurp(single).find("timing not logged") != std::string::npos);
}
