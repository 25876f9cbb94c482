// transzero train | eval | bench | plot
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or usage.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "transzero/bench.hpp"
#include "transzero/checkpoint.hpp"
#include "transzero/config.hpp"
#include "transzero/plot.hpp"

namespace {

using namespace tz;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg;
  if (!c.config_path.empty()) {
    if (!std::filesystem::exists(c.config_path)) throw ConfigError("config file not found: " + c.config_path);
    cfg = load_config(c.config_path);
  }
  if (const char* env = std::getenv("TRANSZERO_OUT"); env != nullptr && *env != '\0') cfg.output_dir = env;
  for (const auto& o : c.overrides) apply_override(cfg, o);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ResourceError("cannot write " + path.string());
  out << text;
}

void on_interrupt(int) { stop_flag().store(true); }

template <typename Scalar>
int run_train(const RunConfig& cfg) {
  const std::filesystem::path dir = cfg.output_dir;
  std::filesystem::create_directories(dir);
  write_text(dir / "config.json", to_json(cfg));
  GridWorld env(cfg.env);
  NetworkBundle<Scalar> nets(network_for(cfg), cfg.seed);
  std::signal(SIGINT, on_interrupt);
  std::signal(SIGTERM, on_interrupt);
  const auto summary = train(cfg.train, cfg.planner, nets, env, cfg.seed, config_hash(cfg), dir);
  std::cout << (summary.interrupted ? "interrupted" : "finished") << " after " << summary.episodes << " episodes, "
            << summary.gradient_steps << " gradient steps; outputs in " << dir.string() << "\n";
  return 0;
}

template <typename Scalar>
NetworkBundle<Scalar> load_networks(const RunConfig& cfg, const std::string& checkpoint) {
  NetworkBundle<Scalar> nets(network_for(cfg), cfg.seed);
  if (checkpoint.empty()) return nets;
  if (!std::filesystem::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint);
  const auto ckpt = read_checkpoint(checkpoint);
  if (ckpt.config_hash != config_hash(cfg)) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "checkpoint hash %016llx does not match config hash %016llx",
                  static_cast<unsigned long long>(ckpt.config_hash), static_cast<unsigned long long>(config_hash(cfg)));
    throw ConfigError(buf);
  }
  load_parameters(nets.parameters(), ckpt);
  return nets;
}

template <typename Scalar>
int run_eval(const RunConfig& cfg, const std::string& checkpoint, int episodes) {
  const auto nets = load_networks<Scalar>(cfg, checkpoint);
  GridWorld env(cfg.env);
  const auto s = evaluate(nets, env, cfg.planner, episodes, cfg.seed);
  std::printf("mean_reward %.4f +- %.4f (stderr, %d episodes)\n", s.mean_reward, s.standard_error, s.episodes);
  const std::filesystem::path dir = cfg.output_dir;
  std::filesystem::create_directories(dir);
  char buf[128];
  std::snprintf(buf, sizeof buf, "episodes,mean_reward,stderr\n%d,%.6f,%.6f\n", s.episodes, s.mean_reward,
                s.standard_error);
  write_text(dir / "eval.csv", buf);
  return 0;
}

template <typename Scalar>
int run_bench_cmd(const RunConfig& cfg, const std::string& checkpoint) {
  const auto nets = load_networks<Scalar>(cfg, checkpoint);
  GridWorld env(cfg.env);
  const auto obs = env.reset(episode_seed(cfg.seed, 0));
  const std::vector<Scalar> cast(obs.begin(), obs.end());
  const auto rows = run_bench<Scalar>(nets, cast, cfg.planner, cfg.bench);
  const std::string csv = speedup_report(rows);
  const std::filesystem::path dir = cfg.output_dir;
  std::filesystem::create_directories(dir);
  write_text(dir / "bench.csv", csv);
  std::cout << csv;
  return 0;
}

int run_plot(const std::vector<std::string>& inputs, const std::string& output) {
  std::map<std::string, std::vector<std::vector<MetricsRow>>> groups;
  for (const auto& file : inputs) {
    auto rows = read_metrics_csv(file);
    std::string label = std::filesystem::path(file).stem().string();
    const auto snapshot = std::filesystem::path(file).parent_path() / "config.json";
    if (std::filesystem::exists(snapshot)) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%016llx",
                    static_cast<unsigned long long>(experiment_hash(load_config(snapshot))));
      label = buf;
    }
    groups[label].push_back(std::move(rows));
  }
  std::vector<Curve> curves;
  for (const auto& [label, runs] : groups) curves.push_back(aggregate_runs(label, runs));
  const std::filesystem::path out = output;
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  write_text(out, render_svg(curves));
  std::cout << "wrote " << out.string() << " (" << curves.size() << " group" << (curves.size() == 1 ? "" : "s")
            << ")\n";
  return 0;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "JSON config file");
  cmd->add_option("--set", c.overrides, "Override a field, e.g. --set planner.num_simulations=8");
  cmd->add_option("--seed", c.seed, "Run seed");
  cmd->add_option("-o,--out", c.out, "Output directory (overrides TRANSZERO_OUT and the config)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TransZero: parallel subtree expansion with a transformer dynamics model"};
  app.require_subcommand(1);

  Common common;
  int episodes_flag = 0;
  std::string checkpoint;
  std::vector<std::string> plot_inputs;
  std::string plot_output;

  auto* train_cmd = app.add_subcommand("train", "Self-play training");
  add_common(train_cmd, common);
  train_cmd->add_option("--episodes", episodes_flag, "Number of self-play episodes");

  auto* eval_cmd = app.add_subcommand("eval", "Greedy evaluation of a checkpoint");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--episodes", episodes_flag, "Evaluation episodes");

  auto* bench_cmd = app.add_subcommand("bench", "Time parallel vs sequential planning");
  add_common(bench_cmd, common);
  bench_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file (default: freshly initialized weights)");

  auto* plot_cmd = app.add_subcommand("plot", "Learning curves from metrics CSVs");
  plot_cmd->add_option("csv", plot_inputs, "metrics.csv files")->required();
  plot_cmd->add_option("-o,--out", plot_output, "Output SVG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (plot_cmd->parsed()) return run_plot(plot_inputs, plot_output);
    if (episodes_flag != 0 && train_cmd->parsed()) {
      common.overrides.push_back("train.episodes=" + std::to_string(episodes_flag));
    }
    RunConfig cfg = resolve(common);
    const bool f64 = cfg.precision == "float64";
    if (train_cmd->parsed()) return f64 ? run_train<double>(cfg) : run_train<float>(cfg);
    if (eval_cmd->parsed()) {
      const int n = episodes_flag != 0 ? episodes_flag : cfg.eval_episodes;
      if (n < 1) throw ConfigError("--episodes must be at least 1");
      return f64 ? run_eval<double>(cfg, checkpoint, n) : run_eval<float>(cfg, checkpoint, n);
    }
    return f64 ? run_bench_cmd<double>(cfg, checkpoint) : run_bench_cmd<float>(cfg, checkpoint);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
