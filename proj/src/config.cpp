#include "transzero/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "transzero/checkpoint.hpp"

namespace tz {

using Json = nlohmann::ordered_json;

namespace {

Json to_tree(const RunConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["precision"] = c.precision;
  j["env"] = {{"size", c.env.size}, {"lava_tiles", c.env.lava_tiles}, {"max_steps", c.env.max_steps}};
  j["network"] = {{"d_model", c.network.d_model},
                  {"layers", c.network.layers},
                  {"heads", c.network.heads},
                  {"ffn_hidden", c.network.ffn_hidden},
                  {"representation_hidden", c.network.representation_hidden},
                  {"head_hidden", c.network.head_hidden},
                  {"scale_latents", c.network.scale_latents}};
  const auto& p = c.planner;
  j["planner"] = {{"mode", to_string(p.mode)},
                  {"num_simulations", p.num_simulations},
                  {"subtree_layers", p.subtree_layers},
                  {"temperature", p.temperature},
                  {"beta", p.mvc.beta},
                  {"c_puct", p.mvc.c_puct},
                  {"gamma", p.mvc.gamma},
                  {"reward_variance", p.mvc.reward_variance},
                  {"value_variance", p.mvc.value_variance},
                  {"normalize_q", p.mvc.normalize_q},
                  {"dirichlet_alpha", p.dirichlet_alpha},
                  {"dirichlet_fraction", p.dirichlet_fraction},
                  {"max_depth", p.max_depth},
                  {"max_nodes", p.max_nodes}};
  const auto& t = c.train;
  j["train"] = {{"episodes", t.episodes},
                {"updates_per_episode", t.updates_per_episode},
                {"batch_size", t.batch_size},
                {"unroll_steps", t.unroll_steps},
                {"td_steps", t.td_steps},
                {"value_weight", t.loss.value},
                {"reward_weight", t.loss.reward},
                {"policy_weight", t.loss.policy},
                {"learning_rate", t.adam.learning_rate},
                {"beta1", t.adam.beta1},
                {"beta2", t.adam.beta2},
                {"epsilon", t.adam.epsilon},
                {"max_grad_norm", t.max_grad_norm},
                {"buffer_capacity", t.buffer_capacity},
                {"warmup_episodes", t.warmup_episodes},
                {"log_interval", t.log_interval},
                {"checkpoint_interval", t.checkpoint_interval},
                {"late_temperature", t.late_temperature},
                {"log_timing", t.log_timing}};
  j["eval"] = {{"episodes", c.eval_episodes}};
  j["bench"] = {{"simulations", c.bench.simulations}, {"layers", c.bench.layers},
                {"repetitions", c.bench.repetitions}, {"warmup", c.bench.warmup},
                {"width", c.bench.width},             {"tolerance", c.bench.tolerance}};
  return j;
}

// Overlays `patch` onto `base`, rejecting keys and value kinds the defaults
// do not have.
void overlay(Json& base, const Json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError((where.empty() ? "config" : where) + ": expected an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw ConfigError(path + ": unknown field");
    Json& slot = base[key];
    if (slot.is_object()) {
      overlay(slot, value, path);
    } else if (slot.is_number() && value.is_number()) {
      if (slot.is_number_integer() && !value.is_number_integer()) {
        throw ConfigError(path + ": expected an integer, got " + value.dump());
      }
      if (slot.is_number_unsigned() && value.is_number_integer() && value.get<std::int64_t>() < 0) {
        throw ConfigError(path + ": must be non-negative");
      }
      slot = value;
    } else if (slot.type() == value.type()) {
      slot = value;
    } else {
      throw ConfigError(path + ": expected " + std::string(slot.type_name()) + ", got " + value.dump());
    }
  }
}

RunConfig from_tree(const Json& j) {
  RunConfig c;
  c.seed = j["seed"].get<std::uint64_t>();
  c.output_dir = j["output_dir"].get<std::string>();
  c.precision = j["precision"].get<std::string>();
  const auto& e = j["env"];
  c.env.size = e["size"].get<int>();
  c.env.lava_tiles = e["lava_tiles"].get<int>();
  c.env.max_steps = e["max_steps"].get<int>();
  const auto& n = j["network"];
  c.network.d_model = n["d_model"].get<int>();
  c.network.layers = n["layers"].get<int>();
  c.network.heads = n["heads"].get<int>();
  c.network.ffn_hidden = n["ffn_hidden"].get<int>();
  c.network.representation_hidden = n["representation_hidden"].get<int>();
  c.network.head_hidden = n["head_hidden"].get<int>();
  c.network.scale_latents = n["scale_latents"].get<bool>();
  const auto& p = j["planner"];
  c.planner.mode = parse_planner_mode(p["mode"].get<std::string>());
  c.planner.num_simulations = p["num_simulations"].get<int>();
  c.planner.subtree_layers = p["subtree_layers"].get<int>();
  c.planner.temperature = p["temperature"].get<double>();
  c.planner.mvc.beta = p["beta"].get<double>();
  c.planner.mvc.c_puct = p["c_puct"].get<double>();
  c.planner.mvc.gamma = p["gamma"].get<double>();
  c.planner.mvc.reward_variance = p["reward_variance"].get<double>();
  c.planner.mvc.value_variance = p["value_variance"].get<double>();
  c.planner.mvc.normalize_q = p["normalize_q"].get<bool>();
  c.planner.dirichlet_alpha = p["dirichlet_alpha"].get<double>();
  c.planner.dirichlet_fraction = p["dirichlet_fraction"].get<double>();
  c.planner.max_depth = p["max_depth"].get<int>();
  c.planner.max_nodes = p["max_nodes"].get<std::size_t>();
  const auto& t = j["train"];
  c.train.episodes = t["episodes"].get<int>();
  c.train.updates_per_episode = t["updates_per_episode"].get<int>();
  c.train.batch_size = t["batch_size"].get<int>();
  c.train.unroll_steps = t["unroll_steps"].get<int>();
  c.train.td_steps = t["td_steps"].get<int>();
  c.train.loss.value = t["value_weight"].get<double>();
  c.train.loss.reward = t["reward_weight"].get<double>();
  c.train.loss.policy = t["policy_weight"].get<double>();
  c.train.adam.learning_rate = t["learning_rate"].get<double>();
  c.train.adam.beta1 = t["beta1"].get<double>();
  c.train.adam.beta2 = t["beta2"].get<double>();
  c.train.adam.epsilon = t["epsilon"].get<double>();
  c.train.max_grad_norm = t["max_grad_norm"].get<double>();
  c.train.buffer_capacity = t["buffer_capacity"].get<std::size_t>();
  c.train.warmup_episodes = t["warmup_episodes"].get<int>();
  c.train.log_interval = t["log_interval"].get<int>();
  c.train.checkpoint_interval = t["checkpoint_interval"].get<int>();
  c.train.late_temperature = t["late_temperature"].get<double>();
  c.train.log_timing = t["log_timing"].get<bool>();
  c.eval_episodes = j["eval"]["episodes"].get<int>();
  const auto& b = j["bench"];
  c.bench.simulations = b["simulations"].get<std::vector<int>>();
  c.bench.layers = b["layers"].get<std::vector<int>>();
  c.bench.repetitions = b["repetitions"].get<int>();
  c.bench.warmup = b["warmup"].get<int>();
  c.bench.width = b["width"].get<int>();
  c.bench.tolerance = b["tolerance"].get<double>();
  return c;
}

RunConfig parse_tree(const Json& patch) {
  Json tree = to_tree(RunConfig{});
  overlay(tree, patch, "");
  RunConfig c;
  try {
    c = from_tree(tree);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace

void RunConfig::validate() const {
  if (precision != "float32" && precision != "float64") throw ConfigError("precision must be float32 or float64");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  env.validate();
  network_for(*this).validate();
  planner.validate();
  train.validate();
  if (eval_episodes < 1) throw ConfigError("eval.episodes must be positive");
  bench.validate();
}

NetworkConfig network_for(const RunConfig& config) {
  NetworkConfig n = config.network;
  const GridWorld probe(config.env);
  n.observation_size = probe.observation_size();
  n.num_actions = probe.num_actions();
  return n;
}

std::uint64_t config_hash(const RunConfig& config) {
  const Json j = to_tree(config);
  const std::string key = Json{{"env", j["env"]}, {"network", j["network"]}, {"precision", j["precision"]}}.dump();
  return fnv1a64(key.data(), key.size());
}

std::uint64_t experiment_hash(const RunConfig& config) {
  Json j = to_tree(config);
  j.erase("seed");
  j.erase("output_dir");
  const std::string key = j.dump();
  return fnv1a64(key.data(), key.size());
}

std::string to_json(const RunConfig& config) { return to_tree(config).dump(2) + "\n"; }

RunConfig parse_config(const std::string& json_text) {
  Json patch;
  try {
    patch = Json::parse(json_text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_tree(patch);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  Json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t dot; (dot = rest.find('.')) != std::string::npos; rest = rest.substr(dot + 1)) {
    parts.push_back(rest.substr(0, dot));
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = Json{{*it, patch}};
  Json tree = to_tree(config);
  overlay(tree, patch, "");
  config = parse_tree(tree);
}

}  // namespace tz
