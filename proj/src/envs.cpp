#include "transzero/envs.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <random>
#include <sstream>

namespace tz {

namespace {

constexpr std::array<Cell, 4> kHeading = {Cell{1, 0}, Cell{0, 1}, Cell{-1, 0}, Cell{0, -1}};
constexpr char kAgentGlyph[4] = {'>', 'v', '<', '^'};

bool inside(const GridLayout& l, Cell c) { return c.x >= 0 && c.y >= 0 && c.x < l.size && c.y < l.size; }

Cell ahead(Cell c, int orientation) {
  return {c.x + kHeading[static_cast<std::size_t>(orientation)].x, c.y + kHeading[static_cast<std::size_t>(orientation)].y};
}

}  // namespace

bool GridLayout::is_lava(Cell c) const { return std::find(lava.begin(), lava.end(), c) != lava.end(); }

std::string dump_layout(const GridLayout& layout) {
  std::string out;
  for (int y = 0; y < layout.size; ++y) {
    for (int x = 0; x < layout.size; ++x) {
      const Cell c{x, y};
      char g = '.';
      if (layout.is_lava(c)) g = 'L';
      if (c == layout.goal) g = 'G';
      if (c == layout.agent) g = kAgentGlyph[layout.orientation];
      out.push_back(g);
    }
    out.push_back('\n');
  }
  return out;
}

GridLayout load_layout(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> rows;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) rows.push_back(line);
  }
  GridLayout l;
  l.size = static_cast<int>(rows.size());
  bool agent = false, goal = false;
  for (int y = 0; y < l.size; ++y) {
    if (static_cast<int>(rows[static_cast<std::size_t>(y)].size()) != l.size) {
      throw ConfigError("layout row " + std::to_string(y + 1) + " has " +
                        std::to_string(rows[static_cast<std::size_t>(y)].size()) + " cells, expected " +
                        std::to_string(l.size));
    }
    for (int x = 0; x < l.size; ++x) {
      const char g = rows[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)];
      const Cell c{x, y};
      switch (g) {
        case '.':
          break;
        case 'L':
          l.lava.push_back(c);
          break;
        case 'G':
          l.goal = c;
          goal = true;
          break;
        default: {
          const char* at = std::find(std::begin(kAgentGlyph), std::end(kAgentGlyph), g);
          if (at == std::end(kAgentGlyph)) {
            throw ConfigError("layout row " + std::to_string(y + 1) + ": unknown cell '" + std::string(1, g) + "'");
          }
          if (agent) throw ConfigError("layout has more than one agent");
          l.agent = c;
          l.orientation = static_cast<int>(at - std::begin(kAgentGlyph));
          agent = true;
        }
      }
    }
  }
  if (!agent || !goal) throw ConfigError("layout needs exactly one agent and one goal");
  return l;
}

int optimal_steps(const GridLayout& layout) {
  const int n = layout.size;
  auto index = [n](Cell c, int o) { return (c.y * n + c.x) * 4 + o; };
  std::vector<int> dist(static_cast<std::size_t>(n * n * 4), -1);
  std::deque<std::pair<Cell, int>> queue;
  dist[static_cast<std::size_t>(index(layout.agent, layout.orientation))] = 0;
  queue.emplace_back(layout.agent, layout.orientation);
  while (!queue.empty()) {
    const auto [c, o] = queue.front();
    queue.pop_front();
    const int d = dist[static_cast<std::size_t>(index(c, o))];
    const Cell f = ahead(c, o);
    if (inside(layout, f) && f == layout.goal) return d + 1;
    std::array<std::pair<Cell, int>, 3> moves = {std::pair{c, (o + 3) % 4}, std::pair{c, (o + 1) % 4},
                                                 std::pair{inside(layout, f) && !layout.is_lava(f) ? f : c, o}};
    for (const auto& [nc, no] : moves) {
      auto& slot = dist[static_cast<std::size_t>(index(nc, no))];
      if (slot < 0) {
        slot = d + 1;
        queue.emplace_back(nc, no);
      }
    }
  }
  throw StructuralError("goal unreachable from the start state");
}

void GridWorldConfig::validate() const {
  if (size != 3 && size != 5 && size != 8) throw ConfigError("env.size must be 3, 5 or 8");
  if (lava_tiles < 0 || lava_tiles > size * size - 2) throw ConfigError("env.lava_tiles out of range");
  if (max_steps < 0) throw ConfigError("env.max_steps must be non-negative");
}

GridWorld::GridWorld(GridWorldConfig config) : config_(config) {
  config_.validate();
  max_steps_ = config_.max_steps > 0 ? config_.max_steps : 4 * config_.size * config_.size;
}

GridLayout GridWorld::sample_layout(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  const int n = config_.size;
  const Cell goal{n - 1, n - 1};
  std::uniform_int_distribution<int> cell(0, n * n - 1);
  std::uniform_int_distribution<int> heading(0, 3);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    GridLayout l;
    l.size = n;
    l.goal = goal;
    while (static_cast<int>(l.lava.size()) < config_.lava_tiles) {
      const int k = cell(rng);
      const Cell c{k % n, k / n};
      if (c == goal || l.is_lava(c)) continue;
      l.lava.push_back(c);
    }
    do {
      const int k = cell(rng);
      l.agent = {k % n, k / n};
    } while (l.agent == goal || l.is_lava(l.agent));
    l.orientation = heading(rng);
    try {
      optimal_steps(l);
      return l;
    } catch (const StructuralError&) {
    }
  }
  throw ConfigError("no connected layout found in 1000 attempts");
}

std::vector<double> GridWorld::reset(std::uint64_t seed) { return reset_to(sample_layout(seed)); }

std::vector<double> GridWorld::reset_to(const GridLayout& layout) {
  if (layout.size != config_.size) throw ConfigError("layout size does not match env.size");
  optimal_ = optimal_steps(layout);
  layout_ = layout;
  start_ = layout;
  steps_ = 0;
  done_ = false;
  return observation();
}

std::vector<double> GridWorld::observation() const {
  const int n = config_.size;
  std::vector<double> obs(static_cast<std::size_t>(kChannels * n * n), 0.0);
  auto put = [&](Cell c, int channel) { obs[static_cast<std::size_t>((c.y * n + c.x) * kChannels + channel)] = 1.0; };
  put(layout_.agent, layout_.orientation);
  for (const auto& c : layout_.lava) put(c, 4);
  put(layout_.goal, 5);
  return obs;
}

StepResult GridWorld::step(int action) {
  if (done_) throw UsageError("step() after the episode ended; call reset()");
  if (action < 0 || action > 2) throw UsageError("grid action must be 0 (left), 1 (right) or 2 (forward)");
  ++steps_;
  StepResult r;
  switch (action) {
    case kTurnLeft:
      layout_.orientation = (layout_.orientation + 3) % 4;
      break;
    case kTurnRight:
      layout_.orientation = (layout_.orientation + 1) % 4;
      break;
    default: {
      const Cell f = ahead(layout_.agent, layout_.orientation);
      if (inside(layout_, f)) layout_.agent = f;
    }
  }
  if (layout_.is_lava(layout_.agent)) {
    done_ = true;
  } else if (layout_.agent == layout_.goal) {
    done_ = true;
    r.reward = 5.0 + 5.0 * static_cast<double>(optimal_) / static_cast<double>(steps_);
  } else if (steps_ >= max_steps_) {
    done_ = true;
  }
  r.done = done_;
  r.observation = observation();
  return r;
}

ChainMdp::ChainMdp(int length, double gamma) : length_(length), gamma_(gamma) {
  if (length < 2) throw ConfigError("chain length must be at least 2");
  if (!(gamma >= 0 && gamma <= 1)) throw ConfigError("chain gamma must lie in [0, 1]");
}

std::vector<double> ChainMdp::reset(std::uint64_t) {
  position_ = 0;
  steps_ = 0;
  done_ = false;
  return observation();
}

ChainMdp::Transition ChainMdp::transition(int cell, int action) const {
  if (cell == length_ - 1) return {cell, 1.0, true};
  return {action == 1 ? cell + 1 : std::max(cell - 1, 0), 0.0, false};
}

StepResult ChainMdp::step(int action) {
  if (done_) throw UsageError("step() after the episode ended; call reset()");
  if (action < 0 || action > 1) throw UsageError("chain action must be 0 or 1");
  const auto t = transition(position_, action);
  position_ = t.next;
  ++steps_;
  done_ = t.terminal || steps_ >= step_limit();
  return {observation(), t.reward, done_};
}

std::vector<double> ChainMdp::observation() const {
  std::vector<double> obs(static_cast<std::size_t>(length_), 0.0);
  obs[static_cast<std::size_t>(position_)] = 1.0;
  return obs;
}

std::vector<double> ChainMdp::optimal_values(double tolerance) const {
  std::vector<double> v(static_cast<std::size_t>(length_), 0.0);
  for (int sweep = 0; sweep < 100000; ++sweep) {
    double change = 0.0;
    for (int i = 0; i < length_; ++i) {
      double best = -1e300;
      for (int a = 0; a < 2; ++a) {
        const auto t = transition(i, a);
        best = std::max(best, t.reward + (t.terminal ? 0.0 : gamma_ * v[static_cast<std::size_t>(t.next)]));
      }
      change = std::max(change, std::abs(best - v[static_cast<std::size_t>(i)]));
      v[static_cast<std::size_t>(i)] = best;
    }
    if (change <= tolerance) break;
  }
  return v;
}

}  // namespace tz
