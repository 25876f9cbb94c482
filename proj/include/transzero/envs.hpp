#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "transzero/errors.hpp"

namespace tz {

struct StepResult {
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual int num_actions() const = 0;
  virtual int observation_size() const = 0;
  virtual std::vector<double> reset(std::uint64_t seed) = 0;
  virtual StepResult step(int action) = 0;
  virtual bool done() const = 0;
  virtual int step_limit() const = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;
};

struct Cell {
  int x = 0;
  int y = 0;
  bool operator==(const Cell&) const = default;
};

// Orientation follows MiniGrid: 0 east, 1 south, 2 west, 3 north.
struct GridLayout {
  int size = 0;
  std::vector<Cell> lava;
  Cell agent;
  int orientation = 0;
  Cell goal;

  bool is_lava(Cell c) const;
  bool operator==(const GridLayout&) const = default;
};

// Text form, one row per line (y = 0 first), one character per cell:
// '.' empty, 'L' lava, 'G' goal, and the agent as '>' 'v' '<' '^'.
std::string dump_layout(const GridLayout& layout);
GridLayout load_layout(const std::string& text);

// Fewest actions (turns included) from the layout's start to the goal,
// searching over (cell, orientation) states. Throws StructuralError when the
// goal is unreachable.
int optimal_steps(const GridLayout& layout);

struct GridWorldConfig {
  int size = 3;
  int lava_tiles = 2;
  // 0 means 4 * size^2.
  int max_steps = 0;

  void validate() const;
  bool operator==(const GridWorldConfig&) const = default;
};

class GridWorld : public Environment {
 public:
  enum Action { kTurnLeft = 0, kTurnRight = 1, kForward = 2 };
  static constexpr int kChannels = 6;

  explicit GridWorld(GridWorldConfig config);

  int num_actions() const override { return 3; }
  int observation_size() const override { return kChannels * config_.size * config_.size; }
  std::vector<double> reset(std::uint64_t seed) override;
  StepResult step(int action) override;
  bool done() const override { return done_; }
  int step_limit() const override { return max_steps_; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<GridWorld>(*this); }

  // Starts an episode from a fixed layout instead of a sampled one.
  std::vector<double> reset_to(const GridLayout& layout);

  const GridLayout& layout() const { return layout_; }
  const GridLayout& start_layout() const { return start_; }
  int steps_taken() const { return steps_; }
  int optimal() const { return optimal_; }
  std::vector<double> observation() const;

  // Samples the start layout for `seed` without touching episode state.
  GridLayout sample_layout(std::uint64_t seed) const;

 private:
  GridWorldConfig config_;
  int max_steps_;
  GridLayout layout_;
  GridLayout start_;
  int steps_ = 0;
  int optimal_ = 1;
  bool done_ = true;
};

// Walk along cells 0..n-1: action 1 moves right, action 0 moves left. Any
// action at cell n-1 pays 1 and ends the episode, so the optimal value of
// cell i is gamma^(n-1-i).
class ChainMdp : public Environment {
 public:
  ChainMdp(int length, double gamma);

  int num_actions() const override { return 2; }
  int observation_size() const override { return length_; }
  std::vector<double> reset(std::uint64_t seed) override;
  StepResult step(int action) override;
  bool done() const override { return done_; }
  int step_limit() const override { return 4 * length_; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<ChainMdp>(*this); }

  int position() const { return position_; }
  int length() const { return length_; }
  double gamma() const { return gamma_; }
  // Value iteration to convergence.
  std::vector<double> optimal_values(double tolerance = 1e-15) const;
  // One-step model: (next position, reward, terminal) for taking `action` at `cell`.
  struct Transition {
    int next;
    double reward;
    bool terminal;
  };
  Transition transition(int cell, int action) const;

 private:
  std::vector<double> observation() const;

  int length_;
  double gamma_;
  int position_ = 0;
  int steps_ = 0;
  bool done_ = true;
};

}  // namespace tz
