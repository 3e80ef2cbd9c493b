#pragma once

#include <memory>
#include <span>

#include "haar/env/maze.hpp"
#include "haar/env/point_env.hpp"
#include "haar/env/tabular.hpp"

namespace haar::env {

struct EnvStep {
  ObservationPair obs;
  double reward = 0.0;
  /// Episode over, for any reason.
  bool done = false;
  /// Ended by a terminal event (goal, death, absorbing state), not a time limit.
  bool terminal = false;
  bool success = false;
  Vec2 displacement = Vec2::Zero();
};

/// Stateful episode driver consumed by the rollout code. Each worker owns a clone.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::unique_ptr<Environment> clone() const = 0;

  virtual std::size_t low_obs_dim() const = 0;
  virtual std::size_t high_obs_dim() const = 0;
  virtual std::size_t action_dim() const = 0;

  virtual ObservationPair reset(Rng& rng) = 0;
  virtual EnvStep step(std::span<const double> action) = 0;
  /// Current agent position, for trajectory dumps.
  virtual Vec2 position() const = 0;
};

/// Point-mass agent in a grid maze. Gather arenas redraw their sites at every reset.
class PointMazeEnv final : public Environment {
 public:
  PointMazeEnv(MazeSpec maze, EnvConfig cfg);

  std::unique_ptr<Environment> clone() const override { return std::make_unique<PointMazeEnv>(*this); }
  std::size_t low_obs_dim() const override { return kLowObsDim; }
  std::size_t high_obs_dim() const override { return kHighObsDim; }
  std::size_t action_dim() const override { return kActionDim; }

  ObservationPair reset(Rng& rng) override;
  EnvStep step(std::span<const double> action) override;
  Vec2 position() const override { return state_.agent.position; }

  const MazeSpec& maze() const { return maze_; }
  const EnvConfig& config() const { return cfg_; }
  const EpisodeState& state() const { return state_; }

 private:
  MazeSpec maze_;
  EnvConfig cfg_;
  EpisodeState state_;
};

/// Tabular MDP as an environment. Both observation parts are the one-hot
/// state; the action is a length-1 vector holding the primitive action index.
/// Reaching a terminal state ends the episode, as does `max_steps`.
class TabularEnv final : public Environment {
 public:
  TabularEnv(TabularMdp mdp, int max_steps);

  std::unique_ptr<Environment> clone() const override { return std::make_unique<TabularEnv>(*this); }
  std::size_t low_obs_dim() const override { return mdp_.n_states; }
  std::size_t high_obs_dim() const override { return mdp_.n_states; }
  std::size_t action_dim() const override { return 1; }

  ObservationPair reset(Rng& rng) override;
  EnvStep step(std::span<const double> action) override;
  Vec2 position() const override { return {static_cast<double>(state_), 0.0}; }

  std::size_t state() const { return state_; }

 private:
  ObservationPair observe() const;

  TabularMdp mdp_;
  int max_steps_;
  std::size_t state_ = 0;
  int t_ = 0;
  Rng rng_;
};

}  // namespace haar::env
