#include "haar/env/environment.hpp"

#include <cmath>

namespace haar::env {

PointMazeEnv::PointMazeEnv(MazeSpec maze, EnvConfig cfg) : maze_(std::move(maze)), cfg_(cfg) {
  maze_.validate();
  cfg_.validate();
}

ObservationPair PointMazeEnv::reset(Rng& rng) {
  if (maze_.kind == MazeKind::gather) {
    MazeParams params;
    params.cell_size = maze_.cell_size;
    params.gather_size = maze_.rows - 2;
    params.n_food = 0;
    params.n_bombs = 0;
    for (const auto& s : maze_.sites) (s.food ? params.n_food : params.n_bombs)++;
    params.seed = rng();
    maze_ = build_maze(MazeKind::gather, params);
  }
  auto [st, obs] = env::reset(maze_, cfg_, rng);
  state_ = std::move(st);
  return obs;
}

EnvStep PointMazeEnv::step(std::span<const double> action) {
  StepResult r = env::step(state_, action, maze_, cfg_);
  state_ = std::move(r.state);
  EnvStep out;
  out.obs = std::move(r.obs);
  out.reward = r.reward;
  out.done = r.done;
  out.terminal = r.info.reached_goal || r.info.died;
  out.success = r.info.reached_goal;
  out.displacement = r.info.displacement;
  return out;
}

TabularEnv::TabularEnv(TabularMdp mdp, int max_steps) : mdp_(std::move(mdp)), max_steps_(max_steps) {
  mdp_.validate();
  if (max_steps_ < 1) throw ConfigError("tabular env: max_steps must be >= 1");
}

ObservationPair TabularEnv::observe() const {
  ObservationPair obs;
  obs.low = Vector::Zero(static_cast<Eigen::Index>(mdp_.n_states));
  obs.low[static_cast<Eigen::Index>(state_)] = 1.0;
  obs.high = obs.low;
  return obs;
}

ObservationPair TabularEnv::reset(Rng& rng) {
  rng_.seed(rng());
  std::discrete_distribution<std::size_t> init(mdp_.initial.begin(), mdp_.initial.end());
  state_ = init(rng_);
  t_ = 0;
  return observe();
}

EnvStep TabularEnv::step(std::span<const double> action) {
  if (action.size() != 1) throw ShapeError("tabular env: action must be a single index");
  const auto a = static_cast<std::size_t>(std::llround(action[0]));
  if (a >= mdp_.n_actions) throw ShapeError("tabular env: action index out of range");
  EnvStep out;
  if (mdp_.terminal[state_]) {
    out.done = true;
    out.terminal = true;
    out.obs = observe();
    return out;
  }
  out.reward = mdp_.r(state_, a);
  const double* row = &mdp_.transition[(state_ * mdp_.n_actions + a) * mdp_.n_states];
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double u = uni(rng_);
  double acc = 0.0;
  std::size_t next = mdp_.n_states - 1;
  for (std::size_t s2 = 0; s2 < mdp_.n_states; ++s2) {
    acc += row[s2];
    if (u < acc) {
      next = s2;
      break;
    }
  }
  state_ = next;
  ++t_;
  out.terminal = mdp_.terminal[state_];
  out.done = out.terminal || t_ >= max_steps_;
  out.obs = observe();
  return out;
}

}  // namespace haar::env
