#include "haar/env/point_env.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace haar::env {

namespace {

constexpr double kContactGap = 1e-9;

bool wall_at_grid(const MazeSpec& maze, int cx, int cy_from_bottom) {
  return maze.is_wall(maze.rows - 1 - cy_from_bottom, cx);
}

}  // namespace

void EnvConfig::validate() const {
  if (max_episode_steps < 1) throw ConfigError("env: max_episode_steps (T) must be >= 1");
  if (!(dt > 0.0)) throw ConfigError("env: dt must be > 0");
  if (!(v_max > 0.0)) throw ConfigError("env: v_max must be > 0");
  if (!(ray_max > 0.0)) throw ConfigError("env: ray_max must be > 0");
  if (!(action_scale > 0.0)) throw ConfigError("env: action_scale must be > 0");
  if (!(agent_radius >= 0.0)) throw ConfigError("env: agent_radius must be >= 0");
  if (stumble_steps < 1) throw ConfigError("env: stumble_steps must be >= 1");
}

double cast_ray(const Vec2& origin, double angle, const MazeSpec& maze, double ray_max) {
  const double cs = maze.cell_size;
  const double gx = origin.x() / cs;
  const double gy = origin.y() / cs;
  const double dx = std::cos(angle);
  const double dy = std::sin(angle);
  int cx = static_cast<int>(std::floor(gx));
  int cy = static_cast<int>(std::floor(gy));
  if (wall_at_grid(maze, cx, cy)) return 0.0;

  constexpr double inf = std::numeric_limits<double>::infinity();
  const int step_x = dx > 0 ? 1 : -1;
  const int step_y = dy > 0 ? 1 : -1;
  double t_max_x = dx > 0 ? (cx + 1 - gx) / dx : (dx < 0 ? (gx - cx) / -dx : inf);
  double t_max_y = dy > 0 ? (cy + 1 - gy) / dy : (dy < 0 ? (gy - cy) / -dy : inf);
  const double t_delta_x = dx != 0 ? 1.0 / std::abs(dx) : inf;
  const double t_delta_y = dy != 0 ? 1.0 / std::abs(dy) : inf;
  const double t_limit = ray_max / cs;

  while (true) {
    double t;
    if (t_max_x < t_max_y) {
      t = t_max_x;
      cx += step_x;
      t_max_x += t_delta_x;
    } else {
      t = t_max_y;
      cy += step_y;
      t_max_y += t_delta_y;
    }
    if (t >= t_limit) return ray_max;
    if (wall_at_grid(maze, cx, cy)) return t * cs;
  }
}

RaycastResult raycast(const Vec2& position, double heading, const MazeSpec& maze, double ray_max) {
  RaycastResult out;
  for (std::size_t j = 0; j < kNumRays; ++j) {
    const double angle = heading + 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(kNumRays);
    out.distances[j] = cast_ray(position, angle, maze, ray_max);
  }
  if (const auto goal = maze.goal_cell()) {
    const Vec2 to_goal = maze.cell_center(*goal) - position;
    const double norm = to_goal.norm();
    if (norm > 0.0) {
      const Vec2 u = to_goal / norm;
      const Vec2 forward(std::cos(heading), std::sin(heading));
      const Vec2 left(-std::sin(heading), std::cos(heading));
      out.goal_bearing = {u.dot(forward), u.dot(left)};
    }
  }
  return out;
}

ObservationPair observe(const EpisodeState& state, const MazeSpec& maze, const EnvConfig& cfg) {
  const AgentState& a = state.agent;
  const double c = std::cos(a.heading);
  const double s = std::sin(a.heading);
  ObservationPair obs;
  obs.low.resize(static_cast<Eigen::Index>(kLowObsDim));
  obs.low << (c * a.velocity.x() + s * a.velocity.y()) / cfg.v_max,
      (-s * a.velocity.x() + c * a.velocity.y()) / cfg.v_max, s, c;

  const RaycastResult rc = raycast(a.position, a.heading, maze, cfg.ray_max);
  obs.high.resize(static_cast<Eigen::Index>(kHighObsDim));
  obs.high.head(static_cast<Eigen::Index>(kLowObsDim)) = obs.low;
  for (std::size_t j = 0; j < kNumRays; ++j) {
    obs.high[static_cast<Eigen::Index>(kLowObsDim + j)] = rc.distances[j] / cfg.ray_max;
  }
  obs.high[static_cast<Eigen::Index>(kLowObsDim + kNumRays)] = rc.goal_bearing.x();
  obs.high[static_cast<Eigen::Index>(kLowObsDim + kNumRays + 1)] = rc.goal_bearing.y();
  return obs;
}

std::pair<EpisodeState, ObservationPair> reset(const MazeSpec& maze, const EnvConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto starts = maze.start_cells();
  if (starts.empty()) throw std::invalid_argument("reset: maze has no start cell");
  EpisodeState st;
  if (maze.is_maze()) {
    std::uniform_int_distribution<std::size_t> pick(0, starts.size() - 1);
    const CellIndex cell = starts[pick(rng)];
    const Vec2 center = maze.cell_center(cell);
    const double half = 0.5 * maze.cell_size - cfg.agent_radius - kContactGap;
    std::uniform_real_distribution<double> offset(-half, half);
    const double ox = offset(rng);
    const double oy = offset(rng);
    st.agent.position = center + Vec2(ox, oy);
  } else {
    st.agent.position = maze.cell_center(starts.front());
  }
  st.site_active.assign(maze.sites.size(), true);
  ObservationPair obs = observe(st, maze, cfg);
  return {std::move(st), std::move(obs)};
}

bool overlaps_wall(const Vec2& p, const MazeSpec& maze, double radius) {
  const double cs = maze.cell_size;
  const int c0 = static_cast<int>(std::floor((p.x() - radius) / cs));
  const int c1 = static_cast<int>(std::ceil((p.x() + radius) / cs)) - 1;
  const int y0 = static_cast<int>(std::floor((p.y() - radius) / cs));
  const int y1 = static_cast<int>(std::ceil((p.y() + radius) / cs)) - 1;
  for (int cy = y0; cy <= std::max(y0, y1); ++cy) {
    for (int cx = c0; cx <= std::max(c0, c1); ++cx) {
      if (wall_at_grid(maze, cx, cy)) return true;
    }
  }
  return false;
}

MoveResult move_with_walls(const Vec2& from, const Vec2& delta, const MazeSpec& maze, double radius) {
  const double cs = maze.cell_size;
  MoveResult res;
  Vec2 p = from;

  if (delta.x() != 0.0) {
    Vec2 q(p.x() + delta.x(), p.y());
    if (overlaps_wall(q, maze, radius)) {
      res.blocked_x = true;
      if (delta.x() > 0) {
        const double edge = std::floor((q.x() + radius) / cs) * cs;
        q.x() = std::max(p.x(), edge - radius - kContactGap);
      } else {
        const double edge = (std::floor((q.x() - radius) / cs) + 1.0) * cs;
        q.x() = std::min(p.x(), edge + radius + kContactGap);
      }
    }
    p = q;
  }
  if (delta.y() != 0.0) {
    Vec2 q(p.x(), p.y() + delta.y());
    if (overlaps_wall(q, maze, radius)) {
      res.blocked_y = true;
      if (delta.y() > 0) {
        const double edge = std::floor((q.y() + radius) / cs) * cs;
        q.y() = std::max(p.y(), edge - radius - kContactGap);
      } else {
        const double edge = (std::floor((q.y() - radius) / cs) + 1.0) * cs;
        q.y() = std::min(p.y(), edge + radius + kContactGap);
      }
    }
    p = q;
  }
  res.position = p;
  return res;
}

StepResult step(const EpisodeState& state, std::span<const double> action, const MazeSpec& maze,
                const EnvConfig& cfg) {
  if (action.size() != kActionDim) throw ShapeError("step: action must be a 2-vector");
  if (!state.agent.alive) throw std::logic_error("step: agent is not alive");

  StepResult res;
  res.state = state;
  AgentState& a = res.state.agent;

  const double ax = std::clamp(action[0], -1.0, 1.0);
  const double ay = std::clamp(action[1], -1.0, 1.0);
  const bool overdrive = std::hypot(action[0], action[1]) > cfg.stumble_threshold;
  res.state.overdrive_streak = overdrive ? state.overdrive_streak + 1 : 0;

  a.velocity += cfg.action_scale * cfg.dt * Vec2(ax, ay);
  const double speed = a.velocity.norm();
  if (speed > cfg.v_max) a.velocity *= cfg.v_max / speed;

  const Vec2 before = a.position;
  const MoveResult mv = move_with_walls(before, a.velocity * cfg.dt, maze, cfg.agent_radius);
  a.position = mv.position;
  if (mv.blocked_x) a.velocity.x() = 0.0;
  if (mv.blocked_y) a.velocity.y() = 0.0;
  res.info.displacement = a.position - before;
  res.state.t = state.t + 1;

  if (const auto goal = maze.goal_cell(); goal && maze.cell_of(a.position) == *goal) {
    res.reward += cfg.goal_reward;
    res.info.reached_goal = true;
    res.done = true;
  } else if (cfg.stumble && res.state.overdrive_streak >= cfg.stumble_steps) {
    res.reward += cfg.death_reward;
    res.info.died = true;
    a.alive = false;
    res.done = true;
  }

  if (!res.info.reached_goal) {
    const double radius = cfg.site_radius * maze.cell_size;
    for (std::size_t i = 0; i < maze.sites.size(); ++i) {
      if (!res.state.site_active[i]) continue;
      if ((maze.sites[i].position - a.position).norm() <= radius) {
        res.state.site_active[i] = false;
        if (maze.sites[i].food) {
          res.reward += cfg.food_reward;
          ++res.info.food;
        } else {
          res.reward += cfg.bomb_reward;
          ++res.info.bombs;
        }
      }
    }
  }

  if (!res.done && res.state.t >= cfg.max_episode_steps) {
    res.info.timeout = true;
    res.done = true;
  }
  res.obs = observe(res.state, maze, cfg);
  return res;
}

}  // namespace haar::env
