#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "haar/common.hpp"
#include "haar/env/maze.hpp"

namespace haar::env {

inline constexpr std::size_t kNumRays = 20;
/// Ego part: body-frame velocity / v_max (2), sin and cos of heading (2).
inline constexpr std::size_t kLowObsDim = 4;
/// Ego part, 20 normalized ray distances, 2-component goal bearing.
inline constexpr std::size_t kHighObsDim = kLowObsDim + kNumRays + 2;
inline constexpr std::size_t kActionDim = 2;

struct EnvConfig {
  double goal_reward = 1000.0;
  double death_reward = -10.0;
  double food_reward = 1.0;
  double bomb_reward = -1.0;
  int max_episode_steps = 500;
  /// Acceleration per unit of (clipped) action.
  double action_scale = 10.0;
  double dt = 0.1;
  double v_max = 4.0;
  double ray_max = 16.0;
  /// Half side of the agent's collision square.
  double agent_radius = 0.25;
  /// Sustained overdrive terminates the episode with death_reward.
  bool stumble = true;
  double stumble_threshold = 1.0;
  int stumble_steps = 3;
  /// Contact radius for gather sites, as a fraction of the cell size.
  double site_radius = 0.5;

  void validate() const;
};

struct AgentState {
  Vec2 position = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();
  double heading = 0.0;
  bool alive = true;
};

/// Everything the dynamics need besides the maze: the agent plus episode
/// bookkeeping (step count, overdrive streak, remaining gather sites).
struct EpisodeState {
  AgentState agent;
  int t = 0;
  int overdrive_streak = 0;
  std::vector<bool> site_active;
};

struct ObservationPair {
  Vector low;
  Vector high;
};

struct StepInfo {
  bool reached_goal = false;
  bool died = false;
  bool timeout = false;
  int food = 0;
  int bombs = 0;
  Vec2 displacement = Vec2::Zero();
};

struct StepResult {
  EpisodeState state;
  ObservationPair obs;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

struct RaycastResult {
  /// Ray j points at heading + 2*pi*j/20; distances are capped at ray_max.
  std::array<double, kNumRays> distances{};
  /// Unit vector to the goal in the body frame as (forward, left), ignoring
  /// walls. Zero when the maze has no goal.
  Vec2 goal_bearing = Vec2::Zero();
};

/// Distance along one ray to the first wall cell, capped at ray_max.
double cast_ray(const Vec2& origin, double angle, const MazeSpec& maze, double ray_max);

RaycastResult raycast(const Vec2& position, double heading, const MazeSpec& maze, double ray_max);

ObservationPair observe(const EpisodeState& state, const MazeSpec& maze, const EnvConfig& cfg);

/// Maze tasks start uniformly inside the start region; gather and the open
/// field start at the start cell center. Velocity is zero and heading 0 (east).
std::pair<EpisodeState, ObservationPair> reset(const MazeSpec& maze, const EnvConfig& cfg, Rng& rng);

/// Deterministic point-mass step: clip the action to [-1, 1] per axis,
/// integrate velocity (capped at v_max), then move axis by axis, zeroing
/// the velocity component normal to any wall hit.
StepResult step(const EpisodeState& state, std::span<const double> action, const MazeSpec& maze,
                const EnvConfig& cfg);

/// Axis-separated move of the collision square; returns the new position and
/// which axes were blocked.
struct MoveResult {
  Vec2 position;
  bool blocked_x = false;
  bool blocked_y = false;
};
MoveResult move_with_walls(const Vec2& from, const Vec2& delta, const MazeSpec& maze, double radius);

bool overlaps_wall(const Vec2& p, const MazeSpec& maze, double radius);

}  // namespace haar::env
