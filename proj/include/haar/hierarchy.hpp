#pragma once

#include <cstdint>
#include <vector>

#include "haar/common.hpp"
#include "haar/env/environment.hpp"
#include "haar/policy.hpp"
#include "haar/trpo.hpp"
#include "haar/value.hpp"

namespace haar {

/// Skill-length annealing: k(i) = max(round(k_1 * exp(-tau * i)), k_s).
struct SkillSchedule {
  int k_1 = 100;
  double tau = 0.0;
  int k_s = 10;
  int iteration = 0;

  int current_k() const { return k_at(iteration); }
  int k_at(int i) const;
  void advance() { ++iteration; }
  void validate() const;

  /// Temperature that brings k_1 down to k_s after half of `n_iterations`.
  static double halfway_tau(int k_1, int k_s, int n_iterations);
};

struct HighTransition {
  Vector s_h;
  int a_h = 0;
  double log_prob = 0.0;
  /// Sum of the environment rewards of the segment's low steps.
  double r_h = 0.0;
  Vector s_h_next;
  /// Segment ended in a terminal event; the advantage does not bootstrap.
  bool done = false;
  /// Last segment of its episode (terminal or time limit).
  bool episode_end = false;
  int seg_len = 0;
  /// Index of the segment's first LowTransition in RolloutBatch::low.
  int first_low = 0;
  int episode = 0;
};

struct LowTransition {
  /// Policy input: ego observation followed by the one-hot active skill.
  Vector s_l;
  Vector a_l;
  double log_prob = 0.0;
  double r_env = 0.0;
  /// Auxiliary reward, filled by assign_auxiliary_rewards.
  double r_l = 0.0;
  Vector s_l_next;
  bool done = false;
  int segment_id = 0;
  env::Vec2 position = env::Vec2::Zero();
  env::Vec2 displacement = env::Vec2::Zero();
};

struct EpisodeSummary {
  double ret = 0.0;
  bool success = false;
  int length = 0;
};

struct RolloutBatch {
  std::vector<HighTransition> high;
  std::vector<LowTransition> low;
  std::vector<EpisodeSummary> episodes;

  long total_low_steps() const { return static_cast<long>(low.size()); }
  double success_rate() const;
  double mean_return() const;
};

struct RolloutOptions {
  std::uint64_t seed = 0;
  /// Second stream index (typically the iteration); episode e of a call uses
  /// make_rng(seed, {stream, e}).
  std::uint64_t stream = 0;
  /// Episodes simulated concurrently. Results are merged in episode order and
  /// do not depend on this value.
  int workers = 1;
};

/// Runs whole episodes until at least `min_low_steps` low steps are collected.
/// Every segment samples a skill from pi_h(s^h), then pi_l(s^l + one-hot)
/// acts for k steps or until the episode ends. The skill count is
/// pi_l.obs_dim() - env.low_obs_dim().
RolloutBatch collect_rollouts(const ActionSampler& pi_h, const ActionSampler& pi_l, const env::Environment& env,
                              long min_low_steps, int k, const RolloutOptions& opts);

/// Discounted return per high transition, one discount per decision.
Vector high_level_returns(const RolloutBatch& batch, double gamma_h);

/// Discounted return of auxiliary rewards per low transition, within each episode.
Vector low_level_returns(const RolloutBatch& batch, double gamma_l);

/// A = r_h + gamma_h * V_h(s') * (1 - done) - V_h(s) per high transition.
Vector estimate_high_advantages(const RolloutBatch& batch, const PolynomialValueEstimator& v_h, double gamma_h);

/// Spreads each segment's advantage evenly over its low steps,
/// r_l = A / seg_len. Returns the largest |sum(r_l) - A| over segments and
/// throws InvariantError when it exceeds kConservationTolerance.
inline constexpr double kConservationTolerance = 1e-9;
double assign_auxiliary_rewards(RolloutBatch& batch, const Vector& advantages);

Matrix stack_columns(const std::vector<Vector>& columns);
Matrix high_states(const RolloutBatch& batch);
Matrix low_states(const RolloutBatch& batch);

struct LevelBatches {
  AdvantageBatch high;
  AdvantageBatch low;
};

/// High batch: the one-step advantages. Low batch: discounted auxiliary
/// returns minus V_l. Old log-probs and distributions come from the policies
/// as they are now, which must be the ones that collected `batch`.
LevelBatches prepare_level_batches(const RolloutBatch& batch, const Vector& high_advantages, double gamma_l,
                                   const PolynomialValueEstimator& v_l, const Policy& pi_h, const Policy& pi_l);

enum class TrainingMode { concurrent, alternate };

struct HaarConfig {
  int n_skills = 6;
  double gamma_h = 0.99;
  double gamma_l = 0.99;
  long batch_low_steps = 5000;
  TrpoConfig trpo_high;
  TrpoConfig trpo_low;
  TrainingMode mode = TrainingMode::concurrent;
  bool update_high = true;
  bool update_low = true;
  double ridge = kDefaultRidge;
  int workers = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainingState {
  CategoricalPolicy pi_h;
  GaussianPolicy pi_l;
  PolynomialValueEstimator v_h;
  PolynomialValueEstimator v_l;
  SkillSchedule schedule;
  long low_steps_total = 0;
};

struct IterationMetrics {
  /// 1-based iteration number.
  int iteration = 0;
  long low_steps_total = 0;
  int k = 0;
  double success_rate = 0.0;
  double mean_return = 0.0;
  bool high_updated = false;
  bool low_updated = false;
  TrpoDiagnostics high;
  TrpoDiagnostics low;
  double max_conservation_error = 0.0;
  double wall_time_s = 0.0;
};

/// Fresh state: randomly initialized pi_h, the given pi_l, zero value estimators.
TrainingState make_training_state(const HaarConfig& cfg, const env::Environment& env, GaussianPolicy pi_l,
                                  SkillSchedule schedule, Rng& init_rng);

/// One iteration. Concurrent: one batch updates both levels. Alternate: odd
/// iterations update only pi_h, even ones only pi_l, each from a fresh batch.
/// Advantages use the value estimators from the previous iteration, which are
/// refit on this batch afterwards. The schedule advances by one.
IterationMetrics haar_iteration(TrainingState& state, const HaarConfig& cfg, const env::Environment& env,
                                RolloutBatch* batch_out = nullptr);

}  // namespace haar
