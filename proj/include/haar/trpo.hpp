#pragma once

#include <functional>

#include "haar/common.hpp"
#include "haar/param_vector.hpp"
#include "haar/policy.hpp"

namespace haar {

struct TrpoConfig {
  double max_kl = 0.01;
  int cg_iterations = 10;
  double cg_damping = 0.1;
  double cg_tolerance = 1e-10;
  double backtrack_ratio = 0.8;
  int max_backtracks = 15;
  bool normalize_advantages = true;

  void validate() const;
};

/// On-policy samples for one surrogate maximization. Columns of `observations`
/// and `actions` are samples; `old_dist` caches the behaviour distribution.
struct AdvantageBatch {
  Matrix observations;
  Matrix actions;
  Vector advantages;
  Vector old_log_probs;
  DistBatch old_dist;

  Eigen::Index size() const { return advantages.size(); }
  void validate() const;
};

struct TrpoDiagnostics {
  double kl = 0.0;
  double surrogate_before = 0.0;
  double surrogate_after = 0.0;
  int backtracks = 0;
  bool accepted = false;

  double improvement() const { return surrogate_after - surrogate_before; }
};

/// mean(exp(log_prob - old_log_prob) * advantage) under the policy's current parameters.
double surrogate_loss(const AdvantageBatch& batch, const Policy& policy);

/// Zero mean, unit variance. A batch with zero spread maps to all zeros.
Vector standardize(const Vector& v);

using LinearOperator = std::function<Vector(const Vector&)>;

/// Conjugate gradient for a symmetric positive-definite operator. Stops once
/// ||Ax - b|| <= tol * ||b|| or after `iters` iterations. Throws NumericError
/// on a non-finite intermediate.
Vector conjugate_gradient(const LinearOperator& apply_a, const Vector& b, int iters, double tol);

/// One natural-gradient step with backtracking line search. The step is
/// accepted only when the surrogate does not decrease and the mean KL from the
/// pre-update policy stays within max_kl; otherwise the policy is left
/// unchanged and `accepted` is false.
TrpoDiagnostics trpo_update(Policy& policy, const AdvantageBatch& batch, const TrpoConfig& cfg);

/// Assembles an AdvantageBatch, caching log-probs and distribution from `policy`.
AdvantageBatch make_advantage_batch(const Policy& policy, Matrix observations, Matrix actions, Vector advantages);

}  // namespace haar
