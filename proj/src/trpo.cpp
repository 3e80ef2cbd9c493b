#include "haar/trpo.hpp"

#include <cmath>

namespace haar {

void TrpoConfig::validate() const {
  if (!(max_kl > 0.0)) throw ConfigError("trpo: max_kl must be > 0");
  if (!(cg_damping > 0.0)) throw ConfigError("trpo: cg_damping must be > 0");
  if (!(backtrack_ratio > 0.0 && backtrack_ratio < 1.0)) throw ConfigError("trpo: backtrack_ratio must be in (0, 1)");
  if (cg_iterations < 1) throw ConfigError("trpo: cg_iterations must be >= 1");
  if (max_backtracks < 1) throw ConfigError("trpo: max_backtracks must be >= 1");
}

void AdvantageBatch::validate() const {
  const Eigen::Index n = advantages.size();
  if (n < 1) throw ShapeError("advantage batch is empty");
  if (observations.cols() != n || actions.cols() != n || old_log_probs.size() != n || old_dist.size() != n) {
    throw ShapeError("advantage batch sequences differ in length");
  }
  if (!advantages.allFinite()) throw NumericError("advantage batch holds non-finite advantages");
}

double surrogate_loss(const AdvantageBatch& batch, const Policy& policy) {
  batch.validate();
  const Vector logp = policy.log_prob_batch(batch.observations, batch.actions);
  const Eigen::ArrayXd ratio = (logp - batch.old_log_probs).array().exp();
  return (ratio * batch.advantages.array()).mean();
}

Vector standardize(const Vector& v) {
  if (v.size() == 0) return v;
  const double mean = v.mean();
  const Eigen::ArrayXd centered = v.array() - mean;
  const double sd = std::sqrt(centered.square().mean());
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) return Vector::Zero(v.size());
  return (centered / sd).matrix();
}

Vector conjugate_gradient(const LinearOperator& apply_a, const Vector& b, int iters, double tol) {
  Vector x = Vector::Zero(b.size());
  Vector r = b;
  Vector p = b;
  double rr = r.squaredNorm();
  const double stop = tol * tol * b.squaredNorm();
  for (int i = 0; i < iters && rr > stop; ++i) {
    const Vector ap = apply_a(p);
    const double pap = p.dot(ap);
    if (!std::isfinite(pap) || !ap.allFinite()) throw NumericError("conjugate_gradient: non-finite operator output");
    if (pap <= 0.0) throw NumericError("conjugate_gradient: operator is not positive definite");
    const double alpha = rr / pap;
    x += alpha * p;
    r -= alpha * ap;
    const double rr_next = r.squaredNorm();
    if (!std::isfinite(rr_next)) throw NumericError("conjugate_gradient: non-finite residual");
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  return x;
}

AdvantageBatch make_advantage_batch(const Policy& policy, Matrix observations, Matrix actions, Vector advantages) {
  AdvantageBatch b;
  b.old_log_probs = policy.log_prob_batch(observations, actions);
  b.old_dist = policy.distribution(observations);
  b.observations = std::move(observations);
  b.actions = std::move(actions);
  b.advantages = std::move(advantages);
  b.validate();
  return b;
}

TrpoDiagnostics trpo_update(Policy& policy, const AdvantageBatch& batch, const TrpoConfig& cfg) {
  cfg.validate();
  batch.validate();
  policy.params().check_finite("trpo_update");

  AdvantageBatch work = batch;
  if (cfg.normalize_advantages) work.advantages = standardize(batch.advantages);

  TrpoDiagnostics diag;
  diag.surrogate_before = surrogate_loss(work, policy);
  diag.surrogate_after = diag.surrogate_before;

  const ParamVector old_params = policy.params();
  const ParamVector grad = policy.grad_logprob_weighted(work.observations, work.actions, work.advantages);
  const Vector g = grad.vec();
  if (!g.allFinite() || g.squaredNorm() == 0.0) return diag;

  Vector step_dir;
  Vector f_dir;
  try {
    const auto fisher = policy.fisher(work.observations, cfg.cg_damping);
    ParamVector scratch = old_params;
    auto apply = [&](const Vector& v) {
      scratch.vec() = v;
      return Vector(fisher->apply(scratch).vec());
    };
    step_dir = conjugate_gradient(apply, g, cfg.cg_iterations, cfg.cg_tolerance);
    f_dir = apply(step_dir);
  } catch (const NumericError&) {
    return diag;
  }
  const double shs = 0.5 * step_dir.dot(f_dir);
  if (!(shs > 0.0) || !std::isfinite(shs)) return diag;
  const Vector full_step = step_dir * std::sqrt(cfg.max_kl / shs);

  ParamVector candidate = old_params;
  double frac = 1.0;
  for (int i = 0; i < cfg.max_backtracks; ++i, frac *= cfg.backtrack_ratio) {
    candidate.vec() = old_params.vec() + frac * full_step;
    policy.set_params(candidate);
    if (!policy.params().all_finite()) continue;
    const double kl = policy.mean_kl(work.old_dist, work.observations);
    const double surr = surrogate_loss(work, policy);
    if (std::isfinite(kl) && std::isfinite(surr) && kl <= cfg.max_kl && surr > diag.surrogate_before) {
      diag.kl = kl;
      diag.surrogate_after = surr;
      diag.backtracks = i;
      diag.accepted = true;
      return diag;
    }
  }
  policy.set_params(old_params);
  diag.backtracks = cfg.max_backtracks;
  return diag;
}

}  // namespace haar
