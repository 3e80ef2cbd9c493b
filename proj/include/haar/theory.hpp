#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "haar/common.hpp"
#include "haar/env/tabular.hpp"
#include "haar/policy.hpp"

namespace haar::theory {

/// Two-level tabular policy. pi_h(s, z) is S x Z; pi_l[z](s, a) is S x A.
struct TabularJointPolicy {
  Matrix pi_h;
  std::vector<Matrix> pi_l;
  int k = 1;
  double gamma_h = 0.99;
  double gamma_l = 0.99;

  std::size_t n_states() const { return static_cast<std::size_t>(pi_h.rows()); }
  std::size_t n_skills() const { return static_cast<std::size_t>(pi_h.cols()); }
  std::size_t n_actions() const { return pi_l.empty() ? 0 : static_cast<std::size_t>(pi_l.front().cols()); }

  /// Rows are distributions within 1e-12, shapes agree, k >= 1, gammas in (0, 1].
  void validate() const;
  void validate_against(const env::TabularMdp& mdp) const;
};

/// Dirichlet(1) rows for both levels.
TabularJointPolicy random_joint_policy(std::size_t n_states, std::size_t n_skills, std::size_t n_actions, int k,
                                       double gamma_h, double gamma_l, Rng& rng);

/// High-level decision process induced by a joint policy: per skill, the
/// k-step state kernel and the undiscounted k-step reward. Terminal states are
/// absorbing with zero reward.
struct SemiMdp {
  std::vector<Matrix> kernel;  ///< per skill, S x S
  std::vector<Vector> reward;  ///< per skill, length S
  Matrix p_h;                  ///< kernel mixed over pi_h
  Vector r_h;                  ///< reward mixed over pi_h
};

SemiMdp build_semi_mdp(const env::TabularMdp& mdp, const TabularJointPolicy& jp);

/// V_h solving (I - gamma_h P_h) V = r_h. Throws NumericError when singular.
Vector exact_high_values(const env::TabularMdp& mdp, const TabularJointPolicy& jp);

/// eta = rho_0 . V_h.
double exact_eta(const env::TabularMdp& mdp, const TabularJointPolicy& jp);

/// A_h(s, z) = R^k_z(s) + gamma_h (P^k_z V_h)(s) - V_h(s), as an S x Z table.
Matrix exact_high_advantage(const env::TabularMdp& mdp, const TabularJointPolicy& jp);

/// Expected per-decision advantage of pi_old realized along pi_new's
/// segments: r_h + gamma_h V_old(s') - V_old(s), with r_h and s' drawn from
/// pi_new's skills. Length S.
Vector realized_advantage(const env::TabularMdp& mdp, const TabularJointPolicy& jp_old,
                          const TabularJointPolicy& jp_new);

struct Lemma4Result {
  double eta_old = 0.0;
  double eta_new = 0.0;
  /// E_{pi_new}[sum_j gamma_h^j A_j] with A measured against pi_old.
  double advantage_sum = 0.0;
  double residual = 0.0;
};

/// |eta(new) - eta(old) - E_new[sum_j gamma_h^j A_old(s_j, z_j)]|.
Lemma4Result lemma4(const env::TabularMdp& mdp, const TabularJointPolicy& jp_old, const TabularJointPolicy& jp_new);
double lemma4_residual(const env::TabularMdp& mdp, const TabularJointPolicy& jp_old,
                       const TabularJointPolicy& jp_new);

inline constexpr double kRelativeEpsilon = 1e-12;

struct Lemma3Result {
  /// Low-level objective under pi_new with r_l = A/k and per-step discount gamma_l.
  double eta_l = 0.0;
  /// (1 - gamma_l^k) / ((1 - gamma_l) k) * E_new[sum_j gamma_h^j A_j].
  double approximation = 0.0;
  double relative_error = 0.0;
};

/// Compares the low-level objective with its gamma_h-discounted approximation.
/// The auxiliary rewards come from pi_old's exact advantages realized along
/// pi_new's segments.
Lemma3Result lemma3(const env::TabularMdp& mdp, const TabularJointPolicy& jp_old, const TabularJointPolicy& jp_new,
                    double gamma_l);
double lemma3_relative_error(const env::TabularMdp& mdp, const TabularJointPolicy& jp_old,
                             const TabularJointPolicy& jp_new, double gamma_l);

/// Low-level objective eta_l for candidate skills `pi_l_new` (pi_h fixed),
/// with auxiliary rewards from `jp`'s exact advantages.
double low_level_objective(const env::TabularMdp& mdp, const TabularJointPolicy& jp,
                           const std::vector<Matrix>& pi_l_new);

/// Exact gradient of low_level_objective with respect to softmax logits of
/// pi_l, evaluated at jp.pi_l. One S x A matrix per skill.
std::vector<Matrix> low_level_gradient(const env::TabularMdp& mdp, const TabularJointPolicy& jp);

/// pi_h switched to the argmax skill of its exact advantage wherever that
/// skill is strictly better than the current mixture.
TabularJointPolicy greedy_high_step(const env::TabularMdp& mdp, TabularJointPolicy jp);

struct AlternationTrace {
  std::vector<double> eta;
  /// Which level moved at each step: 'h' or 'l'.
  std::vector<char> level;
};

/// Alternates greedy pi_h improvement (fixed pi_l) with one gradient step on
/// pi_l's auxiliary objective (fixed pi_h), recording eta before the first
/// step and after every step. The low-level step uses gamma_l = gamma_h^(1/k),
/// starts at step size 1e-2 along the normalized gradient, doubles while the
/// objective keeps rising, and only accepts steps with eta_l >= 0.
AlternationTrace monotone_alternation_check(const env::TabularMdp& mdp, TabularJointPolicy jp, int iterations);

/// Samplers over one-hot tabular observations, so the rollout code can drive
/// TabularEnv with a tabular joint policy.
class TabularHighSampler final : public ActionSampler {
 public:
  explicit TabularHighSampler(Matrix pi_h) : pi_h_(std::move(pi_h)) {}
  std::size_t obs_dim() const override { return static_cast<std::size_t>(pi_h_.rows()); }
  std::size_t action_dim() const override { return 1; }
  Sample sample(std::span<const double> obs, Rng& rng) const override;

 private:
  Matrix pi_h_;
};

class TabularLowSampler final : public ActionSampler {
 public:
  explicit TabularLowSampler(std::vector<Matrix> pi_l) : pi_l_(std::move(pi_l)) {}
  std::size_t obs_dim() const override {
    return static_cast<std::size_t>(pi_l_.front().rows()) + pi_l_.size();
  }
  std::size_t action_dim() const override { return 1; }
  Sample sample(std::span<const double> obs, Rng& rng) const override;

 private:
  std::vector<Matrix> pi_l_;
};

struct CheckRow {
  std::string check;
  int instance = 0;
  /// Free parameter of the row (gamma for the sweep, k otherwise).
  double param = 0.0;
  double value = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Randomized property suite behind the theory-check subcommand:
///   lemma4      residual <= 1e-8 on `lemma4_instances` instances with
///               |S| <= 5, skills <= 3, actions <= 3, k <= 3, gamma_h in {0.9, 0.99}
///   lemma3      relative error <= 1e-10 with gamma_l = gamma_h^(1/k)
///   lemma3_sweep relative error with gamma_l = gamma_h strictly decreasing over
///               gamma in {0.9, 0.99, 0.999}, k = 5; value is the error, and the
///               first gamma of each instance passes trivially
///   lemma3_k    relative error with gamma_l = gamma_h = 0.99 for k = 1..8,
///               informational (tolerance inf)
///   alternation smallest eta change across a monotone_alternation_check trace
std::vector<CheckRow> run_theory_checks(std::uint64_t seed, int lemma4_instances = 100);
std::string check_rows_csv(const std::vector<CheckRow>& rows);

}  // namespace haar::theory
