#pragma once

#include <cstddef>
#include <memory>
#include <span>

#include "haar/common.hpp"
#include "haar/mlp.hpp"
#include "haar/param_vector.hpp"

namespace haar {

enum class DistKind { gaussian, categorical };

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kInitialLogStd = -0.5;

/// Per-sample distribution parameters, cached from the pre-update policy.
/// Gaussian: `table` holds means (action_dim x n) and `log_std` the shared
/// log standard deviations. Categorical: `table` holds probabilities
/// (n_skills x n).
struct DistBatch {
  DistKind kind = DistKind::gaussian;
  Matrix table;
  Vector log_std;

  Eigen::Index size() const { return table.cols(); }
};

struct Sample {
  Vector action;
  double log_prob = 0.0;
};

/// Anything that can draw an action for an observation. Categorical actions
/// are encoded as a length-1 vector holding the index.
class ActionSampler {
 public:
  virtual ~ActionSampler() = default;
  virtual std::size_t obs_dim() const = 0;
  virtual std::size_t action_dim() const = 0;
  virtual Sample sample(std::span<const double> obs, Rng& rng) const = 0;
};

/// (F + damping I) v for the mean-KL Hessian F at the policy's current parameters.
class FisherOperator {
 public:
  virtual ~FisherOperator() = default;
  virtual ParamVector apply(const ParamVector& v) const = 0;
};

/// Differentiable stochastic policy backed by a ParamVector.
class Policy : public ActionSampler {
 public:
  virtual DistKind kind() const = 0;

  const ParamVector& params() const { return params_; }
  /// Replaces all parameters (layout must match) and re-applies projection.
  void set_params(const ParamVector& p);

  virtual void initialize(Rng& rng) = 0;
  /// Restores parameter constraints (e.g. the log-std clamp).
  virtual void project() {}

  virtual double log_prob(std::span<const double> obs, std::span<const double> action) const = 0;
  virtual Vector log_prob_batch(const Matrix& obs, const Matrix& actions) const = 0;
  /// Most likely action: the mean (Gaussian) or argmax index (categorical).
  virtual Vector mode(std::span<const double> obs) const = 0;
  virtual DistBatch distribution(const Matrix& obs) const = 0;

  /// Gradient of mean_i(weight_i * log_prob(obs_i, action_i)).
  virtual ParamVector grad_logprob_weighted(const Matrix& obs, const Matrix& actions,
                                            const Vector& weights) const = 0;

  /// mean_i KL(old_i || current_i).
  virtual double mean_kl(const DistBatch& old, const Matrix& obs) const = 0;
  virtual ParamVector grad_mean_kl(const DistBatch& old, const Matrix& obs) const = 0;
  virtual std::unique_ptr<FisherOperator> fisher(const Matrix& obs, double damping) const = 0;

  ParamVector fisher_vector_product(const Matrix& obs, const ParamVector& v, double damping) const {
    return fisher(obs, damping)->apply(v);
  }

  virtual std::unique_ptr<Policy> clone() const = 0;

 protected:
  void check_obs(std::size_t n) const;
  void check_batch(const Matrix& obs, const Matrix& actions) const;

  ParamVector params_;
};

/// Diagonal Gaussian with an MLP mean and state-independent log std.
/// Segments: "mean.w*", "mean.b*", "log_std".
class GaussianPolicy final : public Policy {
 public:
  explicit GaussianPolicy(MlpSpec mean_net);

  DistKind kind() const override { return DistKind::gaussian; }
  std::size_t obs_dim() const override { return net_.spec().input_dim; }
  std::size_t action_dim() const override { return net_.spec().output_dim; }
  const MlpSpec& spec() const { return net_.spec(); }
  const Mlp& net() const { return net_; }
  std::span<const double> log_std() const { return params_.segment("log_std"); }
  void set_log_std(double v);

  void initialize(Rng& rng) override;
  void project() override;
  Sample sample(std::span<const double> obs, Rng& rng) const override;
  double log_prob(std::span<const double> obs, std::span<const double> action) const override;
  Vector log_prob_batch(const Matrix& obs, const Matrix& actions) const override;
  Vector mode(std::span<const double> obs) const override;
  DistBatch distribution(const Matrix& obs) const override;
  ParamVector grad_logprob_weighted(const Matrix& obs, const Matrix& actions, const Vector& weights) const override;
  double mean_kl(const DistBatch& old, const Matrix& obs) const override;
  ParamVector grad_mean_kl(const DistBatch& old, const Matrix& obs) const override;
  std::unique_ptr<FisherOperator> fisher(const Matrix& obs, double damping) const override;
  std::unique_ptr<Policy> clone() const override { return std::make_unique<GaussianPolicy>(*this); }

 private:
  Mlp net_;
};

/// Softmax over MLP logits. Segments: "logits.w*", "logits.b*".
class CategoricalPolicy final : public Policy {
 public:
  explicit CategoricalPolicy(MlpSpec logits_net);

  DistKind kind() const override { return DistKind::categorical; }
  std::size_t obs_dim() const override { return net_.spec().input_dim; }
  std::size_t action_dim() const override { return 1; }
  std::size_t n_choices() const { return net_.spec().output_dim; }
  const MlpSpec& spec() const { return net_.spec(); }
  const Mlp& net() const { return net_; }

  Vector probabilities(std::span<const double> obs) const;

  void initialize(Rng& rng) override;
  Sample sample(std::span<const double> obs, Rng& rng) const override;
  double log_prob(std::span<const double> obs, std::span<const double> action) const override;
  Vector log_prob_batch(const Matrix& obs, const Matrix& actions) const override;
  Vector mode(std::span<const double> obs) const override;
  DistBatch distribution(const Matrix& obs) const override;
  ParamVector grad_logprob_weighted(const Matrix& obs, const Matrix& actions, const Vector& weights) const override;
  double mean_kl(const DistBatch& old, const Matrix& obs) const override;
  ParamVector grad_mean_kl(const DistBatch& old, const Matrix& obs) const override;
  std::unique_ptr<FisherOperator> fisher(const Matrix& obs, double damping) const override;
  std::unique_ptr<Policy> clone() const override { return std::make_unique<CategoricalPolicy>(*this); }

 private:
  Mlp net_;
};

/// Numerically stable log-softmax of each column.
Matrix log_softmax_columns(const Matrix& logits);

double kl_categorical(std::span<const double> p, std::span<const double> q);
double kl_diag_gaussian(std::span<const double> mean_p, std::span<const double> log_std_p,
                        std::span<const double> mean_q, std::span<const double> log_std_q);

}  // namespace haar
