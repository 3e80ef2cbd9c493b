#include "haar/policy.hpp"

#include <cmath>
#include <numbers>

namespace haar {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

void check_finite_output(const Vector& v, const char* what) {
  if (!v.allFinite()) throw NumericError(std::string(what) + ": network produced a non-finite output");
}

std::size_t action_index(double a, std::size_t n) {
  const double r = std::round(a);
  if (!(r >= 0.0) || r >= static_cast<double>(n) || r != a) {
    throw ShapeError("categorical action must be an integer index in [0, " + std::to_string(n) + ")");
  }
  return static_cast<std::size_t>(r);
}

class GaussianFisher final : public FisherOperator {
 public:
  GaussianFisher(const GaussianPolicy& policy, const Matrix& obs, double damping)
      : policy_(policy), damping_(damping), n_(static_cast<double>(obs.cols())) {
    policy_.net().forward_batch(policy_.params(), obs, &trace_);
    const auto ls = policy_.log_std();
    inv_var_.resize(static_cast<Eigen::Index>(ls.size()));
    for (std::size_t j = 0; j < ls.size(); ++j) inv_var_[static_cast<Eigen::Index>(j)] = std::exp(-2.0 * ls[j]);
  }

  ParamVector apply(const ParamVector& v) const override {
    const ParamVector& p = policy_.params();
    if (!v.same_layout(p)) throw ShapeError("fisher_vector_product: vector layout does not match policy");
    Matrix jv = policy_.net().jvp(p, trace_, v);
    jv = (jv.array().colwise() * inv_var_.array()) / n_;
    ParamVector out = p.zeros_like();
    policy_.net().backward(p, trace_, jv, out);
    auto out_ls = out.segment("log_std");
    auto v_ls = v.segment("log_std");
    for (std::size_t j = 0; j < out_ls.size(); ++j) out_ls[j] += 2.0 * v_ls[j];
    out.axpy(damping_, v);
    return out;
  }

 private:
  const GaussianPolicy& policy_;
  double damping_;
  double n_;
  Mlp::Trace trace_;
  Vector inv_var_;
};

class CategoricalFisher final : public FisherOperator {
 public:
  CategoricalFisher(const CategoricalPolicy& policy, const Matrix& obs, double damping)
      : policy_(policy), damping_(damping), n_(static_cast<double>(obs.cols())) {
    const Matrix logits = policy_.net().forward_batch(policy_.params(), obs, &trace_);
    probs_ = log_softmax_columns(logits).array().exp();
  }

  ParamVector apply(const ParamVector& v) const override {
    const ParamVector& p = policy_.params();
    if (!v.same_layout(p)) throw ShapeError("fisher_vector_product: vector layout does not match policy");
    const Matrix jv = policy_.net().jvp(p, trace_, v);
    const Eigen::RowVectorXd pj = (probs_.array() * jv.array()).colwise().sum();
    Matrix u = probs_.array() * (jv.rowwise() - pj).array();
    u /= n_;
    ParamVector out = p.zeros_like();
    policy_.net().backward(p, trace_, u, out);
    out.axpy(damping_, v);
    return out;
  }

 private:
  const CategoricalPolicy& policy_;
  double damping_;
  double n_;
  Mlp::Trace trace_;
  Matrix probs_;
};

}  // namespace

// --- Policy ---------------------------------------------------------------

void Policy::set_params(const ParamVector& p) {
  if (!p.same_layout(params_)) throw ShapeError("set_params: parameter layout does not match policy");
  params_ = p;
  project();
}

void Policy::check_obs(std::size_t n) const {
  if (n != obs_dim()) {
    throw ShapeError("policy expects observations of dimension " + std::to_string(obs_dim()) + ", got " +
                     std::to_string(n));
  }
}

void Policy::check_batch(const Matrix& obs, const Matrix& actions) const {
  check_obs(static_cast<std::size_t>(obs.rows()));
  if (static_cast<std::size_t>(actions.rows()) != action_dim() || actions.cols() != obs.cols()) {
    throw ShapeError("policy batch: action matrix does not match observations");
  }
}

Matrix log_softmax_columns(const Matrix& logits) {
  Matrix out = logits;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    const double m = out.col(c).maxCoeff();
    const double lse = m + std::log((out.col(c).array() - m).exp().sum());
    out.col(c).array() -= lse;
  }
  return out;
}

double kl_categorical(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("kl_categorical: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return kl;
}

double kl_diag_gaussian(std::span<const double> mean_p, std::span<const double> log_std_p,
                        std::span<const double> mean_q, std::span<const double> log_std_q) {
  const std::size_t d = mean_p.size();
  if (log_std_p.size() != d || mean_q.size() != d || log_std_q.size() != d) {
    throw ShapeError("kl_diag_gaussian: size mismatch");
  }
  double kl = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double var_p = std::exp(2.0 * log_std_p[j]);
    const double var_q = std::exp(2.0 * log_std_q[j]);
    const double diff = mean_p[j] - mean_q[j];
    kl += log_std_q[j] - log_std_p[j] + (var_p + diff * diff) / (2.0 * var_q) - 0.5;
  }
  return kl;
}

// --- GaussianPolicy -------------------------------------------------------

GaussianPolicy::GaussianPolicy(MlpSpec mean_net) : net_(std::move(mean_net), params_, "mean.") {
  params_.add_segment("log_std", net_.spec().output_dim, kInitialLogStd);
}

void GaussianPolicy::set_log_std(double v) {
  for (auto& x : params_.segment("log_std")) x = v;
  project();
}

void GaussianPolicy::initialize(Rng& rng) {
  net_.initialize(params_, rng);
  set_log_std(kInitialLogStd);
}

void GaussianPolicy::project() {
  for (auto& x : params_.segment("log_std")) x = std::clamp(x, kLogStdMin, kLogStdMax);
}

Sample GaussianPolicy::sample(std::span<const double> obs, Rng& rng) const {
  check_obs(obs.size());
  const Vector mean = net_.forward(params_, obs);
  check_finite_output(mean, "GaussianPolicy::sample");
  const auto ls = log_std();
  std::normal_distribution<double> normal(0.0, 1.0);
  Sample s;
  s.action.resize(mean.size());
  for (Eigen::Index j = 0; j < mean.size(); ++j) {
    s.action[j] = mean[j] + std::exp(ls[static_cast<std::size_t>(j)]) * normal(rng);
  }
  s.log_prob = log_prob(obs, std::span<const double>(s.action.data(), static_cast<std::size_t>(s.action.size())));
  return s;
}

double GaussianPolicy::log_prob(std::span<const double> obs, std::span<const double> action) const {
  check_obs(obs.size());
  if (action.size() != action_dim()) throw ShapeError("GaussianPolicy::log_prob: action dimension mismatch");
  const Vector mean = net_.forward(params_, obs);
  const auto ls = log_std();
  double lp = -0.5 * static_cast<double>(action.size()) * kLog2Pi;
  for (std::size_t j = 0; j < action.size(); ++j) {
    const double z = (action[j] - mean[static_cast<Eigen::Index>(j)]) * std::exp(-ls[j]);
    lp -= ls[j] + 0.5 * z * z;
  }
  return lp;
}

Vector GaussianPolicy::log_prob_batch(const Matrix& obs, const Matrix& actions) const {
  check_batch(obs, actions);
  const Matrix mean = net_.forward_batch(params_, obs);
  const auto ls = log_std();
  Vector lp = Vector::Constant(obs.cols(), -0.5 * static_cast<double>(action_dim()) * kLog2Pi);
  for (std::size_t j = 0; j < action_dim(); ++j) {
    const auto r = static_cast<Eigen::Index>(j);
    const Eigen::ArrayXd z = (actions.row(r) - mean.row(r)).array() * std::exp(-ls[j]);
    lp.array() -= ls[j] + 0.5 * z.square();
  }
  return lp;
}

Vector GaussianPolicy::mode(std::span<const double> obs) const {
  check_obs(obs.size());
  return net_.forward(params_, obs);
}

DistBatch GaussianPolicy::distribution(const Matrix& obs) const {
  check_obs(static_cast<std::size_t>(obs.rows()));
  DistBatch d;
  d.kind = DistKind::gaussian;
  d.table = net_.forward_batch(params_, obs);
  const auto ls = log_std();
  d.log_std = Eigen::Map<const Vector>(ls.data(), static_cast<Eigen::Index>(ls.size()));
  return d;
}

ParamVector GaussianPolicy::grad_logprob_weighted(const Matrix& obs, const Matrix& actions,
                                                  const Vector& weights) const {
  check_batch(obs, actions);
  if (weights.size() != obs.cols() || obs.cols() == 0) {
    throw ShapeError("grad_logprob_weighted: weights must align with a nonempty batch");
  }
  const double n = static_cast<double>(obs.cols());
  Mlp::Trace trace;
  const Matrix mean = net_.forward_batch(params_, obs, &trace);
  const auto ls = log_std();
  ParamVector grad = params_.zeros_like();
  Matrix d_mean(mean.rows(), mean.cols());
  auto g_ls = grad.segment("log_std");
  for (std::size_t j = 0; j < action_dim(); ++j) {
    const auto r = static_cast<Eigen::Index>(j);
    const double inv_var = std::exp(-2.0 * ls[j]);
    const Eigen::ArrayXd diff = (actions.row(r) - mean.row(r)).transpose().array();
    d_mean.row(r) = (weights.array() * diff * inv_var / n).matrix().transpose();
    g_ls[j] = (weights.array() * (diff.square() * inv_var - 1.0)).sum() / n;
  }
  net_.backward(params_, trace, d_mean, grad);
  return grad;
}

double GaussianPolicy::mean_kl(const DistBatch& old, const Matrix& obs) const {
  check_obs(static_cast<std::size_t>(obs.rows()));
  if (old.kind != DistKind::gaussian || old.size() != obs.cols()) {
    throw ShapeError("mean_kl: cached distribution does not align with observations");
  }
  const Matrix mean = net_.forward_batch(params_, obs);
  const auto ls = log_std();
  double total = 0.0;
  for (std::size_t j = 0; j < action_dim(); ++j) {
    const auto r = static_cast<Eigen::Index>(j);
    const double lo = old.log_std[r];
    const double var_old = std::exp(2.0 * lo);
    const double inv_var_new = std::exp(-2.0 * ls[j]);
    const Eigen::ArrayXd diff = (old.table.row(r) - mean.row(r)).array();
    total += (ls[j] - lo - 0.5) * static_cast<double>(obs.cols()) +
             ((var_old + diff.square()) * 0.5 * inv_var_new).sum();
  }
  return total / static_cast<double>(obs.cols());
}

ParamVector GaussianPolicy::grad_mean_kl(const DistBatch& old, const Matrix& obs) const {
  check_obs(static_cast<std::size_t>(obs.rows()));
  if (old.kind != DistKind::gaussian || old.size() != obs.cols()) {
    throw ShapeError("grad_mean_kl: cached distribution does not align with observations");
  }
  const double n = static_cast<double>(obs.cols());
  Mlp::Trace trace;
  const Matrix mean = net_.forward_batch(params_, obs, &trace);
  const auto ls = log_std();
  ParamVector grad = params_.zeros_like();
  Matrix d_mean(mean.rows(), mean.cols());
  auto g_ls = grad.segment("log_std");
  for (std::size_t j = 0; j < action_dim(); ++j) {
    const auto r = static_cast<Eigen::Index>(j);
    const double var_old = std::exp(2.0 * old.log_std[r]);
    const double inv_var_new = std::exp(-2.0 * ls[j]);
    const Eigen::ArrayXd diff = (mean.row(r) - old.table.row(r)).array();
    d_mean.row(r) = (diff * inv_var_new / n).matrix();
    g_ls[j] = (1.0 - (var_old + diff.square()) * inv_var_new).sum() / n;
  }
  net_.backward(params_, trace, d_mean, grad);
  return grad;
}

std::unique_ptr<FisherOperator> GaussianPolicy::fisher(const Matrix& obs, double damping) const {
  check_obs(static_cast<std::size_t>(obs.rows()));
  return std::make_unique<GaussianFisher>(*this, obs, damping);
}

// --- CategoricalPolicy ----------------------------------------------------

CategoricalPolicy::CategoricalPolicy(MlpSpec logits_net) : net_(std::move(logits_net), params_, "logits.") {}

void CategoricalPolicy::initialize(Rng& rng) { net_.initialize(params_, rng); }

Vector CategoricalPolicy::probabilities(std::span<const double> obs) const {
  check_obs(obs.size());
  const Vector logits = net_.forward(params_, obs);
  check_finite_output(logits, "CategoricalPolicy");
  return log_softmax_columns(logits).array().exp();
}

Sample CategoricalPolicy::sample(std::span<const double> obs, Rng& rng) const {
  check_obs(obs.size());
  const Vector logits = net_.forward(params_, obs);
  check_finite_output(logits, "CategoricalPolicy::sample");
  const Vector logp = log_softmax_columns(logits);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double u = uni(rng);
  double acc = 0.0;
  Eigen::Index choice = logp.size() - 1;
  for (Eigen::Index i = 0; i < logp.size(); ++i) {
    acc += std::exp(logp[i]);
    if (u < acc) {
      choice = i;
      break;
    }
  }
  Sample s;
  s.action = Vector::Constant(1, static_cast<double>(choice));
  s.log_prob = logp[choice];
  return s;
}

double CategoricalPolicy::log_prob(std::span<const double> obs, std::span<const double> action) const {
  check_obs(obs.size());
  if (action.size() != 1) throw ShapeError("CategoricalPolicy::log_prob: action must be a single index");
  const std::size_t a = action_index(action[0], n_choices());
  const Vector logp = log_softmax_columns(net_.forward(params_, obs));
  return logp[static_cast<Eigen::Index>(a)];
}

Vector CategoricalPolicy::log_prob_batch(const Matrix& obs, const Matrix& actions) const {
  check_batch(obs, actions);
  const Matrix logp = log_softmax_columns(net_.forward_batch(params_, obs));
  Vector out(obs.cols());
  for (Eigen::Index i = 0; i < obs.cols(); ++i) {
    out[i] = logp(static_cast<Eigen::Index>(action_index(actions(0, i), n_choices())), i);
  }
  return out;
}

Vector CategoricalPolicy::mode(std::span<const double> obs) const {
  const Vector p = probabilities(obs);
  Eigen::Index best = 0;
  p.maxCoeff(&best);
  return Vector::Constant(1, static_cast<double>(best));
}

DistBatch CategoricalPolicy::distribution(const Matrix& obs) const {
  check_obs(static_cast<std::size_t>(obs.rows()));
  DistBatch d;
  d.kind = DistKind::categorical;
  d.table = log_softmax_columns(net_.forward_batch(params_, obs)).array().exp();
  return d;
}

ParamVector CategoricalPolicy::grad_logprob_weighted(const Matrix& obs, const Matrix& actions,
                                                     const Vector& weights) const {
  check_batch(obs, actions);
  if (weights.size() != obs.cols() || obs.cols() == 0) {
    throw ShapeError("grad_logprob_weighted: weights must align with a nonempty batch");
  }
  const double n = static_cast<double>(obs.cols());
  Mlp::Trace trace;
  const Matrix probs = log_softmax_columns(net_.forward_batch(params_, obs, &trace)).array().exp();
  Matrix d_logits = -probs;
  for (Eigen::Index i = 0; i < obs.cols(); ++i) {
    d_logits(static_cast<Eigen::Index>(action_index(actions(0, i), n_choices())), i) += 1.0;
    d_logits.col(i) *= weights[i] / n;
  }
  ParamVector grad = params_.zeros_like();
  net_.backward(params_, trace, d_logits, grad);
  return grad;
}

double CategoricalPolicy::mean_kl(const DistBatch& old, const Matrix& obs) const {
  check_obs(static_cast<std::size_t>(obs.rows()));
  if (old.kind != DistKind::categorical || old.size() != obs.cols()) {
    throw ShapeError("mean_kl: cached distribution does not align with observations");
  }
  const Matrix logp = log_softmax_columns(net_.forward_batch(params_, obs));
  double total = 0.0;
  for (Eigen::Index i = 0; i < obs.cols(); ++i) {
    for (Eigen::Index k = 0; k < logp.rows(); ++k) {
      const double po = old.table(k, i);
      if (po > 0.0) total += po * (std::log(po) - logp(k, i));
    }
  }
  return total / static_cast<double>(obs.cols());
}

ParamVector CategoricalPolicy::grad_mean_kl(const DistBatch& old, const Matrix& obs) const {
  check_obs(static_cast<std::size_t>(obs.rows()));
  if (old.kind != DistKind::categorical || old.size() != obs.cols()) {
    throw ShapeError("grad_mean_kl: cached distribution does not align with observations");
  }
  Mlp::Trace trace;
  const Matrix probs = log_softmax_columns(net_.forward_batch(params_, obs, &trace)).array().exp();
  // d/dlogits of sum_k p_old log p_new is p_old - p_new (p_old sums to one).
  const Matrix d_logits = (probs - old.table) / static_cast<double>(obs.cols());
  ParamVector grad = params_.zeros_like();
  net_.backward(params_, trace, d_logits, grad);
  return grad;
}

std::unique_ptr<FisherOperator> CategoricalPolicy::fisher(const Matrix& obs, double damping) const {
  check_obs(static_cast<std::size_t>(obs.rows()));
  return std::make_unique<CategoricalFisher>(*this, obs, damping);
}

}  // namespace haar
