#include "haar/theory.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include <Eigen/LU>

namespace haar::theory {

namespace {

constexpr double kRowTolerance = 1e-12;

void check_rows(const Matrix& m, const std::string& what) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if ((m.row(r).array() < 0.0).any() || !m.row(r).allFinite()) {
      throw ConfigError(what + " has a negative or non-finite entry in row " + std::to_string(r));
    }
    if (std::abs(m.row(r).sum() - 1.0) > kRowTolerance) {
      throw ConfigError(what + " row " + std::to_string(r) + " does not sum to 1");
    }
  }
}

Vector initial_of(const env::TabularMdp& mdp) {
  return Eigen::Map<const Vector>(mdp.initial.data(), static_cast<Eigen::Index>(mdp.n_states));
}

/// Row-stochastic transition of one skill's primitive chain, with terminal
/// states made absorbing and reward-free.
void skill_chain(const env::TabularMdp& mdp, const Matrix& pi, Matrix& p, Vector& r) {
  const std::size_t S = mdp.n_states;
  p = Matrix::Zero(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(S));
  r = Vector::Zero(static_cast<Eigen::Index>(S));
  for (std::size_t s = 0; s < S; ++s) {
    const auto si = static_cast<Eigen::Index>(s);
    if (mdp.terminal[s]) {
      p(si, si) = 1.0;
      continue;
    }
    for (std::size_t a = 0; a < mdp.n_actions; ++a) {
      const double w = pi(si, static_cast<Eigen::Index>(a));
      if (w == 0.0) continue;
      r(si) += w * mdp.r(s, a);
      for (std::size_t s2 = 0; s2 < S; ++s2) p(si, static_cast<Eigen::Index>(s2)) += w * mdp.p(s, a, s2);
    }
  }
}

/// rho^T (I - discount P)^{-1}, i.e. the discounted occupancy.
Vector occupancy(const Matrix& p, double discount, const Vector& rho) {
  const Eigen::Index n = p.rows();
  const Matrix a = (Matrix::Identity(n, n) - discount * p).transpose();
  Eigen::FullPivLU<Matrix> lu(a);
  if (!lu.isInvertible()) throw NumericError("discounted occupancy is unbounded: I - gamma P is singular");
  Vector d = lu.solve(rho);
  if (!d.allFinite()) throw NumericError("discounted occupancy is not finite");
  return d;
}

void check_compatible(const TabularJointPolicy& a, const TabularJointPolicy& b) {
  if (a.k != b.k || a.gamma_h != b.gamma_h || a.n_states() != b.n_states() || a.n_skills() != b.n_skills() ||
      a.n_actions() != b.n_actions()) {
    throw ConfigError("joint policies must share k, gamma_h and table shapes");
  }
}

double segment_weight(double gamma_l, int k) {
  if (gamma_l == 1.0) return 1.0;
  return (1.0 - std::pow(gamma_l, k)) / ((1.0 - gamma_l) * k);
}

std::size_t argmax(std::span<const double> v, std::size_t begin, std::size_t end) {
  std::size_t best = begin;
  for (std::size_t i = begin + 1; i < end; ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best - begin;
}

Sample draw_row(const Matrix& table, Eigen::Index row, Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  Eigen::Index pick = table.cols() - 1;
  for (Eigen::Index j = 0; j < table.cols(); ++j) {
    acc += table(row, j);
    if (u < acc) {
      pick = j;
      break;
    }
  }
  while (table(row, pick) == 0.0 && pick > 0) --pick;
  return Sample{Vector::Constant(1, static_cast<double>(pick)), std::log(table(row, pick))};
}

}  // namespace

void TabularJointPolicy::validate() const {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (!(gamma_h > 0.0 && gamma_h <= 1.0)) throw ConfigError("gamma_h must be in (0, 1]");
  if (!(gamma_l > 0.0 && gamma_l <= 1.0)) throw ConfigError("gamma_l must be in (0, 1]");
  if (pi_h.rows() == 0 || pi_h.cols() == 0) throw ShapeError("pi_h must be non-empty");
  if (pi_l.size() != n_skills()) throw ShapeError("pi_l must hold one table per skill");
  check_rows(pi_h, "pi_h");
  for (std::size_t z = 0; z < pi_l.size(); ++z) {
    if (pi_l[z].rows() != pi_h.rows() || pi_l[z].cols() != pi_l.front().cols() || pi_l[z].cols() == 0) {
      throw ShapeError("pi_l tables must be S x A with the same A for every skill");
    }
    check_rows(pi_l[z], "pi_l[" + std::to_string(z) + "]");
  }
}

void TabularJointPolicy::validate_against(const env::TabularMdp& mdp) const {
  validate();
  mdp.validate();
  if (n_states() != mdp.n_states || n_actions() != mdp.n_actions) {
    throw ShapeError("joint policy shape does not match the MDP");
  }
}

TabularJointPolicy random_joint_policy(std::size_t n_states, std::size_t n_skills, std::size_t n_actions, int k,
                                       double gamma_h, double gamma_l, Rng& rng) {
  std::exponential_distribution<double> expo(1.0);
  auto dirichlet_rows = [&](std::size_t rows, std::size_t cols) {
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = expo(rng);
      m.row(r) /= m.row(r).sum();
    }
    return m;
  };
  TabularJointPolicy jp;
  jp.pi_h = dirichlet_rows(n_states, n_skills);
  for (std::size_t z = 0; z < n_skills; ++z) jp.pi_l.push_back(dirichlet_rows(n_states, n_actions));
  jp.k = k;
  jp.gamma_h = gamma_h;
  jp.gamma_l = gamma_l;
  jp.validate();
  return jp;
}

SemiMdp build_semi_mdp(const env::TabularMdp& mdp, const TabularJointPolicy& jp) {
  jp.validate_against(mdp);
  const auto S = static_cast<Eigen::Index>(mdp.n_states);
  SemiMdp out;
  out.p_h = Matrix::Zero(S, S);
  out.r_h = Vector::Zero(S);
  for (std::size_t z = 0; z < jp.n_skills(); ++z) {
    Matrix p;
    Vector r;
    skill_chain(mdp, jp.pi_l[z], p, r);
    Matrix pk = Matrix::Identity(S, S);
    Vector rk = Vector::Zero(S);
    for (int i = 0; i < jp.k; ++i) {
      rk += pk * r;
      pk = pk * p;
    }
    const Vector w = jp.pi_h.col(static_cast<Eigen::Index>(z));
    out.p_h += w.asDiagonal() * pk;
    out.r_h += w.cwiseProduct(rk);
    out.kernel.push_back(std::move(pk));
    out.reward.push_back(std::move(rk));
  }
  return out;
}

Vector exact_high_values(const env::TabularMdp& mdp, const TabularJointPolicy& jp) {
  const SemiMdp smdp = build_semi_mdp(mdp, jp);
  const Eigen::Index n = smdp.p_h.rows();
  Eigen::FullPivLU<Matrix> lu(Matrix::Identity(n, n) - jp.gamma_h * smdp.p_h);
  if (!lu.isInvertible()) throw NumericError("I - gamma_h P_h is singular; the high-level value is unbounded");
  Vector v = lu.solve(smdp.r_h);
  if (!v.allFinite()) throw NumericError("high-level value is not finite");
  return v;
}

double exact_eta(const env::TabularMdp& mdp, const TabularJointPolicy& jp) {
  return initial_of(mdp).dot(exact_high_values(mdp, jp));
}

Matrix exact_high_advantage(const env::TabularMdp& mdp, const TabularJointPolicy& jp) {
  const SemiMdp smdp = build_semi_mdp(mdp, jp);
  const Vector v = exact_high_values(mdp, jp);
  Matrix adv(v.size(), static_cast<Eigen::Index>(jp.n_skills()));
  for (std::size_t z = 0; z < jp.n_skills(); ++z) {
    adv.col(static_cast<Eigen::Index>(z)) = smdp.reward[z] + jp.gamma_h * (smdp.kernel[z] * v) - v;
  }
  return adv;
}

Vector realized_advantage(const env::TabularMdp& mdp, const TabularJointPolicy& jp_old,
                          const TabularJointPolicy& jp_new) {
  check_compatible(jp_old, jp_new);
  const Vector v_old = exact_high_values(mdp, jp_old);
  const SemiMdp smdp = build_semi_mdp(mdp, jp_new);
  return smdp.r_h + jp_old.gamma_h * (smdp.p_h * v_old) - v_old;
}

Lemma4Result lemma4(const env::TabularMdp& mdp, const TabularJointPolicy& jp_old, const TabularJointPolicy& jp_new) {
  const Vector adv = realized_advantage(mdp, jp_old, jp_new);
  const SemiMdp smdp = build_semi_mdp(mdp, jp_new);
  const Vector rho = initial_of(mdp);
  Lemma4Result out;
  out.eta_old = exact_eta(mdp, jp_old);
  out.eta_new = exact_eta(mdp, jp_new);
  out.advantage_sum = occupancy(smdp.p_h, jp_old.gamma_h, rho).dot(adv);
  out.residual = std::abs(out.eta_new - out.eta_old - out.advantage_sum);
  return out;
}

double lemma4_residual(const env::TabularMdp& mdp, const TabularJointPolicy& jp_old,
                       const TabularJointPolicy& jp_new) {
  return lemma4(mdp, jp_old, jp_new).residual;
}

Lemma3Result lemma3(const env::TabularMdp& mdp, const TabularJointPolicy& jp_old, const TabularJointPolicy& jp_new,
                    double gamma_l) {
  if (!(gamma_l > 0.0 && gamma_l <= 1.0)) throw ConfigError("gamma_l must be in (0, 1]");
  const Vector adv = realized_advantage(mdp, jp_old, jp_new);
  const SemiMdp smdp = build_semi_mdp(mdp, jp_new);
  const Vector rho = initial_of(mdp);
  const double c = segment_weight(gamma_l, jp_new.k);
  Lemma3Result out;
  out.eta_l = c * occupancy(smdp.p_h, std::pow(gamma_l, jp_new.k), rho).dot(adv);
  out.approximation = c * occupancy(smdp.p_h, jp_old.gamma_h, rho).dot(adv);
  out.relative_error = std::abs(out.eta_l - out.approximation) / std::max(std::abs(out.approximation), kRelativeEpsilon);
  return out;
}

double lemma3_relative_error(const env::TabularMdp& mdp, const TabularJointPolicy& jp_old,
                             const TabularJointPolicy& jp_new, double gamma_l) {
  return lemma3(mdp, jp_old, jp_new, gamma_l).relative_error;
}

double low_level_objective(const env::TabularMdp& mdp, const TabularJointPolicy& jp,
                           const std::vector<Matrix>& pi_l_new) {
  TabularJointPolicy next = jp;
  next.pi_l = pi_l_new;
  return lemma3(mdp, jp, next, jp.gamma_l).eta_l;
}

std::vector<Matrix> low_level_gradient(const env::TabularMdp& mdp, const TabularJointPolicy& jp) {
  // Chain over (s, z, phase). A segment's advantage is paid out as per-step
  // terms: the primitive reward at every phase, -V(s) when the segment starts
  // and gamma_h V(s') when it ends. Within a segment nothing is discounted;
  // crossing into the next segment discounts by gamma_l^k.
  jp.validate_against(mdp);
  const Vector v = exact_high_values(mdp, jp);
  const std::size_t S = mdp.n_states, Z = jp.n_skills(), A = mdp.n_actions;
  const auto k = static_cast<std::size_t>(jp.k);
  const std::size_t n = S * Z * k;
  auto index = [&](std::size_t s, std::size_t z, std::size_t i) { return static_cast<Eigen::Index>((s * Z + z) * k + i); };
  auto prob = [&](std::size_t s, std::size_t a, std::size_t s2) {
    if (mdp.terminal[s]) return s2 == s ? 1.0 : 0.0;
    return mdp.p(s, a, s2);
  };
  const double boundary_discount = std::pow(jp.gamma_l, jp.k);

  // Reward and discounted successor rows per (x, a).
  Matrix reward(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(A));
  std::vector<Matrix> next(A, Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)));
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t z = 0; z < Z; ++z) {
      for (std::size_t i = 0; i < k; ++i) {
        const Eigen::Index x = index(s, z, i);
        const bool last = i + 1 == k;
        for (std::size_t a = 0; a < A; ++a) {
          double r = mdp.terminal[s] ? 0.0 : mdp.r(s, a);
          if (i == 0) r -= v(static_cast<Eigen::Index>(s));
          for (std::size_t s2 = 0; s2 < S; ++s2) {
            const double p = prob(s, a, s2);
            if (p == 0.0) continue;
            if (last) {
              r += p * jp.gamma_h * v(static_cast<Eigen::Index>(s2));
              for (std::size_t z2 = 0; z2 < Z; ++z2) {
                next[a](x, index(s2, z2, 0)) +=
                    boundary_discount * p * jp.pi_h(static_cast<Eigen::Index>(s2), static_cast<Eigen::Index>(z2));
              }
            } else {
              next[a](x, index(s2, z, i + 1)) += p;
            }
          }
          reward(x, static_cast<Eigen::Index>(a)) = r;
        }
      }
    }
  }

  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  Vector r_pi = Vector::Zero(static_cast<Eigen::Index>(n));
  Vector mu0 = Vector::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t z = 0; z < Z; ++z) {
      mu0(index(s, z, 0)) = mdp.initial[s] * jp.pi_h(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(z));
      for (std::size_t i = 0; i < k; ++i) {
        const Eigen::Index x = index(s, z, i);
        for (std::size_t a = 0; a < A; ++a) {
          const double w = jp.pi_l[z](static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
          r_pi(x) += w * reward(x, static_cast<Eigen::Index>(a));
          m.row(x) += w * next[a].row(x);
        }
      }
    }
  }
  const Matrix lhs = Matrix::Identity(m.rows(), m.cols()) - m;
  Eigen::FullPivLU<Matrix> lu(lhs);
  if (!lu.isInvertible()) throw NumericError("augmented low-level chain has an unbounded value");
  const Vector value = lu.solve(r_pi);
  const Vector d = occupancy(m, 1.0, mu0);

  const double c = segment_weight(jp.gamma_l, jp.k);
  std::vector<Matrix> grad(Z, Matrix::Zero(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(A)));
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t z = 0; z < Z; ++z) {
      for (std::size_t i = 0; i < k; ++i) {
        const Eigen::Index x = index(s, z, i);
        for (std::size_t a = 0; a < A; ++a) {
          const double q = reward(x, static_cast<Eigen::Index>(a)) + next[a].row(x).dot(value);
          const double w = jp.pi_l[z](static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
          grad[z](static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) += c * d(x) * w * (q - value(x));
        }
      }
    }
  }
  return grad;
}

TabularJointPolicy greedy_high_step(const env::TabularMdp& mdp, TabularJointPolicy jp) {
  const Matrix adv = exact_high_advantage(mdp, jp);
  const Vector v = exact_high_values(mdp, jp);
  for (Eigen::Index s = 0; s < adv.rows(); ++s) {
    Eigen::Index best = 0;
    const double gain = adv.row(s).maxCoeff(&best);
    if (gain > 1e-12 * (1.0 + std::abs(v(s)))) {
      jp.pi_h.row(s).setZero();
      jp.pi_h(s, best) = 1.0;
    }
  }
  return jp;
}

AlternationTrace monotone_alternation_check(const env::TabularMdp& mdp, TabularJointPolicy jp, int iterations) {
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  jp.gamma_l = std::pow(jp.gamma_h, 1.0 / jp.k);
  jp.validate_against(mdp);
  AlternationTrace trace;
  trace.eta.push_back(exact_eta(mdp, jp));
  for (int it = 0; it < iterations; ++it) {
    jp = greedy_high_step(mdp, std::move(jp));
    trace.eta.push_back(exact_eta(mdp, jp));
    trace.level.push_back('h');

    // One multiplicative softmax step on the low level.
    const std::vector<Matrix> grad = low_level_gradient(mdp, jp);
    double scale = 0.0;
    for (const auto& g : grad) scale = std::max(scale, g.cwiseAbs().maxCoeff());
    if (scale > 1e-14) {
      std::vector<Matrix> logits(jp.pi_l.size());
      for (std::size_t z = 0; z < logits.size(); ++z) logits[z] = jp.pi_l[z].array().log().matrix();
      auto stepped = [&](double alpha) {
        std::vector<Matrix> out(logits.size());
        for (std::size_t z = 0; z < out.size(); ++z) {
          out[z] = logits[z] + (alpha / scale) * grad[z];
          for (Eigen::Index s = 0; s < out[z].rows(); ++s) {
            out[z].row(s) = (out[z].row(s).array() - out[z].row(s).maxCoeff()).exp().matrix();
            out[z].row(s) /= out[z].row(s).sum();
          }
        }
        return out;
      };
      double alpha = 1e-2;
      double best = low_level_objective(mdp, jp, stepped(alpha));
      for (int tries = 0; tries < 14; ++tries) {
        const double trial = low_level_objective(mdp, jp, stepped(2.0 * alpha));
        if (!(trial > best)) break;
        best = trial;
        alpha *= 2.0;
      }
      if (best >= 0.0) jp.pi_l = stepped(alpha);
    }
    trace.eta.push_back(exact_eta(mdp, jp));
    trace.level.push_back('l');
  }
  return trace;
}

Sample TabularHighSampler::sample(std::span<const double> obs, Rng& rng) const {
  if (obs.size() != obs_dim()) throw ShapeError("tabular pi_h: observation size mismatch");
  return draw_row(pi_h_, static_cast<Eigen::Index>(argmax(obs, 0, obs.size())), rng);
}

Sample TabularLowSampler::sample(std::span<const double> obs, Rng& rng) const {
  if (obs.size() != obs_dim()) throw ShapeError("tabular pi_l: observation size mismatch");
  const std::size_t S = static_cast<std::size_t>(pi_l_.front().rows());
  const std::size_t s = argmax(obs, 0, S);
  const std::size_t z = argmax(obs, S, obs.size());
  return draw_row(pi_l_[z], static_cast<Eigen::Index>(s), rng);
}

std::vector<CheckRow> run_theory_checks(std::uint64_t seed, int lemma4_instances) {
  std::vector<CheckRow> rows;
  Rng rng = make_rng(seed, {4});
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto size = [](int v) { return static_cast<std::size_t>(v); };

  for (int i = 0; i < lemma4_instances; ++i) {
    // Half episodic (one absorbing state among the |S| <= 5), half continuing.
    const bool episodic = i % 2 == 0;
    const int n_states = episodic ? pick(1, 4) : pick(1, 5);
    const int n_skills = pick(1, 3), n_actions = pick(1, 3), k = pick(1, 3);
    const double gamma = i % 4 < 2 ? 0.9 : 0.99;
    const env::TabularMdp mdp = episodic ? env::random_episodic_mdp(size(n_states), size(n_actions), 0.1, rng)
                                         : env::random_mdp(size(n_states), size(n_actions), rng);
    const TabularJointPolicy a = random_joint_policy(mdp.n_states, size(n_skills), size(n_actions), k, gamma, gamma, rng);
    const TabularJointPolicy b = random_joint_policy(mdp.n_states, size(n_skills), size(n_actions), k, gamma, gamma, rng);
    const double r = lemma4_residual(mdp, a, b);
    rows.push_back({"lemma4", i, static_cast<double>(k), r, 1e-8, r <= 1e-8});
  }

  for (int i = 0; i < 20; ++i) {
    const int k = 1 + i % 5;
    const double gamma = i % 2 == 0 ? 0.9 : 0.99;
    const env::TabularMdp mdp = env::random_episodic_mdp(size(pick(2, 4)), size(pick(1, 3)), 0.05, rng);
    const TabularJointPolicy a = random_joint_policy(mdp.n_states, 3, mdp.n_actions, k, gamma, gamma, rng);
    const TabularJointPolicy b = greedy_high_step(mdp, a);
    const double err = lemma3_relative_error(mdp, a, b, std::pow(gamma, 1.0 / k));
    rows.push_back({"lemma3", i, static_cast<double>(k), err, 1e-10, err <= 1e-10});
  }

  for (int i = 0; i < 5; ++i) {
    const env::TabularMdp mdp = env::random_episodic_mdp(4, 2, 0.05, rng);
    const TabularJointPolicy a0 = random_joint_policy(mdp.n_states, 2, 2, 5, 0.9, 0.9, rng);
    double prev = INFINITY;
    for (double gamma : {0.9, 0.99, 0.999}) {
      TabularJointPolicy a = a0;
      a.gamma_h = a.gamma_l = gamma;
      const TabularJointPolicy b = greedy_high_step(mdp, a);
      const double err = lemma3_relative_error(mdp, a, b, gamma);
      rows.push_back({"lemma3_sweep", i, gamma, err, prev, err < prev});
      prev = err;
    }
  }

  {
    // Error against k at gamma_l = gamma_h; reported, not bounded.
    const env::TabularMdp mdp = env::random_episodic_mdp(4, 2, 0.05, rng);
    const TabularJointPolicy a0 = random_joint_policy(mdp.n_states, 2, 2, 1, 0.99, 0.99, rng);
    for (int k = 1; k <= 8; ++k) {
      TabularJointPolicy a = a0;
      a.k = k;
      const TabularJointPolicy b = greedy_high_step(mdp, a);
      rows.push_back({"lemma3_k", 0, static_cast<double>(k), lemma3_relative_error(mdp, a, b, 0.99), INFINITY, true});
    }
  }

  for (int i = 0; i < 5; ++i) {
    const int k = 1 + i % 3;
    const env::TabularMdp mdp = env::random_episodic_mdp(4, 2, 0.05, rng);
    const TabularJointPolicy jp = random_joint_policy(mdp.n_states, 2, 2, k, 0.95, 0.95, rng);
    const AlternationTrace t = monotone_alternation_check(mdp, jp, 10);
    double worst = INFINITY;
    for (std::size_t j = 1; j < t.eta.size(); ++j) worst = std::min(worst, t.eta[j] - t.eta[j - 1]);
    rows.push_back({"alternation", i, static_cast<double>(k), worst, -1e-10, worst >= -1e-10});
  }
  return rows;
}

std::string check_rows_csv(const std::vector<CheckRow>& rows) {
  auto fmt = [](double v) {
    char buf[64];
    return std::string(buf, std::to_chars(buf, buf + sizeof(buf), v).ptr);
  };
  std::ostringstream o;
  o << "check,instance,param,value,tolerance,pass\n";
  for (const auto& r : rows) {
    o << r.check << ',' << r.instance << ',' << fmt(r.param) << ',' << fmt(r.value) << ',' << fmt(r.tolerance) << ','
      << (r.pass ? 1 : 0) << '\n';
  }
  return o.str();
}

}  // namespace haar::theory
