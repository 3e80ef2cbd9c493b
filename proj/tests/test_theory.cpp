#include <doctest.h>

#include <cmath>
#include <functional>

#include <Eigen/LU>

#include "haar/env/environment.hpp"
#include "haar/hierarchy.hpp"
#include "haar/theory.hpp"

using namespace haar;
using namespace haar::theory;

namespace {

// k-step segment statistics by enumerating every primitive path.
struct SegmentOracle {
  Matrix p;  // S x S
  Vector r;  // S
};

SegmentOracle enumerate_segments(const env::TabularMdp& mdp, const Matrix& pi, int k) {
  const auto S = static_cast<Eigen::Index>(mdp.n_states);
  SegmentOracle out{Matrix::Zero(S, S), Vector::Zero(S)};
  std::function<void(std::size_t, std::size_t, int, double)> walk = [&](std::size_t start, std::size_t s, int depth,
                                                                        double prob) {
    if (depth == k) {
      out.p(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(s)) += prob;
      return;
    }
    if (mdp.terminal[s]) {
      walk(start, s, depth + 1, prob);
      return;
    }
    for (std::size_t a = 0; a < mdp.n_actions; ++a) {
      const double pa = prob * pi(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
      if (pa == 0.0) continue;
      out.r(static_cast<Eigen::Index>(start)) += pa * mdp.r(s, a);
      for (std::size_t s2 = 0; s2 < mdp.n_states; ++s2) {
        if (mdp.p(s, a, s2) > 0.0) walk(start, s2, depth + 1, pa * mdp.p(s, a, s2));
      }
    }
  };
  for (std::size_t s = 0; s < mdp.n_states; ++s) walk(s, s, 0, 1.0);
  return out;
}

// Values by iterating the high-level Bellman operator to convergence.
Vector iterate_values(const env::TabularMdp& mdp, const TabularJointPolicy& jp, std::vector<SegmentOracle>* segs = nullptr) {
  std::vector<SegmentOracle> seg;
  for (std::size_t z = 0; z < jp.n_skills(); ++z) seg.push_back(enumerate_segments(mdp, jp.pi_l[z], jp.k));
  Vector v = Vector::Zero(static_cast<Eigen::Index>(mdp.n_states));
  for (int it = 0; it < 5000; ++it) {
    Vector nv = Vector::Zero(v.size());
    for (std::size_t z = 0; z < seg.size(); ++z) {
      const Vector q = seg[z].r + jp.gamma_h * seg[z].p * v;
      nv += jp.pi_h.col(static_cast<Eigen::Index>(z)).cwiseProduct(q);
    }
    v = nv;
  }
  if (segs) *segs = seg;
  return v;
}

double rho_dot(const env::TabularMdp& mdp, const Vector& v) {
  double out = 0.0;
  for (std::size_t s = 0; s < mdp.n_states; ++s) out += mdp.initial[s] * v(static_cast<Eigen::Index>(s));
  return out;
}

}  // namespace

TEST_SUITE("theory") {
  TEST_CASE("semi-MDP values match path enumeration") {
    Rng rng = make_rng(1);
    for (int trial = 0; trial < 5; ++trial) {
      const env::TabularMdp mdp = env::random_episodic_mdp(4, 2, 0.1, rng);
      const TabularJointPolicy jp = random_joint_policy(5, 3, 2, 1 + trial % 3, 0.9, 0.9, rng);
      std::vector<SegmentOracle> seg;
      const Vector v_oracle = iterate_values(mdp, jp, &seg);
      const Vector v = exact_high_values(mdp, jp);
      CHECK((v - v_oracle).cwiseAbs().maxCoeff() <= 1e-9);
      CHECK(exact_eta(mdp, jp) == doctest::Approx(rho_dot(mdp, v_oracle)).epsilon(1e-10));

      const Matrix adv = exact_high_advantage(mdp, jp);
      for (std::size_t z = 0; z < 3; ++z) {
        const Vector q = seg[z].r + jp.gamma_h * seg[z].p * v_oracle;
        CHECK((adv.col(static_cast<Eigen::Index>(z)) - (q - v_oracle)).cwiseAbs().maxCoeff() <= 1e-9);
      }
      // The policy-weighted advantage vanishes in every state.
      CHECK(adv.cwiseProduct(jp.pi_h).rowwise().sum().cwiseAbs().maxCoeff() <= 1e-10);
    }
  }

  TEST_CASE("closed-form values") {
    env::TabularMdp one;
    one.n_states = 1;
    one.n_actions = 1;
    one.transition = {1.0};
    one.reward = {1.0};
    one.initial = {1.0};
    one.terminal = {false};
    TabularJointPolicy jp;
    jp.pi_h = Matrix::Ones(1, 1);
    jp.pi_l = {Matrix::Ones(1, 1)};
    jp.gamma_h = 0.5;
    CHECK(exact_eta(one, jp) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(exact_high_advantage(one, jp)(0, 0) == doctest::Approx(0.0).scale(1e-15));

    Rng rng = make_rng(14);
    env::TabularMdp zero = env::random_mdp(4, 2, rng);
    std::fill(zero.reward.begin(), zero.reward.end(), 0.0);
    CHECK(exact_eta(zero, random_joint_policy(4, 3, 2, 2, 0.9, 0.9, rng)) == 0.0);

    // One skill means the high level has no choice, so its advantage is zero.
    const env::TabularMdp mdp = env::random_episodic_mdp(3, 2, 0.1, rng);
    const TabularJointPolicy single = random_joint_policy(4, 1, 2, 3, 0.9, 0.9, rng);
    CHECK(exact_high_advantage(mdp, single).cwiseAbs().maxCoeff() <= 1e-12);
  }

  TEST_CASE("with k = 1 the hierarchy is the flat mixture policy") {
    Rng rng = make_rng(2);
    const env::TabularMdp mdp = env::random_mdp(4, 3, rng);
    const TabularJointPolicy jp = random_joint_policy(4, 2, 3, 1, 0.8, 0.8, rng);
    Matrix p = Matrix::Zero(4, 4);
    Vector r = Vector::Zero(4);
    for (std::size_t s = 0; s < 4; ++s) {
      for (std::size_t a = 0; a < 3; ++a) {
        double w = 0.0;
        for (std::size_t z = 0; z < 2; ++z) {
          w += jp.pi_h(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(z)) *
               jp.pi_l[z](static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
        }
        r(static_cast<Eigen::Index>(s)) += w * mdp.r(s, a);
        for (std::size_t s2 = 0; s2 < 4; ++s2) p(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s2)) += w * mdp.p(s, a, s2);
      }
    }
    const Vector v_flat = (Matrix::Identity(4, 4) - 0.8 * p).lu().solve(r);
    CHECK((exact_high_values(mdp, jp) - v_flat).cwiseAbs().maxCoeff() <= 1e-12);
  }

  TEST_CASE("exact eta agrees with Monte-Carlo rollouts of the hierarchy") {
    Rng rng = make_rng(3);
    const env::TabularMdp mdp = env::random_episodic_mdp(4, 2, 0.15, rng);
    TabularJointPolicy jp = random_joint_policy(5, 2, 2, 3, 0.9, 0.9, rng);
    const double eta = exact_eta(mdp, jp);

    const env::TabularEnv tab(mdp, 1000000);
    const TabularHighSampler hi(jp.pi_h);
    const TabularLowSampler lo(jp.pi_l);
    RolloutOptions opts;
    opts.seed = 11;
    const RolloutBatch batch = collect_rollouts(hi, lo, tab, 60000, jp.k, opts);
    std::vector<double> returns(batch.episodes.size(), 0.0);
    std::vector<int> decision(batch.episodes.size(), 0);
    for (const auto& h : batch.high) {
      const auto e = static_cast<std::size_t>(h.episode);
      returns[e] += std::pow(jp.gamma_h, decision[e]++) * h.r_h;
    }
    double mean = 0.0, sq = 0.0;
    for (double g : returns) mean += g;
    mean /= static_cast<double>(returns.size());
    for (double g : returns) sq += (g - mean) * (g - mean);
    const double se = std::sqrt(sq / static_cast<double>(returns.size() - 1) / static_cast<double>(returns.size()));
    MESSAGE("eta=" << eta << " mc=" << mean << " se=" << se << " episodes=" << returns.size());
    CHECK(std::abs(mean - eta) <= 3.0 * se);
  }

  TEST_CASE("performance difference identity") {
    Rng rng = make_rng(4);
    const env::TabularMdp mdp = env::random_episodic_mdp(5, 3, 0.05, rng);
    const TabularJointPolicy jp = random_joint_policy(6, 3, 3, 4, 0.95, 0.95, rng);
    CHECK(lemma4_residual(mdp, jp, jp) <= 1e-12);
    CHECK(std::abs(lemma4(mdp, jp, jp).advantage_sum) <= 1e-12);

    for (int trial = 0; trial < 20; ++trial) {
      const env::TabularMdp m = env::random_episodic_mdp(4, 2, 0.1, rng);
      const TabularJointPolicy a = random_joint_policy(5, 3, 2, 1 + trial % 4, 0.9, 0.9, rng);
      const TabularJointPolicy b = random_joint_policy(5, 3, 2, a.k, 0.9, 0.9, rng);
      const Lemma4Result res = lemma4(m, a, b);
      CHECK(res.residual <= 1e-10 * std::max(1.0, std::abs(res.eta_new - res.eta_old)));
    }
  }

  TEST_CASE("performance difference scales with the reward") {
    Rng rng = make_rng(5);
    env::TabularMdp mdp = env::random_episodic_mdp(4, 2, 0.1, rng);
    const TabularJointPolicy a = random_joint_policy(5, 2, 2, 3, 0.9, 0.9, rng);
    const TabularJointPolicy b = random_joint_policy(5, 2, 2, 3, 0.9, 0.9, rng);
    const Lemma4Result base = lemma4(mdp, a, b);
    for (auto& r : mdp.reward) r *= 1000.0;
    const Lemma4Result big = lemma4(mdp, a, b);
    CHECK(big.advantage_sum == doctest::Approx(1000.0 * base.advantage_sum).epsilon(1e-10));
    CHECK(big.residual <= 1e-10 * std::abs(big.eta_new - big.eta_old) + 1e-9);
  }

  TEST_CASE("low-level objective matches its approximation at matched discounts") {
    Rng rng = make_rng(6);
    const env::TabularMdp mdp = env::random_episodic_mdp(4, 2, 0.1, rng);
    const TabularJointPolicy a1 = random_joint_policy(5, 2, 2, 1, 0.95, 0.95, rng);
    const TabularJointPolicy b1 = random_joint_policy(5, 2, 2, 1, 0.95, 0.95, rng);
    CHECK(lemma3_relative_error(mdp, a1, b1, 0.95) == 0.0);

    const TabularJointPolicy a5 = random_joint_policy(5, 2, 2, 5, 0.95, 0.95, rng);
    const TabularJointPolicy b5 = random_joint_policy(5, 2, 2, 5, 0.95, 0.95, rng);
    CHECK(lemma3_relative_error(mdp, a5, b5, std::pow(0.95, 1.0 / 5.0)) <= 1e-10);

    // eta_l is c times the discounted sum of realized advantages, evaluated here
    // with the time-indexed series instead of a linear solve.
    const Lemma3Result res = lemma3(mdp, a5, b5, 0.9);
    const Vector adv = realized_advantage(mdp, a5, b5);
    const SemiMdp sm = build_semi_mdp(mdp, b5);
    Vector dist = Eigen::Map<const Vector>(mdp.initial.data(), 5);
    double series = 0.0, g = 1.0;
    const double gk = std::pow(0.9, 5);
    for (int j = 0; j < 3000; ++j) {
      series += g * dist.dot(adv);
      dist = sm.p_h.transpose() * dist;
      g *= gk;
    }
    const double c = (1.0 - gk) / (0.1 * 5.0);
    CHECK(res.eta_l == doctest::Approx(c * series).epsilon(1e-10));
  }

  TEST_CASE("approximation error shrinks as the discount approaches one") {
    Rng rng = make_rng(7);
    for (int trial = 0; trial < 5; ++trial) {
      const env::TabularMdp mdp = env::random_episodic_mdp(4, 2, 0.05, rng);
      const TabularJointPolicy a0 = random_joint_policy(5, 2, 2, 5, 0.9, 0.9, rng);
      double prev = INFINITY;
      for (double gamma : {0.9, 0.99, 0.999}) {
        TabularJointPolicy a = a0;
        a.gamma_h = gamma;
        const TabularJointPolicy b = greedy_high_step(mdp, a);
        const double err = lemma3_relative_error(mdp, a, b, gamma);
        CHECK(err < prev);
        prev = err;
      }
    }
  }

  TEST_CASE("low-level gradient matches finite differences") {
    Rng rng = make_rng(8);
    const env::TabularMdp mdp = env::random_episodic_mdp(3, 2, 0.1, rng);
    for (int k : {1, 3}) {
      TabularJointPolicy jp = random_joint_policy(4, 2, 2, k, 0.9, 0.93, rng);
      const std::vector<Matrix> grad = low_level_gradient(mdp, jp);
      CHECK(std::abs(low_level_objective(mdp, jp, jp.pi_l)) <= 1e-12);
      const double h = 1e-6;
      for (std::size_t z = 0; z < 2; ++z) {
        for (Eigen::Index s = 0; s < 4; ++s) {
          for (Eigen::Index a = 0; a < 2; ++a) {
            auto shifted = [&](double delta) {
              std::vector<Matrix> pl = jp.pi_l;
              pl[z](s, a) *= std::exp(delta);
              pl[z].row(s) /= pl[z].row(s).sum();
              return low_level_objective(mdp, jp, pl);
            };
            const double fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            CHECK(grad[z](s, a) == doctest::Approx(fd).epsilon(1e-5).scale(1e-6));
          }
        }
      }
    }
  }

  TEST_CASE("greedy high-level step has non-negative realized advantages") {
    Rng rng = make_rng(13);
    const env::TabularMdp mdp = env::random_episodic_mdp(4, 2, 0.1, rng);
    const TabularJointPolicy a = random_joint_policy(5, 3, 2, 2, 0.9, 0.9, rng);
    const TabularJointPolicy b = greedy_high_step(mdp, a);
    CHECK(realized_advantage(mdp, a, b).minCoeff() >= -1e-12);
    CHECK(exact_eta(mdp, b) > exact_eta(mdp, a));
  }

  TEST_CASE("alternating improvement never lowers eta") {
    Rng rng = make_rng(9);
    for (int trial = 0; trial < 5; ++trial) {
      const env::TabularMdp mdp = env::random_episodic_mdp(4, 3, 0.1, rng);
      const TabularJointPolicy jp = random_joint_policy(5, 2, 3, 3, 0.9, 0.9, rng);
      const AlternationTrace tr = monotone_alternation_check(mdp, jp, 10);
      REQUIRE(tr.eta.size() == 21);
      for (std::size_t i = 1; i < tr.eta.size(); ++i) CHECK(tr.eta[i] >= tr.eta[i - 1] - 1e-10);
      CHECK(tr.eta.back() > tr.eta.front());
    }
  }

  TEST_CASE("alternation leaves a single-action MDP and an optimal policy alone") {
    env::TabularMdp one;
    one.n_states = 1;
    one.n_actions = 1;
    one.transition = {1.0};
    one.reward = {0.5};
    one.initial = {1.0};
    one.terminal = {false};
    TabularJointPolicy jp;
    jp.pi_h = Matrix::Constant(1, 2, 0.5);
    jp.pi_l = {Matrix::Ones(1, 1), Matrix::Ones(1, 1)};
    jp.k = 2;
    jp.gamma_h = 0.9;
    for (double e : monotone_alternation_check(one, jp, 4).eta) CHECK(e == doctest::Approx(1.0 / 0.1).epsilon(1e-12));

    // Action 0 pays 1 everywhere and transitions do not depend on the action,
    // so always taking it is optimal.
    Rng rng = make_rng(10);
    env::TabularMdp mdp = env::random_mdp(3, 2, rng);
    for (std::size_t s = 0; s < 3; ++s) {
      mdp.reward[s * 2] = 1.0;
      mdp.reward[s * 2 + 1] = 0.0;
      for (std::size_t s2 = 0; s2 < 3; ++s2) mdp.transition[(s * 2 + 1) * 3 + s2] = mdp.transition[(s * 2) * 3 + s2];
    }
    TabularJointPolicy opt = random_joint_policy(3, 2, 2, 2, 0.9, 0.9, rng);
    for (auto& m : opt.pi_l) {
      m.col(0).setOnes();
      m.col(1).setZero();
    }
    const AlternationTrace tr = monotone_alternation_check(mdp, opt, 5);
    for (double e : tr.eta) CHECK(e == doctest::Approx(tr.eta.front()).epsilon(1e-12));
  }

  TEST_CASE("validation") {
    Rng rng = make_rng(11);
    const env::TabularMdp mdp = env::random_mdp(3, 2, rng);
    TabularJointPolicy jp = random_joint_policy(3, 2, 2, 2, 0.9, 0.9, rng);
    TabularJointPolicy bad = jp;
    bad.pi_h(0, 0) += 0.1;
    CHECK_THROWS_AS(exact_eta(mdp, bad), ConfigError);
    bad = jp;
    bad.k = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = jp;
    bad.pi_l.pop_back();
    CHECK_THROWS_AS(bad.validate(), ShapeError);
    const TabularJointPolicy wide = random_joint_policy(4, 2, 2, 2, 0.9, 0.9, rng);
    CHECK_THROWS_AS(exact_eta(mdp, wide), ShapeError);
    const TabularJointPolicy other_k = random_joint_policy(3, 2, 2, 3, 0.9, 0.9, rng);
    CHECK_THROWS_AS(lemma4(mdp, jp, other_k), ConfigError);
    // gamma_h = 1 on a non-episodic MDP has no finite value.
    jp.gamma_h = 1.0;
    CHECK_THROWS_AS(exact_eta(mdp, jp), NumericError);
  }

  TEST_CASE("tabular samplers draw from their tables") {
    Matrix pi_h(2, 3);
    pi_h << 0.0, 1.0, 0.0, 0.2, 0.3, 0.5;
    const TabularHighSampler hi(pi_h);
    Rng rng = make_rng(12);
    const std::vector<double> s0{1.0, 0.0};
    for (int i = 0; i < 50; ++i) CHECK(hi.sample(s0, rng).action(0) == 1.0);
    const std::vector<double> s1{0.0, 1.0};
    int counts[3] = {0, 0, 0};
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[static_cast<int>(hi.sample(s1, rng).action(0))];
    for (int j = 0; j < 3; ++j) {
      const double p = pi_h(1, j);
      CHECK(std::abs(counts[j] / double(n) - p) <= 4.0 * std::sqrt(p * (1 - p) / n));
    }
    const TabularLowSampler lo({Matrix::Constant(2, 2, 0.5), (Matrix(2, 2) << 1.0, 0.0, 0.0, 1.0).finished()});
    const std::vector<double> obs{0.0, 1.0, 0.0, 1.0};
    const Sample smp = lo.sample(obs, rng);
    CHECK(smp.action(0) == 1.0);
    CHECK(smp.log_prob == 0.0);
  }
}
