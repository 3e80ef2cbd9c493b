#include <doctest.h>

#include <cmath>
#include <cstring>

#include "haar/hierarchy.hpp"
#include "test_util.hpp"

using namespace haar;

namespace {

// Scripted environment: fixed episode length, reward = `reward_scale` times the
// first action component, optional terminal flag at the end.
class ScriptEnv final : public env::Environment {
 public:
  ScriptEnv(int length, bool terminal_end, double reward_scale)
      : length_(length), terminal_end_(terminal_end), reward_scale_(reward_scale) {}
  std::unique_ptr<env::Environment> clone() const override { return std::make_unique<ScriptEnv>(*this); }
  std::size_t low_obs_dim() const override { return 2; }
  std::size_t high_obs_dim() const override { return 3; }
  std::size_t action_dim() const override { return 2; }
  env::ObservationPair reset(Rng& rng) override {
    t_ = 0;
    offset_ = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    return obs();
  }
  env::EnvStep step(std::span<const double> action) override {
    ++t_;
    env::EnvStep s;
    s.reward = reward_scale_ * action[0];
    s.done = t_ >= length_;
    s.terminal = s.done && terminal_end_;
    s.success = s.terminal;
    s.obs = obs();
    return s;
  }
  env::Vec2 position() const override { return {static_cast<double>(t_), offset_}; }

 private:
  env::ObservationPair obs() const {
    env::ObservationPair o;
    o.low = Vector(2);
    o.low << t_ / 10.0, offset_;
    o.high = Vector(3);
    o.high << o.low, 1.0;
    return o;
  }
  int length_;
  bool terminal_end_;
  double reward_scale_;
  int t_ = 0;
  double offset_ = 0.0;
};

struct Policies {
  CategoricalPolicy pi_h;
  GaussianPolicy pi_l;
};

Policies make_policies(const env::Environment& e, int n_skills, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  CategoricalPolicy h(MlpSpec{e.high_obs_dim(), {8}, static_cast<std::size_t>(n_skills)});
  GaussianPolicy l(MlpSpec{e.low_obs_dim() + static_cast<std::size_t>(n_skills), {8}, e.action_dim()});
  h.initialize(rng);
  l.initialize(rng);
  return {std::move(h), std::move(l)};
}

bool same_params(const Policy& a, const Policy& b) {
  return a.params().size() == b.params().size() &&
         std::memcmp(a.params().data(), b.params().data(), a.params().size() * sizeof(double)) == 0;
}

RolloutBatch hand_batch(const std::vector<double>& r_h, const std::vector<int>& lens, const std::vector<bool>& done) {
  RolloutBatch b;
  for (std::size_t i = 0; i < r_h.size(); ++i) {
    HighTransition h;
    h.s_h = Vector::Zero(1);
    h.s_h_next = Vector::Zero(1);
    h.r_h = r_h[i];
    h.seg_len = lens[i];
    h.done = done[i];
    h.episode_end = done[i];
    h.first_low = static_cast<int>(b.low.size());
    for (int j = 0; j < lens[i]; ++j) {
      LowTransition l;
      l.s_l = Vector::Zero(1);
      l.a_l = Vector::Zero(1);
      l.segment_id = static_cast<int>(i);
      l.done = done[i] && j + 1 == lens[i];
      b.low.push_back(l);
    }
    b.high.push_back(h);
  }
  return b;
}

}  // namespace

TEST_SUITE("hierarchy") {
  TEST_CASE("skill schedule") {
    SkillSchedule s{100, 0.0, 10, 0};
    for (int i = 0; i < 50; ++i) CHECK(s.k_at(i) == 100);
    s.tau = 0.1;
    CHECK(s.k_at(10) == 37);
    CHECK(s.k_at(50) == 10);
    s.iteration = 10;
    CHECK(s.current_k() == 37);
    s.advance();
    CHECK(s.iteration == 11);

    const double tau = SkillSchedule::halfway_tau(100, 10, 300);
    SkillSchedule h{100, tau, 10, 0};
    CHECK(h.k_at(150) == 10);
    CHECK(h.k_at(140) > 10);

    Rng rng = make_rng(41);
    std::uniform_int_distribution<int> k1(1, 1000);
    std::uniform_real_distribution<double> t(0.0, 0.5);
    for (int rep = 0; rep < 100; ++rep) {
      SkillSchedule r{k1(rng), t(rng), 1, 0};
      r.k_s = std::uniform_int_distribution<int>(1, r.k_1)(rng);
      int prev = r.k_at(0);
      for (int i = 1; i <= 1000000; i += (i < 1000 ? 1 : 997)) {
        const int k = r.k_at(i);
        CHECK(k <= prev);
        CHECK(k >= r.k_s);
        prev = k;
      }
    }
    CHECK_THROWS_AS((SkillSchedule{5, 0.0, 10, 0}).validate(), ConfigError);
  }

  TEST_CASE("rollout segmentation") {
    ScriptEnv exact(10, false, 1.0);
    auto p = make_policies(exact, 3, 42);
    RolloutOptions opts;
    RolloutBatch b = collect_rollouts(p.pi_h, p.pi_l, exact, 10, 5, opts);
    CHECK(b.high.size() == 2);
    CHECK(b.low.size() == 10);
    CHECK(b.episodes.size() == 1);

    ScriptEnv early(7, true, 1.0);
    b = collect_rollouts(p.pi_h, p.pi_l, early, 7, 5, opts);
    REQUIRE(b.high.size() == 2);
    CHECK(b.high[0].seg_len == 5);
    CHECK_FALSE(b.high[0].done);
    CHECK(b.high[1].seg_len == 2);
    CHECK(b.high[1].done);
    CHECK(b.episodes[0].success);

    ScriptEnv timeout(7, false, 1.0);
    b = collect_rollouts(p.pi_h, p.pi_l, timeout, 7, 5, opts);
    CHECK_FALSE(b.high[1].done);
    CHECK(b.high[1].episode_end);
  }

  TEST_CASE("batch bookkeeping, one-hot inputs and replayed rewards") {
    ScriptEnv e(23, false, 0.5);
    auto p = make_policies(e, 4, 43);
    RolloutOptions opts;
    opts.seed = 9;
    opts.stream = 2;
    const RolloutBatch b = collect_rollouts(p.pi_h, p.pi_l, e, 100, 4, opts);
    CHECK(b.total_low_steps() >= 100);
    int total = 0;
    for (std::size_t i = 0; i < b.high.size(); ++i) {
      const auto& h = b.high[i];
      total += h.seg_len;
      CHECK(h.seg_len <= 4);
      if (!h.episode_end) CHECK(h.seg_len == 4);
      double sum = 0.0;
      for (int j = 0; j < h.seg_len; ++j) {
        const auto& l = b.low[static_cast<std::size_t>(h.first_low + j)];
        CHECK(l.segment_id == static_cast<int>(i));
        sum += l.r_env;
        const Vector skill = l.s_l.tail(4);
        CHECK(skill.sum() == 1.0);
        CHECK(skill[h.a_h] == 1.0);
      }
      CHECK(sum == h.r_h);
    }
    CHECK(total == static_cast<int>(b.low.size()));

    // Replay: reset with the episode's stream, then feed the recorded actions.
    std::size_t li = 0;
    for (std::size_t ep = 0; ep < b.episodes.size(); ++ep) {
      ScriptEnv replay = e;
      Rng rng = make_rng(9, {2, ep});
      replay.reset(rng);
      for (int t = 0; t < b.episodes[ep].length; ++t, ++li) {
        const auto& l = b.low[li];
        const env::EnvStep s = replay.step({l.a_l.data(), 2});
        CHECK(s.reward == l.r_env);
      }
    }
    CHECK(li == b.low.size());
  }

  TEST_CASE("rollouts do not depend on the worker count") {
    ScriptEnv e(13, false, 1.0);
    auto p = make_policies(e, 3, 44);
    RolloutOptions one, three;
    one.seed = three.seed = 5;
    three.workers = 3;
    const RolloutBatch a = collect_rollouts(p.pi_h, p.pi_l, e, 60, 4, one);
    const RolloutBatch b = collect_rollouts(p.pi_h, p.pi_l, e, 60, 4, three);
    REQUIRE(a.low.size() == b.low.size());
    REQUIRE(a.high.size() == b.high.size());
    for (std::size_t i = 0; i < a.low.size(); ++i) CHECK(a.low[i].a_l == b.low[i].a_l);
    for (std::size_t i = 0; i < a.high.size(); ++i) CHECK(a.high[i].a_h == b.high[i].a_h);
  }

  TEST_CASE("high advantages") {
    auto v = PolynomialValueEstimator::zeros(1);
    RolloutBatch b = hand_batch({0.0}, {1}, {false});
    b.high[0].s_h << 0.0;
    b.high[0].s_h_next << 1.0;
    v.w1[0] = 0.5;
    v.w0 = 0.5;  // V(0) = 0.5, V(1) = 1
    CHECK(estimate_high_advantages(b, v, 0.99)[0] == doctest::Approx(0.49).epsilon(1e-15));

    RolloutBatch t = hand_batch({1000.0}, {3}, {true});
    t.high[0].s_h << 0.0;
    t.high[0].s_h_next << 1e6;
    auto v200 = PolynomialValueEstimator::zeros(1);
    v200.w0 = 200.0;
    CHECK(estimate_high_advantages(t, v200, 0.99)[0] == 800.0);

    RolloutBatch z = hand_batch({1.0, -2.0, 3.5}, {2, 2, 1}, {false, false, true});
    const Vector a = estimate_high_advantages(z, PolynomialValueEstimator::zeros(1), 0.9);
    CHECK(a[0] == 1.0);
    CHECK(a[1] == -2.0);
    CHECK(a[2] == 3.5);
  }

  TEST_CASE("auxiliary rewards conserve the advantage") {
    RolloutBatch b = hand_batch({0, 0, 0}, {4, 5, 3}, {false, false, true});
    Vector a(3);
    a << 2.0, 0.0, 1.5;
    const double residual = assign_auxiliary_rewards(b, a);
    CHECK(residual <= kConservationTolerance);
    for (int j = 0; j < 4; ++j) CHECK(b.low[static_cast<std::size_t>(j)].r_l == 0.5);
    for (int j = 4; j < 9; ++j) CHECK(b.low[static_cast<std::size_t>(j)].r_l == 0.0);
    for (int j = 9; j < 12; ++j) CHECK(b.low[static_cast<std::size_t>(j)].r_l == 0.5);

    Rng rng = make_rng(45);
    std::uniform_int_distribution<int> len(1, 100);
    std::vector<double> r(50, 0.0);
    std::vector<int> lens(50);
    for (auto& l : lens) l = len(rng);
    RolloutBatch big = hand_batch(r, lens, std::vector<bool>(50, false));
    const Vector adv = haar::test::random_vector(50, rng, 1000.0);
    CHECK(assign_auxiliary_rewards(big, adv) <= 1e-9);

    CHECK_THROWS_AS(assign_auxiliary_rewards(big, Vector::Zero(3)), ShapeError);
  }

  TEST_CASE("low-level returns and level batches") {
    ScriptEnv e(9, true, 1.0);
    auto p = make_policies(e, 2, 46);
    RolloutBatch b = collect_rollouts(p.pi_h, p.pi_l, e, 30, 4, RolloutOptions{});
    Rng rng = make_rng(47);
    const Vector adv = haar::test::random_vector(static_cast<Eigen::Index>(b.high.size()), rng);
    assign_auxiliary_rewards(b, adv);

    const auto zero_v = PolynomialValueEstimator::zeros(p.pi_l.obs_dim());
    const LevelBatches g0 = prepare_level_batches(b, adv, 0.0, zero_v, p.pi_h, p.pi_l);
    for (std::size_t i = 0; i < b.low.size(); ++i) CHECK(g0.low.advantages[static_cast<Eigen::Index>(i)] == b.low[i].r_l);
    CHECK(g0.high.advantages == adv);

    // gamma_l = 1 on a one-segment episode: return at the segment start is the advantage.
    RolloutBatch one = hand_batch({0.0}, {6}, {true});
    Vector a1(1);
    a1 << 4.2;
    assign_auxiliary_rewards(one, a1);
    CHECK(low_level_returns(one, 1.0)[0] == doctest::Approx(4.2).epsilon(1e-14));

    // Independent forward-sum implementation of the discounted returns.
    const double gl = 0.93;
    const Vector fast = low_level_returns(b, gl);
    std::size_t start = 0;
    for (const auto& ep : b.episodes) {
      for (int t = 0; t < ep.length; ++t) {
        double g = 0.0, disc = 1.0;
        for (int u = t; u < ep.length; ++u, disc *= gl) g += disc * b.low[start + static_cast<std::size_t>(u)].r_l;
        CHECK(std::abs(fast[static_cast<Eigen::Index>(start) + t] - g) <= 1e-10);
      }
      start += static_cast<std::size_t>(ep.length);
    }
    CHECK(g0.low.old_log_probs.size() == static_cast<Eigen::Index>(b.low.size()));
    for (std::size_t i = 0; i < b.low.size(); ++i) {
      CHECK(g0.low.old_log_probs[static_cast<Eigen::Index>(i)] == doctest::Approx(b.low[i].log_prob).epsilon(1e-12));
    }
  }

  TEST_CASE("haar_iteration modes") {
    ScriptEnv e(12, true, 1.0);
    HaarConfig cfg;
    cfg.n_skills = 3;
    cfg.batch_low_steps = 120;
    cfg.seed = 3;
    Rng rng = make_rng(48);
    GaussianPolicy pi_l(MlpSpec{e.low_obs_dim() + 3, {8}, 2});
    pi_l.initialize(rng);
    TrainingState s = make_training_state(cfg, e, pi_l, SkillSchedule{4, 0.1, 2, 0}, rng);

    cfg.mode = TrainingMode::alternate;
    const GaussianPolicy low_before = s.pi_l;
    const CategoricalPolicy high_before = s.pi_h;
    const IterationMetrics m1 = haar_iteration(s, cfg, e);
    CHECK(m1.iteration == 1);
    CHECK(m1.k == 4);
    CHECK(s.schedule.iteration == 1);
    CHECK(m1.high_updated);
    CHECK_FALSE(m1.low_updated);
    CHECK(same_params(s.pi_l, low_before));

    const CategoricalPolicy high_mid = s.pi_h;
    const IterationMetrics m2 = haar_iteration(s, cfg, e);
    CHECK(m2.iteration == 2);
    CHECK(s.schedule.iteration == 2);
    CHECK(same_params(s.pi_h, high_mid));
    CHECK(m2.low_updated);
    CHECK(m2.low_steps_total == m1.low_steps_total + 120);

    cfg.mode = TrainingMode::concurrent;
    const IterationMetrics m3 = haar_iteration(s, cfg, e);
    CHECK(m3.high_updated);
    CHECK(m3.low_updated);
    CHECK(m3.max_conservation_error <= kConservationTolerance);
    for (const auto* d : {&m3.high, &m3.low}) {
      if (d->accepted) {
        CHECK(d->kl <= 0.015);
        CHECK(d->improvement() >= 0.0);
      }
    }
  }

  TEST_CASE("reward-free environment leaves both policies unchanged") {
    ScriptEnv e(10, false, 0.0);
    HaarConfig cfg;
    cfg.n_skills = 2;
    cfg.batch_low_steps = 50;
    Rng rng = make_rng(49);
    GaussianPolicy pi_l(MlpSpec{e.low_obs_dim() + 2, {8}, 2});
    pi_l.initialize(rng);
    TrainingState s = make_training_state(cfg, e, pi_l, SkillSchedule{5, 0.0, 5, 0}, rng);
    const TrainingState before = s;
    for (int i = 0; i < 3; ++i) haar_iteration(s, cfg, e);
    CHECK((s.pi_h.params().vec() - before.pi_h.params().vec()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((s.pi_l.params().vec() - before.pi_l.params().vec()).cwiseAbs().maxCoeff() <= 1e-12);
  }

  TEST_CASE("identical seeds give identical iterations") {
    ScriptEnv e(15, true, 1.0);
    HaarConfig cfg;
    cfg.n_skills = 3;
    cfg.batch_low_steps = 90;
    cfg.seed = 11;
    auto run = [&](int workers) {
      HaarConfig c = cfg;
      c.workers = workers;
      Rng rng = make_rng(50);
      GaussianPolicy pi_l(MlpSpec{e.low_obs_dim() + 3, {8}, 2});
      pi_l.initialize(rng);
      TrainingState s = make_training_state(c, e, pi_l, SkillSchedule{5, 0.2, 2, 0}, rng);
      std::vector<double> trace;
      for (int i = 0; i < 4; ++i) {
        const IterationMetrics m = haar_iteration(s, c, e);
        trace.insert(trace.end(), {m.mean_return, m.high.kl, m.low.kl, static_cast<double>(m.k)});
      }
      return trace;
    };
    const auto a = run(1);
    CHECK(a == run(1));
    CHECK(a == run(2));
  }
}
