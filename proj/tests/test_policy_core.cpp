#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>

#include "haar/checkpoint.hpp"
#include "haar/mlp.hpp"
#include "haar/policy.hpp"
#include "haar/value.hpp"
#include "test_util.hpp"

using namespace haar;
using haar::test::max_rel_error;
using haar::test::numeric_gradient;
using haar::test::random_matrix;
using haar::test::random_vector;
using haar::test::randomize;

namespace {

// Plain loop evaluation of the MLP straight from the segment layout.
Vector loop_forward(const MlpSpec& spec, const ParamVector& p, const std::string& prefix, const Vector& x) {
  std::vector<double> h(x.data(), x.data() + x.size());
  std::vector<std::size_t> sizes{spec.input_dim};
  sizes.insert(sizes.end(), spec.hidden.begin(), spec.hidden.end());
  sizes.push_back(spec.output_dim);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    auto w = p.segment(prefix + "w" + std::to_string(l));
    auto b = p.segment(prefix + "b" + std::to_string(l));
    std::vector<double> out(sizes[l + 1]);
    for (std::size_t i = 0; i < sizes[l + 1]; ++i) {
      double acc = b[i];
      for (std::size_t j = 0; j < sizes[l]; ++j) acc += w[i * sizes[l] + j] * h[j];
      out[i] = (l + 2 < sizes.size()) ? std::tanh(acc) : acc;
    }
    h = out;
  }
  return Eigen::Map<Vector>(h.data(), static_cast<Eigen::Index>(h.size()));
}

std::span<const double> sp(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

CategoricalPolicy categorical_with_logits(const std::vector<double>& logits, std::size_t obs_dim = 3) {
  MlpSpec spec{obs_dim, {8}, logits.size()};
  CategoricalPolicy pi(spec);
  ParamVector p = pi.params().zeros_like();
  auto b = p.segment("logits.b1");
  std::copy(logits.begin(), logits.end(), b.begin());
  pi.set_params(p);
  return pi;
}

}  // namespace

TEST_SUITE("policy_core") {
  TEST_CASE("param vector layout and prefix round trip") {
    ParamVector p;
    CHECK(p.add_segment("a", 3, 1.0) == 0);
    CHECK(p.add_segment("b", 2) == 3);
    CHECK_THROWS(p.add_segment("a", 1));
    CHECK(p.size() == 5);
    CHECK(p.segment("a")[2] == 1.0);
    ParamVector q = p.zeros_like();
    q.fill(2.0);
    p.axpy(0.5, q);
    CHECK(p.segment("a")[0] == doctest::Approx(2.0));
    CHECK(p.dot(q) == doctest::Approx(2.0 * (3 * 2.0 + 2 * 1.0)));

    ParamVector joint;
    append_prefixed(joint, p, "pi_h/");
    append_prefixed(joint, q, "pi_l/");
    CHECK(extract_prefixed(joint, "pi_h/") == p);
    CHECK(extract_prefixed(joint, "pi_l/") == q);

    p.values()[4] = std::nan("");
    CHECK_FALSE(p.all_finite());
    CHECK_THROWS_AS(p.check_finite("test"), NumericError);
  }

  TEST_CASE("checkpoint encode/decode is bit exact") {
    Rng rng = make_rng(1);
    Checkpoint c;
    c.metadata = {{"n_skills", "6"}, {"proxy", "velocity_direction"}};
    c.params.add_segment("x", 7);
    c.params.add_segment("y", 3);
    randomize(c.params, rng);
    c.params.values()[0] = -0.0;
    c.params.values()[1] = 1e-310;
    const auto bytes = encode_checkpoint(c);
    const Checkpoint d = decode_checkpoint(bytes);
    CHECK(d.metadata == c.metadata);
    REQUIRE(d.params.same_layout(c.params));
    CHECK(std::memcmp(d.params.data(), c.params.data(), c.params.size() * sizeof(double)) == 0);
    CHECK(encode_checkpoint(d) == bytes);

    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS(decode_checkpoint(truncated));
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS(decode_checkpoint(bad_magic));
  }

  TEST_CASE("forward: zero weights give zero output") {
    MlpSpec spec{5, {32, 32}, 3};
    ParamVector p;
    Mlp net(spec, p, "n.");
    Rng rng = make_rng(2);
    const Vector y = net.forward(p, sp(random_vector(5, rng)));
    CHECK(y.size() == 3);
    CHECK(y.isZero(0.0));
  }

  TEST_CASE("forward: unit 1-1-1 net at zero") {
    MlpSpec spec{1, {1}, 1};
    ParamVector p;
    Mlp net(spec, p, "");
    p.fill(1.0);
    p.segment("b0")[0] = 0.0;
    p.segment("b1")[0] = 0.0;
    Vector x(1);
    x << 0.0;
    CHECK(net.forward(p, sp(x))[0] == 0.0);
    x << 0.7;
    CHECK(net.forward(p, sp(x))[0] == doctest::Approx(std::tanh(0.7)).epsilon(1e-15));
  }

  TEST_CASE("forward matches loop evaluator") {
    Rng rng = make_rng(3);
    MlpSpec spec{6, {32, 32}, 4};
    ParamVector p;
    Mlp net(spec, p, "m.");
    for (int rep = 0; rep < 10; ++rep) {
      randomize(p, rng);
      const Vector x = random_vector(6, rng);
      const Vector y = net.forward(p, sp(x));
      const Vector ref = loop_forward(spec, p, "m.", x);
      CHECK((y - ref).cwiseAbs().maxCoeff() <= 1e-12);
    }
    CHECK_THROWS_AS(net.forward(p, sp(random_vector(5, rng))), ShapeError);
  }

  TEST_CASE("mlp backward and jvp match finite differences") {
    Rng rng = make_rng(4);
    MlpSpec spec{3, {5, 4}, 2};
    ParamVector p;
    Mlp net(spec, p, "");
    for (int rep = 0; rep < 20; ++rep) {
      randomize(p, rng);
      const Matrix x = random_matrix(3, 4, rng);
      const Matrix d_out = random_matrix(2, 4, rng);
      Mlp::Trace trace;
      net.forward_batch(p, x, &trace);
      ParamVector grad = p.zeros_like();
      net.backward(p, trace, d_out, grad);
      auto f = [&](const ParamVector& q) { return (net.forward_batch(q, x).array() * d_out.array()).sum(); };
      CHECK(max_rel_error(grad.vec(), numeric_gradient(f, p)) <= 1e-4);

      ParamVector dir = p.zeros_like();
      randomize(dir, rng);
      const Matrix jv = net.jvp(p, trace, dir);
      const double h = 1e-6;
      ParamVector up = p, down = p;
      up.axpy(h, dir);
      down.axpy(-h, dir);
      const Matrix fd = (net.forward_batch(up, x) - net.forward_batch(down, x)) / (2 * h);
      CHECK((jv - fd).cwiseAbs().maxCoeff() <= 1e-6);
    }
  }

  TEST_CASE("categorical: forced logits and uniform log-prob") {
    Rng rng = make_rng(5);
    auto pi = categorical_with_logits({40.0, 0.0, 0.0});
    const Vector obs = random_vector(3, rng);
    for (int i = 0; i < 20; ++i) {
      const Sample s = pi.sample(sp(obs), rng);
      CHECK(s.action[0] == 0.0);
      CHECK(s.log_prob == doctest::Approx(0.0).epsilon(1e-12));
    }
    auto uni = categorical_with_logits(std::vector<double>(6, 0.0));
    for (int a = 0; a < 6; ++a) {
      Vector act(1);
      act << a;
      CHECK(uni.log_prob(sp(obs), sp(act)) == doctest::Approx(std::log(1.0 / 6.0)).epsilon(1e-14));
    }
  }

  TEST_CASE("categorical: empirical frequencies") {
    Rng rng = make_rng(6);
    auto pi = categorical_with_logits({std::log(0.2), std::log(0.3), std::log(0.5)});
    const Vector obs = Vector::Zero(3);
    std::array<int, 3> counts{};
    const int n = 100000;
    for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(pi.sample(sp(obs), rng).action[0])]++;
    CHECK(std::abs(counts[0] / double(n) - 0.2) <= 0.01);
    CHECK(std::abs(counts[1] / double(n) - 0.3) <= 0.01);
    CHECK(std::abs(counts[2] / double(n) - 0.5) <= 0.01);
  }

  TEST_CASE("categorical probabilities sum to one") {
    Rng rng = make_rng(7);
    MlpSpec spec{4, {8}, 6};
    CategoricalPolicy pi(spec);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      ParamVector p = pi.params();
      randomize(p, rng, 3.0);
      pi.set_params(p);
      const Vector pr = pi.probabilities(sp(random_vector(4, rng)));
      CHECK(pr.minCoeff() >= 0.0);
      worst = std::max(worst, std::abs(pr.sum() - 1.0));
    }
    CHECK(worst <= 1e-9);
  }

  TEST_CASE("gaussian: log-prob at the mean and tight sampling") {
    Rng rng = make_rng(8);
    GaussianPolicy pi(MlpSpec{4, {16}, 2});
    pi.initialize(rng);
    const Vector obs = random_vector(4, rng);
    const Vector mean = pi.mode(sp(obs));
    double sum_ls = 0.0;
    for (double v : pi.log_std()) sum_ls += v;
    CHECK(pi.log_prob(sp(obs), sp(mean)) ==
          doctest::Approx(-sum_ls - std::log(2 * std::numbers::pi)).epsilon(1e-13));

    pi.set_log_std(-5.0);
    for (int i = 0; i < 200; ++i) {
      const Sample s = pi.sample(sp(obs), rng);
      CHECK((s.action - mean).cwiseAbs().maxCoeff() <= 5 * std::exp(-5.0));
      CHECK(s.log_prob == doctest::Approx(pi.log_prob(sp(obs), sp(s.action))).epsilon(1e-14));
    }
  }

  TEST_CASE("gaussian: log_std is clamped on set_params") {
    GaussianPolicy pi(MlpSpec{2, {4}, 2});
    ParamVector p = pi.params();
    p.segment("log_std")[0] = -9.0;
    p.segment("log_std")[1] = 7.0;
    pi.set_params(p);
    CHECK(pi.log_std()[0] == kLogStdMin);
    CHECK(pi.log_std()[1] == kLogStdMax);
  }

  TEST_CASE("gaussian: density integrates like a density (1-D quadrature)") {
    Rng rng = make_rng(9);
    GaussianPolicy pi(MlpSpec{3, {8}, 1});
    pi.initialize(rng);
    const Vector obs = random_vector(3, rng);
    const double mu = pi.mode(sp(obs))[0];
    const double sigma = std::exp(pi.log_std()[0]);
    // Simpson's rule of exp(log_prob) over [mu - 10 sigma, x] against the normal CDF.
    auto integrate = [&](double a, double b) {
      const int n = 2000;
      const double h = (b - a) / n;
      double s = 0.0;
      for (int i = 0; i <= n; ++i) {
        Vector act(1);
        act << a + i * h;
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        s += w * std::exp(pi.log_prob(sp(obs), sp(act)));
      }
      return s * h / 3.0;
    };
    for (double z : {-1.5, 0.0, 0.7, 2.0}) {
      const double x = mu + z * sigma;
      const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
      CHECK(std::abs(integrate(mu - 10 * sigma, x) - cdf) <= 1e-6);
    }
  }

  TEST_CASE("gaussian: binned sample frequencies match the density") {
    Rng rng = make_rng(10);
    GaussianPolicy pi(MlpSpec{2, {4}, 1});
    pi.initialize(rng);
    const Vector obs = random_vector(2, rng);
    const double mu = pi.mode(sp(obs))[0];
    const double sigma = std::exp(pi.log_std()[0]);
    const int n = 200000;
    const double width = 0.25 * sigma;
    std::vector<int> counts(16, 0);
    for (int i = 0; i < n; ++i) {
      const double a = pi.sample(sp(obs), rng).action[0];
      const int bin = static_cast<int>(std::floor((a - mu) / width)) + 8;
      if (bin >= 0 && bin < 16) counts[static_cast<std::size_t>(bin)]++;
    }
    for (int b = 0; b < 16; ++b) {
      Vector c(1);
      c << mu + (b - 8 + 0.5) * width;
      // Midpoint rule error is tiny next to the sampling error for bins this narrow.
      const double p = std::exp(pi.log_prob(sp(obs), sp(c))) * width;
      const double sd = std::sqrt(p * (1 - p) / n);
      CHECK(std::abs(counts[static_cast<std::size_t>(b)] / double(n) - p) <= 3 * sd + 2e-4);
    }
  }

  TEST_CASE("grad_logprob_weighted matches finite differences") {
    Rng rng = make_rng(11);
    for (int rep = 0; rep < 20; ++rep) {
      GaussianPolicy g(MlpSpec{3, {6, 5}, 2});
      CategoricalPolicy c(MlpSpec{3, {6}, 4});
      ParamVector pg = g.params(), pc = c.params();
      randomize(pg, rng);
      randomize(pc, rng);
      pg.segment("log_std")[0] = -0.3;
      pg.segment("log_std")[1] = 0.2;
      g.set_params(pg);
      c.set_params(pc);
      const Matrix obs = random_matrix(3, 5, rng);
      const Vector w = random_vector(5, rng);
      Matrix ga = random_matrix(2, 5, rng);
      Matrix ca(1, 5);
      for (int i = 0; i < 5; ++i) ca(0, i) = (rep + i) % 4;

      auto fg = [&](const ParamVector& q) {
        GaussianPolicy t = g;
        t.set_params(q);
        return (t.log_prob_batch(obs, ga).array() * w.array()).mean();
      };
      auto fc = [&](const ParamVector& q) {
        CategoricalPolicy t = c;
        t.set_params(q);
        return (t.log_prob_batch(obs, ca).array() * w.array()).mean();
      };
      CHECK(max_rel_error(g.grad_logprob_weighted(obs, ga, w).vec(), numeric_gradient(fg, g.params())) <= 1e-4);
      CHECK(max_rel_error(c.grad_logprob_weighted(obs, ca, w).vec(), numeric_gradient(fc, c.params())) <= 1e-4);

      CHECK(g.grad_logprob_weighted(obs, ga, Vector::Zero(5)).vec().isZero(0.0));

      // Batch gradient is the mean of single-sample gradients.
      Vector acc = Vector::Zero(static_cast<Eigen::Index>(g.params().size()));
      for (int i = 0; i < 5; ++i) {
        acc += g.grad_logprob_weighted(obs.col(i), ga.col(i), w.segment(i, 1)).vec();
      }
      CHECK(((acc / 5.0) - g.grad_logprob_weighted(obs, ga, w).vec()).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }

  TEST_CASE("mean_kl closed forms") {
    Rng rng = make_rng(12);
    GaussianPolicy g(MlpSpec{2, {4}, 2});
    g.initialize(rng);
    const Matrix obs = random_matrix(2, 7, rng);
    CHECK(g.mean_kl(g.distribution(obs), obs) == 0.0);

    double m0[] = {0.0}, m1[] = {1.0}, ls[] = {0.0};
    CHECK(kl_diag_gaussian(m0, ls, m1, ls) == doctest::Approx(0.5).epsilon(1e-15));
    double p[] = {0.5, 0.5}, q[] = {0.9, 0.1};
    const double expected = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
    CHECK(kl_categorical(p, q) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(expected == doctest::Approx(0.5108).epsilon(1e-4));

    // Policy-level categorical KL against a hand-built old distribution.
    auto c = categorical_with_logits({std::log(0.9), std::log(0.1)});
    DistBatch old;
    old.kind = DistKind::categorical;
    old.table = Matrix::Constant(2, 3, 0.5);
    CHECK(c.mean_kl(old, Matrix::Zero(3, 3)) == doctest::Approx(expected).epsilon(1e-12));
  }

  TEST_CASE("grad_mean_kl matches finite differences") {
    Rng rng = make_rng(13);
    GaussianPolicy g(MlpSpec{3, {5}, 2});
    g.initialize(rng);
    CategoricalPolicy c(MlpSpec{3, {5}, 3});
    c.initialize(rng);
    const Matrix obs = random_matrix(3, 6, rng);
    const DistBatch og = g.distribution(obs);
    const DistBatch oc = c.distribution(obs);
    ParamVector pg = g.params(), pc = c.params();
    randomize(pg, rng, 0.3);
    randomize(pc, rng, 0.3);
    g.set_params(pg);
    c.set_params(pc);
    auto fg = [&](const ParamVector& q) {
      GaussianPolicy t = g;
      t.set_params(q);
      return t.mean_kl(og, obs);
    };
    auto fc = [&](const ParamVector& q) {
      CategoricalPolicy t = c;
      t.set_params(q);
      return t.mean_kl(oc, obs);
    };
    CHECK(max_rel_error(g.grad_mean_kl(og, obs).vec(), numeric_gradient(fg, g.params())) <= 1e-4);
    CHECK(max_rel_error(c.grad_mean_kl(oc, obs).vec(), numeric_gradient(fc, c.params())) <= 1e-4);
  }

  TEST_CASE("value_predict") {
    auto est = PolynomialValueEstimator::zeros(3);
    est.w0 = 7.0;
    Vector s(3);
    s << 0.3, -2.0, 5.0;
    CHECK(est.predict(sp(s)) == 7.0);

    auto one = PolynomialValueEstimator::zeros(1);
    one.w1[0] = 2.0;
    Vector s1(1);
    s1 << 3.0;
    CHECK(one.predict(sp(s1)) == 6.0);

    Rng rng = make_rng(14);
    auto r = PolynomialValueEstimator::zeros(4);
    r.w3 = random_vector(4, rng);
    r.w2 = random_vector(4, rng);
    r.w1 = random_vector(4, rng);
    r.w0 = 0.25;
    const Matrix states = random_matrix(4, 10, rng);
    const Vector batch = r.predict_batch(states);
    for (int j = 0; j < 10; ++j) {
      double ref = r.w0;
      for (int i = 0; i < 4; ++i) {
        const double x = states(i, j);
        ref += r.w3[i] * x * x * x + r.w2[i] * x * x + r.w1[i] * x;
      }
      CHECK(std::abs(batch[j] - ref) <= 1e-12);
      CHECK(std::abs(r.predict(sp(Vector(states.col(j)))) - ref) <= 1e-12);
    }
    CHECK_THROWS_AS(r.predict(sp(s)), ShapeError);
  }

  TEST_CASE("fit_value") {
    Rng rng = make_rng(15);
    const Matrix states = random_matrix(3, 100, rng);
    const Vector constant = Vector::Constant(100, 4.5);
    const auto c = fit_value(states, constant, 1e-6);
    CHECK(c.w0 == doctest::Approx(4.5).epsilon(1e-6));
    CHECK(c.w1.cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(c.w2.cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(c.w3.cwiseAbs().maxCoeff() <= 1e-6);

    auto truth = PolynomialValueEstimator::zeros(3);
    truth.w3 = random_vector(3, rng);
    truth.w2 = random_vector(3, rng);
    truth.w1 = random_vector(3, rng);
    truth.w0 = -1.25;
    const auto fit = fit_value(states, truth.predict_batch(states), 0.0);
    Vector a(10), b(10);
    a << truth.w3, truth.w2, truth.w1, truth.w0;
    b << fit.w3, fit.w2, fit.w1, fit.w0;
    CHECK((a - b).norm() / a.norm() <= 1e-6);

    // One sample: ridge solution is x (x.x + lambda)^-1 t, so the fitted value
    // is t * |x|^2 / (|x|^2 + lambda).
    const Matrix one = random_matrix(3, 1, rng);
    Vector t(1);
    t << 3.0;
    const auto single = fit_value(one, t, kDefaultRidge);
    CHECK(std::abs(single.predict(sp(Vector(one.col(0)))) - 3.0) <= 1e-3);

    const Vector noisy = random_vector(100, rng, 5.0);
    CHECK(mean_squared_error(fit_value(states, noisy), states, noisy) <=
          mean_squared_error(PolynomialValueEstimator::zeros(3), states, noisy));
    const auto first = fit_value(states, noisy);
    const auto refit = fit_value(states, noisy);
    CHECK(mean_squared_error(refit, states, noisy) <= mean_squared_error(first, states, noisy) + 1e-12);

    CHECK_THROWS(fit_value(Matrix(3, 0), Vector(0)));
    CHECK_THROWS(fit_value(states, Vector::Zero(99)));
  }
}
