#include "haar/env/tabular.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace haar::env {

namespace {

std::vector<double> dirichlet_ones(std::size_t n, Rng& rng) {
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = expo(rng);
  const double sum = std::accumulate(v.begin(), v.end(), 0.0);
  for (auto& x : v) x /= sum;
  return v;
}

}  // namespace

void TabularMdp::validate() const {
  if (n_states < 1 || n_actions < 1) throw std::invalid_argument("tabular mdp needs >= 1 state and action");
  if (transition.size() != n_states * n_actions * n_states || reward.size() != n_states * n_actions ||
      initial.size() != n_states || terminal.size() != n_states) {
    throw ShapeError("tabular mdp tables have inconsistent sizes");
  }
  for (std::size_t s = 0; s < n_states; ++s) {
    for (std::size_t a = 0; a < n_actions; ++a) {
      double sum = 0.0;
      for (std::size_t s2 = 0; s2 < n_states; ++s2) {
        const double q = p(s, a, s2);
        if (q < 0.0) throw std::invalid_argument("tabular mdp has a negative transition probability");
        sum += q;
      }
      if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("tabular mdp transition row does not sum to 1");
    }
  }
  const double total = std::accumulate(initial.begin(), initial.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("tabular mdp initial distribution does not sum to 1");
}

TabularMdp random_mdp(std::size_t n_states, std::size_t n_actions, Rng& rng) {
  if (n_states < 1 || n_actions < 1) throw std::invalid_argument("random_mdp: need n_states, n_actions >= 1");
  TabularMdp m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.transition.reserve(n_states * n_actions * n_states);
  for (std::size_t i = 0; i < n_states * n_actions; ++i) {
    const auto row = dirichlet_ones(n_states, rng);
    m.transition.insert(m.transition.end(), row.begin(), row.end());
  }
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  m.reward.resize(n_states * n_actions);
  for (auto& r : m.reward) r = uni(rng);
  m.initial = dirichlet_ones(n_states, rng);
  m.terminal.assign(n_states, false);
  m.validate();
  return m;
}

TabularMdp random_episodic_mdp(std::size_t n_states, std::size_t n_actions, double termination_prob, Rng& rng) {
  if (!(termination_prob > 0.0 && termination_prob <= 1.0)) {
    throw std::invalid_argument("random_episodic_mdp: termination_prob must be in (0, 1]");
  }
  const TabularMdp base = random_mdp(n_states, n_actions, rng);
  TabularMdp m;
  m.n_states = n_states + 1;
  m.n_actions = n_actions;
  m.transition.assign(m.n_states * n_actions * m.n_states, 0.0);
  m.reward.assign(m.n_states * n_actions, 0.0);
  for (std::size_t s = 0; s < n_states; ++s) {
    for (std::size_t a = 0; a < n_actions; ++a) {
      for (std::size_t s2 = 0; s2 < n_states; ++s2) {
        m.transition[(s * n_actions + a) * m.n_states + s2] = (1.0 - termination_prob) * base.p(s, a, s2);
      }
      m.transition[(s * n_actions + a) * m.n_states + n_states] = termination_prob;
      m.reward[s * n_actions + a] = base.r(s, a);
    }
  }
  for (std::size_t a = 0; a < n_actions; ++a) {
    m.transition[(n_states * n_actions + a) * m.n_states + n_states] = 1.0;
  }
  m.initial = base.initial;
  m.initial.push_back(0.0);
  m.terminal.assign(m.n_states, false);
  m.terminal[n_states] = true;
  m.validate();
  return m;
}

}  // namespace haar::env
