#pragma once

#include <cstddef>
#include <vector>

#include "haar/common.hpp"

namespace haar::env {

/// Finite MDP with dense tables. Terminal states are absorbing with zero
/// reward regardless of what their rows hold.
struct TabularMdp {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  /// P[s][a][s'] flattened as (s * n_actions + a) * n_states + s'.
  std::vector<double> transition;
  /// R[s][a] flattened as s * n_actions + a.
  std::vector<double> reward;
  std::vector<double> initial;
  std::vector<bool> terminal;

  double p(std::size_t s, std::size_t a, std::size_t s2) const {
    return transition[(s * n_actions + a) * n_states + s2];
  }
  double r(std::size_t s, std::size_t a) const { return reward[s * n_actions + a]; }

  /// Rows sum to one within 1e-12, initial distribution likewise.
  void validate() const;
};

/// Dirichlet(1) transition rows and initial distribution, rewards uniform in [0, 1].
TabularMdp random_mdp(std::size_t n_states, std::size_t n_actions, Rng& rng);

/// random_mdp over n_states non-terminal states plus one absorbing terminal
/// state (index n_states) entered with probability `termination_prob` from
/// every (s, a). The initial distribution puts no mass on the terminal.
TabularMdp random_episodic_mdp(std::size_t n_states, std::size_t n_actions, double termination_prob, Rng& rng);

}  // namespace haar::env
