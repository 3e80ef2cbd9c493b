#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "haar/checkpoint.hpp"
#include "haar/env/environment.hpp"
#include "haar/policy.hpp"
#include "haar/trpo.hpp"

namespace haar {

enum class SkillProxy { velocity_direction, random_init };

SkillProxy parse_skill_proxy(const std::string& name);
std::string to_string(SkillProxy proxy);

/// Version tag of the point environment's observation/action layout, stored in
/// checkpoints so skills trained against another layout are rejected.
inline constexpr const char* kEnvVersion = "point-v1";

struct PretrainConfig {
  int n_skills = 6;
  SkillProxy proxy = SkillProxy::velocity_direction;
  int iterations = 60;
  long batch_low_steps = 5000;
  /// Episode length in the open field; one skill is held for the whole episode.
  int path_length = 500;
  double gamma = 0.99;
  /// Whether the stumble rule is active during pre-training.
  bool stumble = true;
  /// Dynamics shared with the downstream task; episode length and the stumble
  /// flag come from the fields above.
  env::EnvConfig dynamics;
  std::vector<std::size_t> hidden{32, 32};
  TrpoConfig trpo;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const;
};

/// Displacement projected on the skill's direction (cos 2pi j/n, sin 2pi j/n).
double proxy_reward(int skill, const env::Vec2& displacement, int n_skills);

/// Fresh low-level policy over s^l + one-hot(n_skills).
GaussianPolicy make_low_policy(int n_skills, const std::vector<std::size_t>& hidden, Rng& rng);

/// Open-field environment used for pre-training and skill measurements.
env::PointMazeEnv open_field_env(int path_length, bool stumble, const env::EnvConfig& dynamics = {});

struct PretrainResult {
  GaussianPolicy pi_l;
  /// Mean proxy return per pre-training episode, one entry per iteration.
  std::vector<double> mean_proxy_return;
};

/// velocity_direction: TRPO on the proxy reward in the open field with skills
/// drawn uniformly per episode. random_init: the freshly initialized policy.
/// Initialization draws from make_rng(cfg.seed, {0}).
PretrainResult pretrain_skills(const PretrainConfig& cfg);

/// Mean displacement per skill over `episodes_per_skill` open-field episodes.
std::vector<env::Vec2> skill_displacements(const GaussianPolicy& pi_l, int n_skills, int episodes_per_skill,
                                           int path_length, std::uint64_t seed, const env::EnvConfig& dynamics = {});

/// Checkpoint holding "pi_l/" segments and the skill metadata.
Checkpoint skills_checkpoint(const GaussianPolicy& pi_l, const PretrainConfig& cfg);

/// Loads "pi_l/" segments into a policy of matching shape; throws ShapeError on
/// any mismatch (skill count, environment version, layout).
GaussianPolicy load_skills(const Checkpoint& ckpt, int n_skills, const std::vector<std::size_t>& hidden);

}  // namespace haar
