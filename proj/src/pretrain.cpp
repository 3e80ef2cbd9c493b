#include "haar/pretrain.hpp"

#include <cmath>
#include <numbers>

#include "haar/hierarchy.hpp"
#include "haar/value.hpp"

namespace haar {

SkillProxy parse_skill_proxy(const std::string& name) {
  if (name == "velocity_direction") return SkillProxy::velocity_direction;
  if (name == "random_init") return SkillProxy::random_init;
  throw ConfigError("unknown skill proxy '" + name + "' (expected velocity_direction or random_init)");
}

std::string to_string(SkillProxy proxy) {
  return proxy == SkillProxy::velocity_direction ? "velocity_direction" : "random_init";
}

void PretrainConfig::validate() const {
  if (n_skills < 1) throw ConfigError("pretrain: n_skills must be >= 1");
  if (proxy == SkillProxy::velocity_direction && n_skills < 2) {
    throw ConfigError("pretrain: velocity_direction needs n_skills >= 2");
  }
  if (iterations < 0) throw ConfigError("pretrain: iterations must be >= 0");
  if (batch_low_steps < 1 || path_length < 1) throw ConfigError("pretrain: batch size and path length must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("pretrain: gamma must be in (0, 1]");
  if (workers < 1) throw ConfigError("pretrain: workers must be >= 1");
  dynamics.validate();
  trpo.validate();
}

double proxy_reward(int skill, const env::Vec2& displacement, int n_skills) {
  if (n_skills < 1 || skill < 0 || skill >= n_skills) throw ShapeError("proxy_reward: skill index out of range");
  const double angle = 2.0 * std::numbers::pi * skill / n_skills;
  return displacement.x() * std::cos(angle) + displacement.y() * std::sin(angle);
}

GaussianPolicy make_low_policy(int n_skills, const std::vector<std::size_t>& hidden, Rng& rng) {
  MlpSpec spec;
  spec.input_dim = env::kLowObsDim + static_cast<std::size_t>(n_skills);
  spec.hidden = hidden;
  spec.output_dim = env::kActionDim;
  GaussianPolicy pi(spec);
  pi.initialize(rng);
  return pi;
}

env::PointMazeEnv open_field_env(int path_length, bool stumble, const env::EnvConfig& dynamics) {
  env::EnvConfig cfg = dynamics;
  cfg.max_episode_steps = path_length;
  cfg.stumble = stumble;
  return env::PointMazeEnv(env::build_maze(env::MazeKind::open_field), cfg);
}

namespace {

/// pi_h stand-in that picks a skill uniformly, ignoring the observation.
class UniformSkills final : public ActionSampler {
 public:
  UniformSkills(std::size_t obs_dim, int n) : obs_dim_(obs_dim), n_(n) {}
  std::size_t obs_dim() const override { return obs_dim_; }
  std::size_t action_dim() const override { return 1; }
  Sample sample(std::span<const double>, Rng& rng) const override {
    Sample s;
    s.action = Vector::Constant(1, static_cast<double>(std::uniform_int_distribution<int>(0, n_ - 1)(rng)));
    s.log_prob = -std::log(static_cast<double>(n_));
    return s;
  }

 private:
  std::size_t obs_dim_;
  int n_;
};

/// Holds one fixed skill for every decision.
class FixedSkill final : public ActionSampler {
 public:
  FixedSkill(std::size_t obs_dim, int skill) : obs_dim_(obs_dim), skill_(skill) {}
  std::size_t obs_dim() const override { return obs_dim_; }
  std::size_t action_dim() const override { return 1; }
  Sample sample(std::span<const double>, Rng&) const override {
    return Sample{Vector::Constant(1, static_cast<double>(skill_)), 0.0};
  }

 private:
  std::size_t obs_dim_;
  int skill_;
};

}  // namespace

PretrainResult pretrain_skills(const PretrainConfig& cfg) {
  cfg.validate();
  Rng init = make_rng(cfg.seed, {0});
  PretrainResult out{make_low_policy(cfg.n_skills, cfg.hidden, init), {}};
  if (cfg.proxy == SkillProxy::random_init) return out;

  const env::PointMazeEnv field = open_field_env(cfg.path_length, cfg.stumble, cfg.dynamics);
  const UniformSkills chooser(field.high_obs_dim(), cfg.n_skills);
  auto v = PolynomialValueEstimator::zeros(out.pi_l.obs_dim());
  for (int it = 0; it < cfg.iterations; ++it) {
    RolloutOptions opts;
    opts.seed = cfg.seed;
    opts.stream = static_cast<std::uint64_t>(it) + 1;
    opts.workers = cfg.workers;
    RolloutBatch batch = collect_rollouts(chooser, out.pi_l, field, cfg.batch_low_steps, cfg.path_length, opts);
    double total = 0.0;
    for (auto& l : batch.low) {
      l.r_l = proxy_reward(batch.high[static_cast<std::size_t>(l.segment_id)].a_h, l.displacement, cfg.n_skills);
      total += l.r_l;
    }
    out.mean_proxy_return.push_back(total / static_cast<double>(batch.episodes.size()));

    const Matrix states = low_states(batch);
    const Vector returns = low_level_returns(batch, cfg.gamma);
    std::vector<Vector> acts;
    acts.reserve(batch.low.size());
    for (const auto& l : batch.low) acts.push_back(l.a_l);
    Vector adv = returns - v.predict_batch(states);
    const AdvantageBatch ab = make_advantage_batch(out.pi_l, states, stack_columns(acts), std::move(adv));
    trpo_update(out.pi_l, ab, cfg.trpo);
    v = fit_value(states, returns);
  }
  return out;
}

std::vector<env::Vec2> skill_displacements(const GaussianPolicy& pi_l, int n_skills, int episodes_per_skill,
                                           int path_length, std::uint64_t seed, const env::EnvConfig& dynamics) {
  const env::PointMazeEnv field = open_field_env(path_length, false, dynamics);
  std::vector<env::Vec2> out;
  for (int j = 0; j < n_skills; ++j) {
    const FixedSkill chooser(field.high_obs_dim(), j);
    RolloutOptions opts;
    opts.seed = seed;
    opts.stream = static_cast<std::uint64_t>(j);
    const RolloutBatch b = collect_rollouts(chooser, pi_l, field,
                                            static_cast<long>(episodes_per_skill) * path_length, path_length, opts);
    env::Vec2 sum = env::Vec2::Zero();
    for (const auto& l : b.low) sum += l.displacement;
    out.push_back(sum / static_cast<double>(b.episodes.size()));
  }
  return out;
}

Checkpoint skills_checkpoint(const GaussianPolicy& pi_l, const PretrainConfig& cfg) {
  Checkpoint c;
  c.metadata["n_skills"] = std::to_string(cfg.n_skills);
  c.metadata["proxy"] = to_string(cfg.proxy);
  c.metadata["env_version"] = kEnvVersion;
  append_prefixed(c.params, pi_l.params(), "pi_l/");
  return c;
}

GaussianPolicy load_skills(const Checkpoint& ckpt, int n_skills, const std::vector<std::size_t>& hidden) {
  auto meta = [&](const std::string& key) {
    const auto it = ckpt.metadata.find(key);
    return it == ckpt.metadata.end() ? std::string() : it->second;
  };
  if (meta("env_version") != kEnvVersion) {
    throw ShapeError("skill checkpoint was built for environment '" + meta("env_version") + "', expected " +
                     kEnvVersion);
  }
  if (meta("n_skills") != std::to_string(n_skills)) {
    throw ShapeError("skill checkpoint has n_skills=" + meta("n_skills") + ", config wants " +
                     std::to_string(n_skills));
  }
  Rng unused = make_rng(0);
  GaussianPolicy pi = make_low_policy(n_skills, hidden, unused);
  const ParamVector p = extract_prefixed(ckpt.params, "pi_l/");
  if (!p.same_layout(pi.params())) throw ShapeError("skill checkpoint layout does not match the low-level network");
  pi.set_params(p);
  return pi;
}

}  // namespace haar
