#include "haar/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "haar/value.hpp"

namespace haar {

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& text) {
  Int v{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("config: '" + key + "' expects an integer, got '" + text + "'");
  }
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw ConfigError("config: '" + key + "' expects a finite number, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config: '" + key + "' expects true or false, got '" + text + "'");
}

std::vector<std::size_t> parse_hidden(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  if (text == "none") return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto v = parse_int<std::size_t>(key, trim(item));
    if (v == 0) throw ConfigError("config: hidden layer widths must be >= 1");
    out.push_back(v);
  }
  return out;
}

std::string join_hidden(const std::vector<std::size_t>& hidden) {
  if (hidden.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < hidden.size(); ++i) out += (i ? "," : "") + std::to_string(hidden[i]);
  return out;
}

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) out += (i ? "," : "") + std::to_string(seeds[i]);
  return out;
}

/// Presents s^h as the low-level observation so the hierarchical rollout code
/// can drive a flat policy.
class FlatView final : public env::Environment {
 public:
  explicit FlatView(std::unique_ptr<env::Environment> inner) : inner_(std::move(inner)) {}
  FlatView(const FlatView& other) : inner_(other.inner_->clone()) {}

  std::unique_ptr<env::Environment> clone() const override { return std::make_unique<FlatView>(*this); }
  std::size_t low_obs_dim() const override { return inner_->high_obs_dim(); }
  std::size_t high_obs_dim() const override { return inner_->high_obs_dim(); }
  std::size_t action_dim() const override { return inner_->action_dim(); }

  env::ObservationPair reset(Rng& rng) override {
    env::ObservationPair obs = inner_->reset(rng);
    obs.low = obs.high;
    return obs;
  }
  env::EnvStep step(std::span<const double> action) override {
    env::EnvStep s = inner_->step(action);
    s.obs.low = s.obs.high;
    return s;
  }
  env::Vec2 position() const override { return inner_->position(); }

 private:
  std::unique_ptr<env::Environment> inner_;
};

/// The flat policy's only "skill".
class SingleSkill final : public ActionSampler {
 public:
  explicit SingleSkill(std::size_t obs_dim) : obs_dim_(obs_dim) {}
  std::size_t obs_dim() const override { return obs_dim_; }
  std::size_t action_dim() const override { return 1; }
  Sample sample(std::span<const double>, Rng&) const override { return Sample{Vector::Zero(1), 0.0}; }

 private:
  std::size_t obs_dim_;
};

void collect_trajectories(const RolloutBatch& batch, int iteration, int max_episodes,
                          std::vector<TrajectoryPoint>& out) {
  std::vector<int> step(batch.episodes.size(), 0);
  for (const auto& l : batch.low) {
    const HighTransition& h = batch.high[static_cast<std::size_t>(l.segment_id)];
    if (h.episode >= max_episodes) continue;
    const auto e = static_cast<std::size_t>(h.episode);
    out.push_back({iteration, h.episode, step[e]++, l.position.x(), l.position.y(), h.a_h});
  }
}

GaussianPolicy flat_policy_shell(const ExperimentConfig& cfg, std::size_t obs_dim, std::size_t action_dim) {
  MlpSpec spec;
  spec.input_dim = obs_dim + 1;
  spec.hidden = cfg.hidden;
  spec.output_dim = action_dim;
  return GaussianPolicy(spec);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace

Task parse_task(const std::string& name) {
  if (name == "point_maze") return Task::point_maze;
  if (name == "point_gather") return Task::point_gather;
  if (name == "swimmer_maze_lite") return Task::swimmer_maze_lite;
  throw ConfigError("unknown task '" + name + "' (expected point_maze, point_gather or swimmer_maze_lite)");
}

Algorithm parse_algorithm(const std::string& name) {
  if (name == "haar") return Algorithm::haar;
  if (name == "haar_no_anneal") return Algorithm::haar_no_anneal;
  if (name == "flat_trpo") return Algorithm::flat_trpo;
  if (name == "frozen_skills") return Algorithm::frozen_skills;
  throw ConfigError("unknown algorithm '" + name + "' (expected haar, haar_no_anneal, flat_trpo or frozen_skills)");
}

TransferMode parse_transfer_mode(const std::string& name) {
  if (name == "both") return TransferMode::both;
  if (name == "low_only") return TransferMode::low_only;
  if (name == "none") return TransferMode::none;
  throw ConfigError("unknown transfer mode '" + name + "' (expected both, low_only or none)");
}

TrainingMode parse_training_mode(const std::string& name) {
  if (name == "concurrent") return TrainingMode::concurrent;
  if (name == "alternate") return TrainingMode::alternate;
  throw ConfigError("unknown mode '" + name + "' (expected concurrent or alternate)");
}

std::string to_string(Task task) {
  switch (task) {
    case Task::point_maze: return "point_maze";
    case Task::point_gather: return "point_gather";
    case Task::swimmer_maze_lite: return "swimmer_maze_lite";
  }
  return "point_maze";
}

std::string to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::haar: return "haar";
    case Algorithm::haar_no_anneal: return "haar_no_anneal";
    case Algorithm::flat_trpo: return "flat_trpo";
    case Algorithm::frozen_skills: return "frozen_skills";
  }
  return "haar";
}

std::string to_string(TransferMode mode) {
  switch (mode) {
    case TransferMode::both: return "both";
    case TransferMode::low_only: return "low_only";
    case TransferMode::none: return "none";
  }
  return "none";
}

std::string to_string(TrainingMode mode) { return mode == TrainingMode::concurrent ? "concurrent" : "alternate"; }

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      out.push_back(parse_int<std::uint64_t>("seeds", item));
      continue;
    }
    const auto lo = parse_int<std::uint64_t>("seeds", trim(item.substr(0, dash)));
    const auto hi = parse_int<std::uint64_t>("seeds", trim(item.substr(dash + 1)));
    if (hi < lo || hi - lo > 100000) throw ConfigError("seeds: bad range '" + item + "'");
    for (auto s = lo; s <= hi; ++s) out.push_back(s);
  }
  if (out.empty()) throw ConfigError("seeds: empty list");
  std::set<std::uint64_t> unique(out.begin(), out.end());
  if (unique.size() != out.size()) throw ConfigError("seeds: duplicate seed");
  return out;
}

ExperimentConfig ExperimentConfig::defaults(Task task) {
  ExperimentConfig c;
  c.task = task;
  switch (task) {
    case Task::point_maze:
      break;
    case Task::swimmer_maze_lite:
      c.dynamics.stumble = false;
      c.pretrain.stumble = false;
      c.k_s = 50;
      break;
    case Task::point_gather:
      break;
  }
  return c;
}

ExperimentConfig ExperimentConfig::resolved() const {
  ExperimentConfig c = *this;
  if (c.algorithm == Algorithm::haar_no_anneal) c.k_0 = c.k_s;
  c.pretrain.n_skills = c.n_skills;
  c.pretrain.hidden = c.hidden;
  c.pretrain.dynamics = c.dynamics;
  return c;
}

double ExperimentConfig::effective_tau() const {
  return tau ? *tau : SkillSchedule::halfway_tau(k_0, k_s, N);
}

void ExperimentConfig::validate() const {
  if (N < 1) throw ConfigError("config: N must be >= 1");
  if (B < 1) throw ConfigError("config: B must be >= 1");
  if (T < 1) throw ConfigError("config: T must be >= 1");
  if (k_0 < 1 || k_s < 1) throw ConfigError("config: k_0 and k_s must be >= 1");
  if (k_s > k_0) throw ConfigError("config: k_s must not exceed k_0");
  if (algorithm == Algorithm::haar_no_anneal && k_0 != k_s) {
    throw ConfigError("config: haar_no_anneal requires k_0 = k_s (use resolved())");
  }
  if (n_skills < 1) throw ConfigError("config: n_skills must be >= 1");
  if (!(gamma_h > 0.0 && gamma_h < 1.0) || !(gamma_l > 0.0 && gamma_l < 1.0)) {
    throw ConfigError("config: gamma_h and gamma_l must lie in (0, 1)");
  }
  if (tau && !(*tau >= 0.0)) throw ConfigError("config: tau must be >= 0");
  if (seeds.empty()) throw ConfigError("config: at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("config: duplicate seed");
  }
  if (workers < 1) throw ConfigError("config: workers must be >= 1");
  if (trajectory_episodes < 0 || checkpoint_every < 0) {
    throw ConfigError("config: trajectory_episodes and checkpoint_every must be >= 0");
  }
  if (pretrain.n_skills != n_skills) throw ConfigError("config: pretrain n_skills differs from n_skills");
  dynamics.validate();
  trpo.validate();
  pretrain.validate();
  skill_schedule(*this).validate();
}

void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  if (key == "task") throw ConfigError("config: 'task' selects defaults and cannot be overridden");
  if (key == "algorithm") c.algorithm = parse_algorithm(value);
  else if (key == "N") c.N = parse_int<int>(key, value);
  else if (key == "B") c.B = parse_int<long>(key, value);
  else if (key == "gamma_h") c.gamma_h = parse_double(key, value);
  else if (key == "gamma_l") c.gamma_l = parse_double(key, value);
  else if (key == "k_0") c.k_0 = parse_int<int>(key, value);
  else if (key == "k_s") c.k_s = parse_int<int>(key, value);
  else if (key == "T") c.T = parse_int<int>(key, value);
  else if (key == "tau") c.tau = value == "auto" ? std::nullopt : std::optional<double>(parse_double(key, value));
  else if (key == "n_skills") c.n_skills = c.pretrain.n_skills = parse_int<int>(key, value);
  else if (key == "seeds") c.seeds = parse_seed_list(value);
  else if (key == "mode") c.mode = parse_training_mode(value);
  else if (key == "maze") c.maze = value;
  else if (key == "skills") c.skills = value;
  else if (key == "workers") c.workers = c.pretrain.workers = parse_int<int>(key, value);
  else if (key == "hidden") c.hidden = c.pretrain.hidden = parse_hidden(key, value);
  else if (key == "trajectory_episodes") c.trajectory_episodes = parse_int<int>(key, value);
  else if (key == "checkpoint_every") c.checkpoint_every = parse_int<int>(key, value);
  else if (key == "record_wall_time") c.record_wall_time = parse_bool(key, value);
  else if (key == "trpo.max_kl") c.trpo.max_kl = c.pretrain.trpo.max_kl = parse_double(key, value);
  else if (key == "trpo.cg_iterations") c.trpo.cg_iterations = c.pretrain.trpo.cg_iterations = parse_int<int>(key, value);
  else if (key == "trpo.cg_damping") c.trpo.cg_damping = c.pretrain.trpo.cg_damping = parse_double(key, value);
  else if (key == "trpo.backtrack_ratio") c.trpo.backtrack_ratio = c.pretrain.trpo.backtrack_ratio = parse_double(key, value);
  else if (key == "trpo.max_backtracks") c.trpo.max_backtracks = c.pretrain.trpo.max_backtracks = parse_int<int>(key, value);
  else if (key == "env.dt") c.dynamics.dt = parse_double(key, value);
  else if (key == "env.v_max") c.dynamics.v_max = parse_double(key, value);
  else if (key == "env.action_scale") c.dynamics.action_scale = parse_double(key, value);
  else if (key == "env.ray_max") c.dynamics.ray_max = parse_double(key, value);
  else if (key == "env.agent_radius") c.dynamics.agent_radius = parse_double(key, value);
  else if (key == "env.stumble") c.dynamics.stumble = parse_bool(key, value);
  else if (key == "env.stumble_threshold") c.dynamics.stumble_threshold = parse_double(key, value);
  else if (key == "env.stumble_steps") c.dynamics.stumble_steps = parse_int<int>(key, value);
  else if (key == "env.goal_reward") c.dynamics.goal_reward = parse_double(key, value);
  else if (key == "env.death_reward") c.dynamics.death_reward = parse_double(key, value);
  else if (key == "pretrain.proxy") c.pretrain.proxy = parse_skill_proxy(value);
  else if (key == "pretrain.iterations") c.pretrain.iterations = parse_int<int>(key, value);
  else if (key == "pretrain.B") c.pretrain.batch_low_steps = parse_int<long>(key, value);
  else if (key == "pretrain.path_length") c.pretrain.path_length = parse_int<int>(key, value);
  else if (key == "pretrain.gamma") c.pretrain.gamma = parse_double(key, value);
  else if (key == "pretrain.stumble") c.pretrain.stumble = parse_bool(key, value);
  else if (key == "pretrain.seed") c.pretrain.seed = parse_int<std::uint64_t>(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

ExperimentConfig parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
    }
    if (!seen.insert(key).second) throw ConfigError("config: duplicate key '" + key + "'");
    entries.emplace_back(std::move(key), std::move(value));
  }
  ExperimentConfig c;
  for (const auto& [key, value] : entries) {
    if (key == "task") c = ExperimentConfig::defaults(parse_task(value));
  }
  for (const auto& [key, value] : entries) {
    if (key != "task") set_config_value(c, key, value);
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config(read_file(path));
}

std::string to_text(const ExperimentConfig& c) {
  std::ostringstream o;
  o << "task = " << to_string(c.task) << "\n"
    << "algorithm = " << to_string(c.algorithm) << "\n"
    << "N = " << c.N << "\n"
    << "B = " << c.B << "\n"
    << "gamma_h = " << fmt(c.gamma_h) << "\n"
    << "gamma_l = " << fmt(c.gamma_l) << "\n"
    << "k_0 = " << c.k_0 << "\n"
    << "k_s = " << c.k_s << "\n"
    << "T = " << c.T << "\n"
    << "tau = " << (c.tau ? fmt(*c.tau) : std::string("auto")) << "\n"
    << "n_skills = " << c.n_skills << "\n"
    << "seeds = " << join_seeds(c.seeds) << "\n"
    << "mode = " << to_string(c.mode) << "\n";
  if (!c.maze.empty()) o << "maze = " << c.maze << "\n";
  if (!c.skills.empty()) o << "skills = " << c.skills << "\n";
  o << "workers = " << c.workers << "\n"
    << "hidden = " << join_hidden(c.hidden) << "\n"
    << "trajectory_episodes = " << c.trajectory_episodes << "\n"
    << "checkpoint_every = " << c.checkpoint_every << "\n"
    << "record_wall_time = " << (c.record_wall_time ? "true" : "false") << "\n"
    << "trpo.max_kl = " << fmt(c.trpo.max_kl) << "\n"
    << "trpo.cg_iterations = " << c.trpo.cg_iterations << "\n"
    << "trpo.cg_damping = " << fmt(c.trpo.cg_damping) << "\n"
    << "trpo.backtrack_ratio = " << fmt(c.trpo.backtrack_ratio) << "\n"
    << "trpo.max_backtracks = " << c.trpo.max_backtracks << "\n"
    << "env.dt = " << fmt(c.dynamics.dt) << "\n"
    << "env.v_max = " << fmt(c.dynamics.v_max) << "\n"
    << "env.action_scale = " << fmt(c.dynamics.action_scale) << "\n"
    << "env.ray_max = " << fmt(c.dynamics.ray_max) << "\n"
    << "env.agent_radius = " << fmt(c.dynamics.agent_radius) << "\n"
    << "env.stumble = " << (c.dynamics.stumble ? "true" : "false") << "\n"
    << "env.stumble_threshold = " << fmt(c.dynamics.stumble_threshold) << "\n"
    << "env.stumble_steps = " << c.dynamics.stumble_steps << "\n"
    << "env.goal_reward = " << fmt(c.dynamics.goal_reward) << "\n"
    << "env.death_reward = " << fmt(c.dynamics.death_reward) << "\n"
    << "pretrain.proxy = " << to_string(c.pretrain.proxy) << "\n"
    << "pretrain.iterations = " << c.pretrain.iterations << "\n"
    << "pretrain.B = " << c.pretrain.batch_low_steps << "\n"
    << "pretrain.path_length = " << c.pretrain.path_length << "\n"
    << "pretrain.gamma = " << fmt(c.pretrain.gamma) << "\n"
    << "pretrain.stumble = " << (c.pretrain.stumble ? "true" : "false") << "\n"
    << "pretrain.seed = " << c.pretrain.seed << "\n";
  return o.str();
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::istringstream in(to_text(cfg));
  std::string line;
  std::uint64_t h = 1469598103934665603ULL;
  while (std::getline(in, line)) {
    // Seeds and worker count do not change any single run's output.
    if (line.rfind("seeds =", 0) == 0 || line.rfind("workers =", 0) == 0) continue;
    for (unsigned char ch : line + "\n") {
      h ^= ch;
      h *= 1099511628211ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

env::MazeSpec task_maze(const ExperimentConfig& cfg) {
  if (cfg.maze.empty()) {
    return env::build_maze(cfg.task == Task::point_gather ? env::MazeKind::gather : env::MazeKind::c_maze);
  }
  try {
    const env::MazeKind kind = env::parse_maze_kind(cfg.maze);
    if (kind != env::MazeKind::custom) return env::build_maze(kind);
  } catch (const std::invalid_argument&) {
  }
  try {
    return env::load_maze_file(cfg.maze);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("maze '") + cfg.maze + "': " + e.what());
  }
}

std::unique_ptr<env::Environment> make_task_env(const ExperimentConfig& cfg) {
  env::EnvConfig ec = cfg.dynamics;
  ec.max_episode_steps = cfg.T;
  return std::make_unique<env::PointMazeEnv>(task_maze(cfg), ec);
}

HaarConfig haar_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  HaarConfig h;
  h.n_skills = cfg.n_skills;
  h.gamma_h = cfg.gamma_h;
  h.gamma_l = cfg.gamma_l;
  h.batch_low_steps = cfg.B;
  h.trpo_high = cfg.trpo;
  h.trpo_low = cfg.trpo;
  h.mode = cfg.mode;
  h.update_low = cfg.algorithm != Algorithm::frozen_skills;
  h.workers = cfg.workers;
  h.seed = seed;
  return h;
}

SkillSchedule skill_schedule(const ExperimentConfig& cfg) {
  return SkillSchedule{cfg.k_0, cfg.effective_tau(), cfg.k_s, 0};
}

FlatState make_flat_state(const ExperimentConfig& cfg, const env::Environment& env, Rng& init_rng) {
  GaussianPolicy pi = flat_policy_shell(cfg, env.high_obs_dim(), env.action_dim());
  pi.initialize(init_rng);
  return FlatState{std::move(pi), PolynomialValueEstimator::zeros(env.high_obs_dim() + 1), 0, 0};
}

IterationMetrics flat_iteration(FlatState& state, const ExperimentConfig& cfg, const env::Environment& env,
                                std::uint64_t seed, RolloutBatch* batch_out) {
  const FlatView view(env.clone());
  const SingleSkill chooser(view.high_obs_dim());
  IterationMetrics m;
  m.iteration = state.iteration + 1;
  m.k = 1;
  RolloutOptions opts;
  opts.seed = seed;
  opts.stream = static_cast<std::uint64_t>(state.iteration);
  opts.workers = cfg.workers;
  RolloutBatch batch = collect_rollouts(chooser, state.pi, view, cfg.B, cfg.T, opts);
  for (auto& l : batch.low) l.r_l = l.r_env;

  const Matrix states = low_states(batch);
  const Vector returns = low_level_returns(batch, cfg.gamma_l);
  std::vector<Vector> acts;
  acts.reserve(batch.low.size());
  for (const auto& l : batch.low) acts.push_back(l.a_l);
  Vector adv = returns - state.v.predict_batch(states);
  const AdvantageBatch ab = make_advantage_batch(state.pi, states, stack_columns(acts), std::move(adv));
  m.low = trpo_update(state.pi, ab, cfg.trpo);
  m.low_updated = true;
  state.v = fit_value(states, returns);

  state.low_steps_total += batch.total_low_steps();
  ++state.iteration;
  m.low_steps_total = state.low_steps_total;
  m.success_rate = batch.success_rate();
  m.mean_return = batch.mean_return();
  if (batch_out) *batch_out = std::move(batch);
  return m;
}

GaussianPolicy initial_skills(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.pretrain.proxy == SkillProxy::random_init) {
    Rng rng = make_rng(seed, {1});
    return make_low_policy(cfg.n_skills, cfg.hidden, rng);
  }
  if (cfg.skills.empty()) {
    throw ConfigError("pre-trained skills required: set 'skills = <checkpoint>' (see the pretrain subcommand) "
                      "or 'pretrain.proxy = random_init'");
  }
  if (!std::filesystem::exists(cfg.skills)) throw ConfigError("skills checkpoint not found: " + cfg.skills);
  return load_skills(load_checkpoint(cfg.skills), cfg.n_skills, cfg.hidden);
}

PretrainResult run_pretrain(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint_path) {
  const ExperimentConfig r = cfg.resolved();
  r.pretrain.validate();
  PretrainResult result = pretrain_skills(r.pretrain);
  if (!checkpoint_path.empty()) {
    if (checkpoint_path.has_parent_path()) std::filesystem::create_directories(checkpoint_path.parent_path());
    save_checkpoint(checkpoint_path, skills_checkpoint(result.pi_l, r.pretrain));
  }
  return result;
}

Checkpoint training_checkpoint(const ExperimentConfig& cfg, std::uint64_t seed, int iteration,
                               const TrainingState& state) {
  Checkpoint c;
  c.metadata["algorithm"] = to_string(cfg.algorithm);
  c.metadata["task"] = to_string(cfg.task);
  c.metadata["config_hash"] = config_hash(cfg);
  c.metadata["seed"] = std::to_string(seed);
  c.metadata["iteration"] = std::to_string(iteration);
  c.metadata["n_skills"] = std::to_string(cfg.n_skills);
  c.metadata["env_version"] = kEnvVersion;
  c.metadata["k"] = std::to_string(state.schedule.current_k());
  append_prefixed(c.params, state.pi_h.params(), "pi_h/");
  append_prefixed(c.params, state.pi_l.params(), "pi_l/");
  return c;
}

RunRecord run_seed(const ExperimentConfig& cfg_in, std::uint64_t seed, const std::filesystem::path& out,
                   const PolicyOverrides& overrides) {
  const ExperimentConfig cfg = cfg_in.resolved();
  cfg.validate();
  const auto env = make_task_env(cfg);
  RunRecord rec;
  rec.config_hash = config_hash(cfg);
  rec.seed = seed;
  rec.directory = out;
  if (!out.empty()) std::filesystem::create_directories(out);

  const auto t0 = std::chrono::steady_clock::now();
  auto stamp = [&](IterationMetrics& m) {
    if (cfg.record_wall_time) {
      m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
  };
  auto want_batch = [&](int iteration) {
    return cfg.trajectory_episodes > 0 && (iteration == 1 || iteration == cfg.N);
  };

  Rng init_rng = make_rng(seed, {0});
  if (cfg.algorithm == Algorithm::flat_trpo) {
    FlatState st = make_flat_state(cfg, *env, init_rng);
    for (int it = 1; it <= cfg.N; ++it) {
      RolloutBatch batch;
      IterationMetrics m = flat_iteration(st, cfg, *env, seed, want_batch(it) ? &batch : nullptr);
      stamp(m);
      if (want_batch(it)) collect_trajectories(batch, it, cfg.trajectory_episodes, rec.trajectories);
      rec.metrics.push_back(m);
    }
    rec.final_checkpoint.metadata = {{"algorithm", "flat_trpo"},        {"task", to_string(cfg.task)},
                                     {"config_hash", rec.config_hash},  {"seed", std::to_string(seed)},
                                     {"iteration", std::to_string(cfg.N)}, {"env_version", kEnvVersion}};
    append_prefixed(rec.final_checkpoint.params, st.pi.params(), "pi/");
  } else {
    GaussianPolicy pi_l = initial_skills(cfg, seed);
    if (overrides.pi_l) {
      if (!overrides.pi_l->same_layout(pi_l.params())) throw ShapeError("transferred pi_l does not match the skill network");
      pi_l.set_params(*overrides.pi_l);
    }
    const HaarConfig hc = haar_config(cfg, seed);
    SkillSchedule schedule = skill_schedule(cfg);
    if (overrides.fixed_k) schedule = SkillSchedule{*overrides.fixed_k, 0.0, *overrides.fixed_k, 0};
    TrainingState st = make_training_state(hc, *env, std::move(pi_l), schedule, init_rng);
    if (overrides.pi_h) {
      if (!overrides.pi_h->same_layout(st.pi_h.params())) throw ShapeError("transferred pi_h does not match the network");
      st.pi_h.set_params(*overrides.pi_h);
    }
    for (int it = 1; it <= cfg.N; ++it) {
      RolloutBatch batch;
      IterationMetrics m = haar_iteration(st, hc, *env, want_batch(it) ? &batch : nullptr);
      stamp(m);
      if (want_batch(it)) collect_trajectories(batch, it, cfg.trajectory_episodes, rec.trajectories);
      rec.metrics.push_back(m);
      if (!out.empty() && cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it != cfg.N) {
        save_checkpoint(out / ("checkpoint_" + std::to_string(it) + ".bin"), training_checkpoint(cfg, seed, it, st));
      }
    }
    rec.final_checkpoint = training_checkpoint(cfg, seed, cfg.N, st);
  }

  if (!out.empty()) {
    write_file(out / "metrics.csv", metrics_csv(rec.metrics, cfg.record_wall_time));
    write_file(out / "trpo_diagnostics.csv", diagnostics_csv(rec.metrics));
    write_file(out / "trajectories.csv", trajectories_csv(rec.trajectories));
    save_checkpoint(out / "checkpoint.bin", rec.final_checkpoint);
  }
  return rec;
}

std::vector<RunRecord> run_train(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  const ExperimentConfig r = cfg.resolved();
  r.validate();
  // Fail on missing skills before any seed starts.
  if (r.algorithm != Algorithm::flat_trpo) (void)initial_skills(r, r.seeds.front());
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    write_file(out / "config.cfg", "# hash " + config_hash(r) + "\n" + to_text(r));
  }
  std::vector<RunRecord> records;
  for (auto seed : r.seeds) {
    records.push_back(run_seed(r, seed, out.empty() ? out : out / ("seed_" + std::to_string(seed))));
  }
  return records;
}

std::vector<RunRecord> run_transfer(const ExperimentConfig& cfg, const Checkpoint& source, TransferMode mode,
                                    const std::filesystem::path& out) {
  ExperimentConfig r = cfg.resolved();
  r.k_0 = r.k_s;
  r.validate();
  if (r.algorithm == Algorithm::flat_trpo) throw ConfigError("transfer needs a hierarchical algorithm");
  if (mode == TransferMode::none) return run_train(r, out);
  const auto meta = [&](const std::string& key) {
    const auto it = source.metadata.find(key);
    return it == source.metadata.end() ? std::string() : it->second;
  };
  if (meta("env_version") != kEnvVersion) {
    throw ShapeError("source checkpoint env_version '" + meta("env_version") + "' is not " + kEnvVersion);
  }
  if (meta("n_skills") != std::to_string(r.n_skills)) {
    throw ShapeError("source checkpoint has n_skills=" + meta("n_skills") + ", config wants " +
                     std::to_string(r.n_skills));
  }
  PolicyOverrides ov;
  ov.pi_l = extract_prefixed(source.params, "pi_l/");
  if (mode == TransferMode::both) ov.pi_h = extract_prefixed(source.params, "pi_h/");
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    write_file(out / "config.cfg", "# hash " + config_hash(r) + "\n# transfer " + to_string(mode) + "\n" + to_text(r));
  }
  std::vector<RunRecord> records;
  for (auto seed : r.seeds) {
    records.push_back(run_seed(r, seed, out.empty() ? out : out / ("seed_" + std::to_string(seed)), ov));
  }
  return records;
}

std::vector<ReportRow> run_report(const std::vector<std::vector<IterationMetrics>>& runs) {
  if (runs.empty()) throw ConfigError("report: at least one run is required");
  const std::size_t n_iter = runs.front().size();
  for (const auto& r : runs) {
    if (r.size() != n_iter) throw ConfigError("report: runs have different iteration counts");
  }
  const auto n = static_cast<double>(runs.size());
  std::vector<ReportRow> out;
  for (std::size_t i = 0; i < n_iter; ++i) {
    ReportRow row;
    row.iteration = runs.front()[i].iteration;
    row.n = static_cast<int>(runs.size());
    double s_sum = 0.0, r_sum = 0.0, steps = 0.0;
    for (const auto& r : runs) {
      if (r[i].iteration != row.iteration) throw ConfigError("report: runs disagree on iteration numbering");
      s_sum += r[i].success_rate;
      r_sum += r[i].mean_return;
      steps += static_cast<double>(r[i].low_steps_total);
    }
    row.success_mean = s_sum / n;
    row.return_mean = r_sum / n;
    row.low_steps_total = steps / n;
    if (runs.size() > 1) {
      double s_var = 0.0, r_var = 0.0;
      for (const auto& r : runs) {
        s_var += (r[i].success_rate - row.success_mean) * (r[i].success_rate - row.success_mean);
        r_var += (r[i].mean_return - row.return_mean) * (r[i].mean_return - row.return_mean);
      }
      row.success_half_width = 1.96 * std::sqrt(s_var / (n - 1.0)) / std::sqrt(n);
      row.return_half_width = 1.96 * std::sqrt(r_var / (n - 1.0)) / std::sqrt(n);
    }
    out.push_back(row);
  }
  return out;
}

std::string metrics_csv(const std::vector<IterationMetrics>& rows, bool with_wall_time) {
  std::ostringstream o;
  o << "iteration,low_steps_total,k,success_rate,mean_return,high_kl,low_kl,high_surr_improve,low_surr_improve,"
       "wall_time_s\n";
  for (const auto& m : rows) {
    o << m.iteration << ',' << m.low_steps_total << ',' << m.k << ',' << fmt(m.success_rate) << ','
      << fmt(m.mean_return) << ',' << fmt(m.high.kl) << ',' << fmt(m.low.kl) << ',' << fmt(m.high.improvement())
      << ',' << fmt(m.low.improvement()) << ',' << fmt(with_wall_time ? m.wall_time_s : 0.0) << '\n';
  }
  return o.str();
}

std::string diagnostics_csv(const std::vector<IterationMetrics>& rows) {
  std::ostringstream o;
  o << "iteration,level,accepted,kl,surrogate_before,surrogate_after,improvement,backtracks,max_conservation_error\n";
  for (const auto& m : rows) {
    auto emit = [&](const char* level, const TrpoDiagnostics& d) {
      o << m.iteration << ',' << level << ',' << (d.accepted ? 1 : 0) << ',' << fmt(d.kl) << ','
        << fmt(d.surrogate_before) << ',' << fmt(d.surrogate_after) << ',' << fmt(d.improvement()) << ','
        << d.backtracks << ',' << fmt(m.max_conservation_error) << '\n';
    };
    if (m.high_updated) emit("high", m.high);
    if (m.low_updated) emit("low", m.low);
  }
  return o.str();
}

std::string trajectories_csv(const std::vector<TrajectoryPoint>& points) {
  std::ostringstream o;
  o << "iteration,episode,step,x,y,skill\n";
  for (const auto& p : points) {
    o << p.iteration << ',' << p.episode << ',' << p.step << ',' << fmt(p.x) << ',' << fmt(p.y) << ',' << p.skill
      << '\n';
  }
  return o.str();
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream o;
  o << "iteration,low_steps_total,n_runs,success_mean,success_lo,success_hi,return_mean,return_lo,return_hi\n";
  for (const auto& r : rows) {
    o << r.iteration << ',' << fmt(r.low_steps_total) << ',' << r.n << ',' << fmt(r.success_mean) << ','
      << fmt(r.success_mean - r.success_half_width) << ',' << fmt(r.success_mean + r.success_half_width) << ','
      << fmt(r.return_mean) << ',' << fmt(r.return_mean - r.return_half_width) << ','
      << fmt(r.return_mean + r.return_half_width) << '\n';
  }
  return o.str();
}

std::vector<IterationMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("metrics file is empty: " + path.string());
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ConfigError("metrics file " + path.string() + " lacks column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_it = column("iteration"), c_steps = column("low_steps_total"), c_k = column("k"),
                    c_succ = column("success_rate"), c_ret = column("mean_return"), c_hkl = column("high_kl"),
                    c_lkl = column("low_kl"), c_wall = column("wall_time_s");
  std::vector<IterationMetrics> out;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw ConfigError("metrics file " + path.string() + ": ragged row");
    IterationMetrics m;
    m.iteration = parse_int<int>("iteration", f[c_it]);
    m.low_steps_total = parse_int<long>("low_steps_total", f[c_steps]);
    m.k = parse_int<int>("k", f[c_k]);
    m.success_rate = parse_double("success_rate", f[c_succ]);
    m.mean_return = parse_double("mean_return", f[c_ret]);
    m.high.kl = parse_double("high_kl", f[c_hkl]);
    m.low.kl = parse_double("low_kl", f[c_lkl]);
    m.wall_time_s = parse_double("wall_time_s", f[c_wall]);
    out.push_back(m);
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::optional<int> iterations_to_success(const std::vector<IterationMetrics>& rows, double threshold) {
  for (const auto& m : rows) {
    if (m.success_rate >= threshold) return m.iteration;
  }
  return std::nullopt;
}

std::optional<long> steps_to_success(const std::vector<IterationMetrics>& rows, double threshold) {
  for (const auto& m : rows) {
    if (m.success_rate >= threshold) return m.low_steps_total;
  }
  return std::nullopt;
}

}  // namespace haar
