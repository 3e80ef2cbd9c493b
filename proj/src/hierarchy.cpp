#include "haar/hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace haar {

int SkillSchedule::k_at(int i) const {
  const double k = std::round(static_cast<double>(k_1) * std::exp(-tau * static_cast<double>(i)));
  return std::max({static_cast<int>(k), k_s, 1});
}

void SkillSchedule::validate() const {
  if (k_1 < 1 || k_s < 1) throw ConfigError("skill schedule: k_1 and k_s must be >= 1");
  if (k_s > k_1) throw ConfigError("skill schedule: k_s must not exceed k_1");
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw ConfigError("skill schedule: tau must be finite and >= 0");
}

double SkillSchedule::halfway_tau(int k_1, int k_s, int n_iterations) {
  if (k_1 < 1 || k_s < 1 || n_iterations < 2) throw ConfigError("halfway_tau: need k_1, k_s >= 1 and N >= 2");
  if (k_1 <= k_s) return 0.0;
  return std::log(static_cast<double>(k_1) / k_s) / (n_iterations / 2.0);
}

double RolloutBatch::success_rate() const {
  if (episodes.empty()) return 0.0;
  const auto n = std::count_if(episodes.begin(), episodes.end(), [](const auto& e) { return e.success; });
  return static_cast<double>(n) / static_cast<double>(episodes.size());
}

double RolloutBatch::mean_return() const {
  if (episodes.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& e : episodes) sum += e.ret;
  return sum / static_cast<double>(episodes.size());
}

namespace {

void run_episode(const ActionSampler& pi_h, const ActionSampler& pi_l, env::Environment& env, int k, int n_skills,
                 Rng& rng, RolloutBatch& out) {
  const auto low_dim = static_cast<Eigen::Index>(env.low_obs_dim());
  auto with_skill = [&](const Vector& low, int z) {
    Vector in = Vector::Zero(low_dim + n_skills);
    in.head(low_dim) = low;
    in[low_dim + z] = 1.0;
    return in;
  };

  env::ObservationPair obs = env.reset(rng);
  EpisodeSummary summary;
  bool done = false;
  while (!done) {
    HighTransition h;
    h.s_h = obs.high;
    const Sample hs = pi_h.sample({obs.high.data(), static_cast<std::size_t>(obs.high.size())}, rng);
    h.a_h = static_cast<int>(std::lround(hs.action[0]));
    if (h.a_h < 0 || h.a_h >= n_skills) throw ShapeError("collect_rollouts: skill index out of range");
    h.log_prob = hs.log_prob;
    h.first_low = static_cast<int>(out.low.size());
    const int segment_id = static_cast<int>(out.high.size());
    bool terminal = false;
    for (int j = 0; j < k && !done; ++j) {
      LowTransition l;
      l.s_l = with_skill(obs.low, h.a_h);
      const Sample ls = pi_l.sample({l.s_l.data(), static_cast<std::size_t>(l.s_l.size())}, rng);
      const env::EnvStep st = env.step({ls.action.data(), static_cast<std::size_t>(ls.action.size())});
      l.a_l = ls.action;
      l.log_prob = ls.log_prob;
      l.r_env = st.reward;
      l.s_l_next = with_skill(st.obs.low, h.a_h);
      l.done = st.done;
      l.segment_id = segment_id;
      l.position = env.position();
      l.displacement = st.displacement;
      out.low.push_back(std::move(l));

      h.r_h += st.reward;
      ++h.seg_len;
      summary.ret += st.reward;
      ++summary.length;
      summary.success = summary.success || st.success;
      done = st.done;
      terminal = st.terminal;
      obs = st.obs;
    }
    h.s_h_next = obs.high;
    h.done = done && terminal;
    h.episode_end = done;
    out.high.push_back(std::move(h));
  }
  out.episodes.push_back(summary);
}

void append_episode(RolloutBatch& dst, RolloutBatch&& ep) {
  const int low_offset = static_cast<int>(dst.low.size());
  const int high_offset = static_cast<int>(dst.high.size());
  const int episode = static_cast<int>(dst.episodes.size());
  for (auto& h : ep.high) {
    h.first_low += low_offset;
    h.episode = episode;
    dst.high.push_back(std::move(h));
  }
  for (auto& l : ep.low) {
    l.segment_id += high_offset;
    dst.low.push_back(std::move(l));
  }
  dst.episodes.push_back(ep.episodes.front());
}

}  // namespace

RolloutBatch collect_rollouts(const ActionSampler& pi_h, const ActionSampler& pi_l, const env::Environment& env,
                              long min_low_steps, int k, const RolloutOptions& opts) {
  if (k < 1) throw ConfigError("collect_rollouts: k must be >= 1");
  if (min_low_steps < 1) throw ConfigError("collect_rollouts: batch size must be >= 1");
  if (pi_h.obs_dim() != env.high_obs_dim()) throw ShapeError("collect_rollouts: pi_h input does not match s^h");
  if (pi_l.obs_dim() <= env.low_obs_dim()) throw ShapeError("collect_rollouts: pi_l input leaves no room for skills");
  if (pi_l.action_dim() != env.action_dim()) throw ShapeError("collect_rollouts: pi_l output does not match env");
  const int n_skills = static_cast<int>(pi_l.obs_dim() - env.low_obs_dim());
  const int workers = std::max(1, opts.workers);

  std::vector<std::unique_ptr<env::Environment>> envs;
  for (int w = 0; w < workers; ++w) envs.push_back(env.clone());

  RolloutBatch batch;
  std::uint64_t next_episode = 0;
  while (batch.total_low_steps() < min_low_steps) {
    std::vector<RolloutBatch> round(static_cast<std::size_t>(workers));
    auto work = [&](int w) {
      Rng rng = make_rng(opts.seed, {opts.stream, next_episode + static_cast<std::uint64_t>(w)});
      run_episode(pi_h, pi_l, *envs[static_cast<std::size_t>(w)], k, n_skills, rng, round[static_cast<std::size_t>(w)]);
    };
    if (workers == 1) {
      work(0);
    } else {
      std::vector<std::thread> threads;
      std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
      for (int w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
          try {
            work(w);
          } catch (...) {
            errors[static_cast<std::size_t>(w)] = std::current_exception();
          }
        });
      }
      for (auto& t : threads) t.join();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }
    for (auto& ep : round) {
      if (batch.total_low_steps() >= min_low_steps) break;
      append_episode(batch, std::move(ep));
    }
    next_episode += static_cast<std::uint64_t>(workers);
  }
  return batch;
}

Vector high_level_returns(const RolloutBatch& batch, double gamma_h) {
  const auto n = static_cast<Eigen::Index>(batch.high.size());
  Vector g(n);
  double running = 0.0;
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    const auto& h = batch.high[static_cast<std::size_t>(i)];
    if (h.episode_end) running = 0.0;
    running = h.r_h + gamma_h * running;
    g[i] = running;
  }
  return g;
}

Vector low_level_returns(const RolloutBatch& batch, double gamma_l) {
  const auto n = static_cast<Eigen::Index>(batch.low.size());
  Vector g(n);
  double running = 0.0;
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    const auto& l = batch.low[static_cast<std::size_t>(i)];
    if (l.done) running = 0.0;
    running = l.r_l + gamma_l * running;
    g[i] = running;
  }
  return g;
}

Matrix stack_columns(const std::vector<Vector>& columns) {
  if (columns.empty()) return Matrix(0, 0);
  Matrix m(columns.front().size(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].size() != m.rows()) throw ShapeError("stack_columns: ragged columns");
    m.col(static_cast<Eigen::Index>(i)) = columns[i];
  }
  return m;
}

Matrix high_states(const RolloutBatch& batch) {
  std::vector<Vector> cols;
  cols.reserve(batch.high.size());
  for (const auto& h : batch.high) cols.push_back(h.s_h);
  return stack_columns(cols);
}

Matrix low_states(const RolloutBatch& batch) {
  std::vector<Vector> cols;
  cols.reserve(batch.low.size());
  for (const auto& l : batch.low) cols.push_back(l.s_l);
  return stack_columns(cols);
}

Vector estimate_high_advantages(const RolloutBatch& batch, const PolynomialValueEstimator& v_h, double gamma_h) {
  const auto n = static_cast<Eigen::Index>(batch.high.size());
  Vector a(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& h = batch.high[static_cast<std::size_t>(i)];
    const double v = v_h.predict({h.s_h.data(), static_cast<std::size_t>(h.s_h.size())});
    const double v_next =
        h.done ? 0.0 : v_h.predict({h.s_h_next.data(), static_cast<std::size_t>(h.s_h_next.size())});
    a[i] = h.r_h + gamma_h * v_next - v;
  }
  if (!a.allFinite()) throw NumericError("estimate_high_advantages: non-finite advantage");
  return a;
}

double assign_auxiliary_rewards(RolloutBatch& batch, const Vector& advantages) {
  if (advantages.size() != static_cast<Eigen::Index>(batch.high.size())) {
    throw ShapeError("assign_auxiliary_rewards: one advantage per high transition required");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < batch.high.size(); ++i) {
    const auto& h = batch.high[i];
    if (h.seg_len < 1) throw InvariantError("assign_auxiliary_rewards: empty segment");
    const double a = advantages[static_cast<Eigen::Index>(i)];
    const double share = a / h.seg_len;
    double sum = 0.0;
    for (int j = 0; j < h.seg_len; ++j) {
      auto& l = batch.low[static_cast<std::size_t>(h.first_low + j)];
      if (l.segment_id != static_cast<int>(i)) throw InvariantError("assign_auxiliary_rewards: segment mismatch");
      l.r_l = share;
      sum += share;
    }
    worst = std::max(worst, std::abs(sum - a));
  }
  if (!(worst <= kConservationTolerance)) {
    throw InvariantError("auxiliary rewards do not sum to the high-level advantage (residual " +
                         std::to_string(worst) + ")");
  }
  return worst;
}

LevelBatches prepare_level_batches(const RolloutBatch& batch, const Vector& high_advantages, double gamma_l,
                                   const PolynomialValueEstimator& v_l, const Policy& pi_h, const Policy& pi_l) {
  LevelBatches out;
  Matrix sh = high_states(batch);
  Matrix ah(1, sh.cols());
  for (std::size_t i = 0; i < batch.high.size(); ++i) ah(0, static_cast<Eigen::Index>(i)) = batch.high[i].a_h;
  out.high = make_advantage_batch(pi_h, std::move(sh), std::move(ah), high_advantages);

  Matrix sl = low_states(batch);
  std::vector<Vector> acts;
  acts.reserve(batch.low.size());
  for (const auto& l : batch.low) acts.push_back(l.a_l);
  Matrix al = stack_columns(acts);
  Vector adv = low_level_returns(batch, gamma_l) - v_l.predict_batch(sl);
  out.low = make_advantage_batch(pi_l, std::move(sl), std::move(al), std::move(adv));
  return out;
}

void HaarConfig::validate() const {
  if (n_skills < 1) throw ConfigError("n_skills must be >= 1");
  if (!(gamma_h > 0.0 && gamma_h <= 1.0)) throw ConfigError("gamma_h must be in (0, 1]");
  if (!(gamma_l > 0.0 && gamma_l <= 1.0)) throw ConfigError("gamma_l must be in (0, 1]");
  if (batch_low_steps < 1) throw ConfigError("batch size B must be >= 1");
  if (ridge < 0.0) throw ConfigError("ridge must be >= 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  trpo_high.validate();
  trpo_low.validate();
}

TrainingState make_training_state(const HaarConfig& cfg, const env::Environment& env, GaussianPolicy pi_l,
                                  SkillSchedule schedule, Rng& init_rng) {
  cfg.validate();
  schedule.validate();
  if (pi_l.obs_dim() != env.low_obs_dim() + static_cast<std::size_t>(cfg.n_skills)) {
    throw ShapeError("make_training_state: pi_l input must be s^l plus one-hot skill");
  }
  MlpSpec spec;
  spec.input_dim = env.high_obs_dim();
  spec.output_dim = static_cast<std::size_t>(cfg.n_skills);
  CategoricalPolicy pi_h(spec);
  pi_h.initialize(init_rng);
  auto v_h = PolynomialValueEstimator::zeros(env.high_obs_dim());
  auto v_l = PolynomialValueEstimator::zeros(pi_l.obs_dim());
  return TrainingState{std::move(pi_h), std::move(pi_l), std::move(v_h), std::move(v_l), schedule, 0};
}

IterationMetrics haar_iteration(TrainingState& state, const HaarConfig& cfg, const env::Environment& env,
                                RolloutBatch* batch_out) {
  IterationMetrics m;
  m.iteration = state.schedule.iteration + 1;
  m.k = state.schedule.current_k();

  bool do_high = cfg.update_high;
  bool do_low = cfg.update_low;
  if (cfg.mode == TrainingMode::alternate) {
    const bool odd = (m.iteration % 2) == 1;
    do_high = do_high && odd;
    do_low = do_low && !odd;
  }

  RolloutOptions opts;
  opts.seed = cfg.seed;
  opts.stream = static_cast<std::uint64_t>(state.schedule.iteration);
  opts.workers = cfg.workers;
  RolloutBatch batch = collect_rollouts(state.pi_h, state.pi_l, env, cfg.batch_low_steps, m.k, opts);

  const Vector adv_h = estimate_high_advantages(batch, state.v_h, cfg.gamma_h);
  m.max_conservation_error = assign_auxiliary_rewards(batch, adv_h);
  LevelBatches lb = prepare_level_batches(batch, adv_h, cfg.gamma_l, state.v_l, state.pi_h, state.pi_l);

  if (do_high) {
    m.high = trpo_update(state.pi_h, lb.high, cfg.trpo_high);
    m.high_updated = true;
  }
  if (do_low) {
    m.low = trpo_update(state.pi_l, lb.low, cfg.trpo_low);
    m.low_updated = true;
  }

  state.v_h = fit_value(lb.high.observations, high_level_returns(batch, cfg.gamma_h), cfg.ridge);
  state.v_l = fit_value(lb.low.observations, low_level_returns(batch, cfg.gamma_l), cfg.ridge);

  state.low_steps_total += batch.total_low_steps();
  m.low_steps_total = state.low_steps_total;
  m.success_rate = batch.success_rate();
  m.mean_return = batch.mean_return();
  state.schedule.advance();
  if (batch_out) *batch_out = std::move(batch);
  return m;
}

}  // namespace haar
