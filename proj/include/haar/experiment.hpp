#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "haar/env/environment.hpp"
#include "haar/hierarchy.hpp"
#include "haar/pretrain.hpp"

namespace haar {

enum class Task { point_maze, point_gather, swimmer_maze_lite };
enum class Algorithm { haar, haar_no_anneal, flat_trpo, frozen_skills };
enum class TransferMode { both, low_only, none };

Task parse_task(const std::string& name);
Algorithm parse_algorithm(const std::string& name);
TransferMode parse_transfer_mode(const std::string& name);
TrainingMode parse_training_mode(const std::string& name);
std::string to_string(Task task);
std::string to_string(Algorithm algorithm);
std::string to_string(TransferMode mode);
std::string to_string(TrainingMode mode);

/// Comma-separated integers and inclusive ranges, e.g. "0,2,5-7".
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

struct ExperimentConfig {
  Task task = Task::point_maze;
  Algorithm algorithm = Algorithm::haar;
  /// Iterations N and low steps per iteration B.
  int N = 300;
  long B = 5000;
  double gamma_h = 0.99;
  double gamma_l = 0.99;
  int k_0 = 100;
  int k_s = 10;
  /// Episode step limit T.
  int T = 500;
  /// Annealing temperature; unset means k reaches k_s halfway through training.
  std::optional<double> tau;
  int n_skills = 6;
  std::vector<std::uint64_t> seeds{0};
  TrainingMode mode = TrainingMode::concurrent;
  /// Maze kind name or path to a maze text file; empty means the task default.
  std::string maze;
  env::EnvConfig dynamics;
  TrpoConfig trpo;
  std::vector<std::size_t> hidden{32, 32};
  PretrainConfig pretrain;
  /// Pre-trained skills; required unless pretrain.proxy is random_init.
  std::string skills;
  int workers = 1;
  /// Episodes of the first and last iteration written to trajectories.csv.
  int trajectory_episodes = 10;
  /// Write a checkpoint every this many iterations (0: final only).
  int checkpoint_every = 0;
  /// Real elapsed seconds in metrics.csv. Off by default so reruns are byte-identical.
  bool record_wall_time = false;

  /// Paper defaults for the task, scaled to desk budgets.
  static ExperimentConfig defaults(Task task);

  /// haar_no_anneal pins k_0 to k_s; everything else is returned unchanged.
  ExperimentConfig resolved() const;
  double effective_tau() const;
  void validate() const;
};

/// `key = value` lines; '#' starts a comment. `task` (when present) selects
/// the defaults the remaining keys override. Unknown keys are rejected.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Applies one `key = value` setting with the same rules as parse_config.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
/// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& cfg);
/// FNV-1a over the canonical text with the seed list removed.
std::string config_hash(const ExperimentConfig& cfg);

/// Environment for the task, honouring the maze override.
std::unique_ptr<env::Environment> make_task_env(const ExperimentConfig& cfg);
env::MazeSpec task_maze(const ExperimentConfig& cfg);

HaarConfig haar_config(const ExperimentConfig& cfg, std::uint64_t seed);
SkillSchedule skill_schedule(const ExperimentConfig& cfg);

/// Non-hierarchical baseline: one Gaussian policy on s^h trained by TRPO on the
/// environment reward with a polynomial baseline.
struct FlatState {
  GaussianPolicy pi;
  PolynomialValueEstimator v;
  int iteration = 0;
  long low_steps_total = 0;
};

FlatState make_flat_state(const ExperimentConfig& cfg, const env::Environment& env, Rng& init_rng);
IterationMetrics flat_iteration(FlatState& state, const ExperimentConfig& cfg, const env::Environment& env,
                                std::uint64_t seed, RolloutBatch* batch_out = nullptr);

struct TrajectoryPoint {
  int iteration = 0;
  int episode = 0;
  int step = 0;
  double x = 0.0;
  double y = 0.0;
  int skill = 0;
};

struct RunRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<IterationMetrics> metrics;
  std::vector<TrajectoryPoint> trajectories;
  Checkpoint final_checkpoint;
  std::filesystem::path directory;
};

/// Initial policies for a run; unset fields fall back to the run_train rules.
struct PolicyOverrides {
  std::optional<ParamVector> pi_h;
  std::optional<ParamVector> pi_l;
  /// Fixed skill length for the whole run (no annealing).
  std::optional<int> fixed_k;
};

/// One seed. Writes metrics.csv, trpo_diagnostics.csv, trajectories.csv and
/// checkpoints under `out` when it is non-empty.
RunRecord run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& out,
                   const PolicyOverrides& overrides = {});

/// Every seed of the config, each in out/seed_<s>.
std::vector<RunRecord> run_train(const ExperimentConfig& cfg, const std::filesystem::path& out);

/// Trains on the config's (target) maze with a fixed skill length k_s,
/// starting from the source checkpoint according to `mode`.
std::vector<RunRecord> run_transfer(const ExperimentConfig& cfg, const Checkpoint& source, TransferMode mode,
                                    const std::filesystem::path& out);

/// Skills for a training seed: fresh for random_init, otherwise loaded from cfg.skills.
GaussianPolicy initial_skills(const ExperimentConfig& cfg, std::uint64_t seed);

/// Pre-trains skills per cfg.pretrain with the task's dynamics and saves them.
PretrainResult run_pretrain(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint_path);

Checkpoint training_checkpoint(const ExperimentConfig& cfg, std::uint64_t seed, int iteration,
                               const TrainingState& state);

struct ReportRow {
  int iteration = 0;
  double low_steps_total = 0.0;
  int n = 0;
  double success_mean = 0.0;
  double success_half_width = 0.0;
  double return_mean = 0.0;
  double return_half_width = 0.0;
};

/// Per-iteration mean and normal-approximation 95% band (1.96 s / sqrt(n),
/// sample standard deviation) across runs. Throws ConfigError when the runs
/// disagree on their iteration counts.
std::vector<ReportRow> run_report(const std::vector<std::vector<IterationMetrics>>& runs);

// CSV plumbing.
std::string metrics_csv(const std::vector<IterationMetrics>& rows, bool with_wall_time);
std::string diagnostics_csv(const std::vector<IterationMetrics>& rows);
std::string trajectories_csv(const std::vector<TrajectoryPoint>& points);
std::string report_csv(const std::vector<ReportRow>& rows);
std::vector<IterationMetrics> read_metrics_csv(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);
std::string read_file(const std::filesystem::path& path);

/// First iteration whose success rate reaches `threshold`, if any.
std::optional<int> iterations_to_success(const std::vector<IterationMetrics>& rows, double threshold);
/// Cumulative low steps at that iteration, if any.
std::optional<long> steps_to_success(const std::vector<IterationMetrics>& rows, double threshold);

}  // namespace haar
