#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

#include "haar/experiment.hpp"
#include "haar/theory.hpp"

namespace fs = std::filesystem;
using namespace haar;

namespace {

struct CommonOptions {
  std::string config;
  std::string seeds;
  std::string out;
  std::string mode;
  int workers = 0;
  std::vector<std::string> settings;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool needs_config) {
  auto* c = cmd->add_option("--config", o.config, "Experiment config file (key = value lines)");
  if (needs_config) c->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seeds, "Seed or list, e.g. 0 or 0,1,2 or 0-4");
  cmd->add_option("--out", o.out, "Output directory")->required();
  cmd->add_option("--mode", o.mode, "Training mode")->check(CLI::IsMember({"concurrent", "alternate"}));
  cmd->add_option("--workers", o.workers, "Rollout workers (results do not depend on it)")->check(CLI::PositiveNumber);
  cmd->add_option("--set", o.settings, "Override a config key: --set key=value (repeatable)");
}

ExperimentConfig load(const CommonOptions& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  for (const auto& kv : o.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    set_config_value(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  if (!o.seeds.empty()) cfg.seeds = parse_seed_list(o.seeds);
  if (!o.mode.empty()) cfg.mode = parse_training_mode(o.mode);
  if (o.workers > 0) cfg.workers = cfg.pretrain.workers = o.workers;
  cfg.resolved().validate();
  return cfg;
}

void print_summary(const std::vector<RunRecord>& runs) {
  for (const auto& r : runs) {
    const IterationMetrics& last = r.metrics.back();
    std::cout << "seed " << r.seed << ": final success " << last.success_rate << ", return " << last.mean_return
              << ", low steps " << last.low_steps_total << " -> " << r.directory.string() << "\n";
  }
}

int cmd_pretrain(const CommonOptions& o) {
  ExperimentConfig cfg = load(o);
  if (!o.seeds.empty()) {
    if (cfg.seeds.size() != 1) throw ConfigError("pretrain takes a single seed");
    cfg.pretrain.seed = cfg.seeds.front();
  }
  const fs::path out = o.out;
  fs::create_directories(out);
  const PretrainResult res = run_pretrain(cfg, out / "skills.bin");
  std::ostringstream log;
  log << "iteration,mean_proxy_return\n";
  for (std::size_t i = 0; i < res.mean_proxy_return.size(); ++i) {
    log << i + 1 << ',' << res.mean_proxy_return[i] << '\n';
  }
  write_file(out / "pretrain.csv", log.str());

  const ExperimentConfig r = cfg.resolved();
  const auto disp = skill_displacements(res.pi_l, r.n_skills, 5, r.pretrain.path_length, r.pretrain.seed + 1,
                                        r.pretrain.dynamics);
  std::ostringstream sk;
  sk << "skill,dx,dy\n";
  for (std::size_t j = 0; j < disp.size(); ++j) sk << j << ',' << disp[j].x() << ',' << disp[j].y() << '\n';
  write_file(out / "skills.csv", sk.str());
  std::cout << "skills written to " << (out / "skills.bin").string() << "\n";
  return 0;
}

int cmd_train(const CommonOptions& o) {
  print_summary(run_train(load(o), o.out));
  return 0;
}

int cmd_transfer(const CommonOptions& o, const std::string& source, const std::string& mode) {
  const ExperimentConfig cfg = load(o);
  const TransferMode tm = parse_transfer_mode(mode);
  Checkpoint ck;
  if (tm != TransferMode::none) {
    if (source.empty()) throw ConfigError("--source is required unless --transfer none");
    ck = load_checkpoint(source);
  }
  print_summary(run_transfer(cfg, ck, tm, o.out));
  return 0;
}

int cmd_theory(std::uint64_t seed, int instances, const std::string& out) {
  const auto rows = theory::run_theory_checks(seed, instances);
  const fs::path dir = out;
  fs::create_directories(dir);
  write_file(dir / "theory_check.csv", theory::check_rows_csv(rows));
  std::map<std::string, std::pair<int, int>> tally;
  for (const auto& r : rows) {
    auto& [pass, total] = tally[r.check];
    pass += r.pass ? 1 : 0;
    ++total;
  }
  bool ok = true;
  for (const auto& [name, t] : tally) {
    std::cout << name << ": " << t.first << "/" << t.second << " passed\n";
    ok = ok && t.first == t.second;
  }
  return ok ? 0 : 1;
}

std::vector<fs::path> metrics_files(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    const fs::path p = in;
    if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else if (fs::is_regular_file(p / "metrics.csv")) {
      files.push_back(p / "metrics.csv");
    } else if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_directory() && fs::is_regular_file(e.path() / "metrics.csv")) found.push_back(e.path() / "metrics.csv");
      }
      if (found.empty()) throw ConfigError("no metrics.csv under " + p.string());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      throw ConfigError("report input not found: " + p.string());
    }
  }
  return files;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out, double threshold) {
  std::vector<std::vector<IterationMetrics>> runs;
  for (const auto& f : metrics_files(inputs)) {
    runs.push_back(read_metrics_csv(f));
    const auto it = iterations_to_success(runs.back(), threshold);
    std::cout << f.string() << ": final success " << (runs.back().empty() ? 0.0 : runs.back().back().success_rate)
              << ", iterations to " << threshold << ": " << (it ? std::to_string(*it) : std::string("never")) << "\n";
  }
  const fs::path path = out;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, report_csv(run_report(runs)));
  std::cout << "report written to " << path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical RL with advantage-based auxiliary rewards"};
  app.require_subcommand(1);

  CommonOptions pre, train, transfer;
  auto* c_pre = app.add_subcommand("pretrain", "Pre-train skills in the open field");
  add_common(c_pre, pre, true);
  auto* c_train = app.add_subcommand("train", "Train on a task for every seed");
  add_common(c_train, train, true);
  auto* c_transfer = app.add_subcommand("transfer", "Train on a target maze starting from a checkpoint");
  add_common(c_transfer, transfer, true);
  std::string source, transfer_mode = "both";
  c_transfer->add_option("--source", source, "Checkpoint of the source run")->check(CLI::ExistingFile);
  c_transfer->add_option("--transfer", transfer_mode, "What to transfer")
      ->check(CLI::IsMember({"both", "low_only", "none"}));

  auto* c_theory = app.add_subcommand("theory-check", "Exact tabular checks of the theory");
  std::uint64_t theory_seed = 0;
  int instances = 100;
  std::string theory_out;
  c_theory->add_option("--seed", theory_seed, "Seed of the random instances");
  c_theory->add_option("--instances", instances, "Random instances for the Lemma 4 check")->check(CLI::PositiveNumber);
  c_theory->add_option("--out", theory_out, "Output directory")->required();

  auto* c_report = app.add_subcommand("report", "Aggregate metrics across runs");
  std::vector<std::string> inputs;
  std::string report_out;
  double threshold = 0.5;
  c_report->add_option("inputs", inputs, "Run directories, parent directories of seed_* runs, or metrics.csv files")
      ->required();
  c_report->add_option("--out", report_out, "report.csv path")->required();
  c_report->add_option("--threshold", threshold, "Success level for the iterations-to-success column")
      ->check(CLI::Range(0.0, 1.0));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_pre) return cmd_pretrain(pre);
    if (*c_train) return cmd_train(train);
    if (*c_transfer) return cmd_transfer(transfer, source, transfer_mode);
    if (*c_theory) return cmd_theory(theory_seed, instances, theory_out);
    if (*c_report) return cmd_report(inputs, report_out, threshold);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 1;
  } catch (const InvariantError& e) {
    std::cerr << "invariant violated: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
