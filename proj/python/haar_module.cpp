#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "haar/experiment.hpp"
#include "haar/theory.hpp"

namespace py = pybind11;
using namespace haar;

namespace {

py::dict metrics_dict(const IterationMetrics& m) {
  py::dict d;
  d["iteration"] = m.iteration;
  d["low_steps_total"] = m.low_steps_total;
  d["k"] = m.k;
  d["success_rate"] = m.success_rate;
  d["mean_return"] = m.mean_return;
  d["high_kl"] = m.high.kl;
  d["low_kl"] = m.low.kl;
  d["high_accepted"] = m.high_updated && m.high.accepted;
  d["low_accepted"] = m.low_updated && m.low.accepted;
  d["high_surr_improve"] = m.high.improvement();
  d["low_surr_improve"] = m.low.improvement();
  d["max_conservation_error"] = m.max_conservation_error;
  return d;
}

py::list records(const std::vector<RunRecord>& runs) {
  py::list out;
  for (const auto& r : runs) {
    py::dict d;
    d["seed"] = r.seed;
    d["config_hash"] = r.config_hash;
    d["directory"] = r.directory.string();
    py::list m;
    for (const auto& row : r.metrics) m.append(metrics_dict(row));
    d["metrics"] = m;
    out.append(d);
  }
  return out;
}

/// P as an (S*A) x S matrix with row s*A + a, R as S x A.
env::TabularMdp make_mdp(const Matrix& p, const Matrix& r, const Vector& rho, const std::vector<bool>& terminal) {
  env::TabularMdp mdp;
  mdp.n_states = static_cast<std::size_t>(r.rows());
  mdp.n_actions = static_cast<std::size_t>(r.cols());
  if (p.rows() != r.rows() * r.cols() || p.cols() != r.rows()) {
    throw ShapeError("P must be (S*A) x S with R of shape S x A");
  }
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j) mdp.transition.push_back(p(i, j));
  for (Eigen::Index s = 0; s < r.rows(); ++s)
    for (Eigen::Index a = 0; a < r.cols(); ++a) mdp.reward.push_back(r(s, a));
  mdp.initial.assign(rho.data(), rho.data() + rho.size());
  mdp.terminal = terminal.empty() ? std::vector<bool>(mdp.n_states, false) : terminal;
  mdp.validate();
  return mdp;
}

theory::TabularJointPolicy make_policy(const Matrix& pi_h, const std::vector<Matrix>& pi_l, int k, double gamma_h,
                                       double gamma_l) {
  theory::TabularJointPolicy jp{pi_h, pi_l, k, gamma_h, gamma_l};
  jp.validate();
  return jp;
}

}  // namespace

PYBIND11_MODULE(haar, m) {
  m.doc() = "Hierarchical RL with advantage-based auxiliary rewards";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<InvariantError>(m, "InvariantError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init<>())
      .def_static("from_text", &parse_config, py::arg("text"))
      .def_static("load", [](const std::string& path) { return load_config(path); }, py::arg("path"))
      .def("set", &set_config_value, py::arg("key"), py::arg("value"))
      .def("to_text", [](const ExperimentConfig& c) { return to_text(c); })
      .def("hash", [](const ExperimentConfig& c) { return config_hash(c); })
      .def("validate", [](const ExperimentConfig& c) { c.resolved().validate(); })
      .def_readwrite("N", &ExperimentConfig::N)
      .def_readwrite("B", &ExperimentConfig::B)
      .def_readwrite("T", &ExperimentConfig::T)
      .def_readwrite("k_0", &ExperimentConfig::k_0)
      .def_readwrite("k_s", &ExperimentConfig::k_s)
      .def_readwrite("gamma_h", &ExperimentConfig::gamma_h)
      .def_readwrite("gamma_l", &ExperimentConfig::gamma_l)
      .def_readwrite("seeds", &ExperimentConfig::seeds)
      .def_readwrite("workers", &ExperimentConfig::workers)
      .def_readwrite("maze", &ExperimentConfig::maze)
      .def_readwrite("skills", &ExperimentConfig::skills)
      .def_property(
          "algorithm", [](const ExperimentConfig& c) { return to_string(c.algorithm); },
          [](ExperimentConfig& c, const std::string& v) { c.algorithm = parse_algorithm(v); })
      .def_property(
          "mode", [](const ExperimentConfig& c) { return to_string(c.mode); },
          [](ExperimentConfig& c, const std::string& v) { c.mode = parse_training_mode(v); })
      .def_property_readonly("task", [](const ExperimentConfig& c) { return to_string(c.task); });

  m.def("default_config", [](const std::string& task) { return ExperimentConfig::defaults(parse_task(task)); },
        py::arg("task") = "point_maze");

  m.def(
      "train",
      [](const ExperimentConfig& cfg, const std::string& out) {
        const auto runs = [&] {
          py::gil_scoped_release release;
          return run_train(cfg, out);
        }();
        return records(runs);
      },
      py::arg("config"), py::arg("out") = "", "Trains every seed; returns one record per seed.");

  m.def(
      "transfer",
      [](const ExperimentConfig& cfg, const std::string& source, const std::string& mode, const std::string& out) {
        const TransferMode tm = parse_transfer_mode(mode);
        const Checkpoint ck = tm == TransferMode::none ? Checkpoint{} : load_checkpoint(source);
        const auto runs = [&] {
          py::gil_scoped_release release;
          return run_transfer(cfg, ck, tm, out);
        }();
        return records(runs);
      },
      py::arg("config"), py::arg("source"), py::arg("mode") = "both", py::arg("out") = "");

  m.def(
      "pretrain",
      [](const ExperimentConfig& cfg, const std::string& path) {
        py::gil_scoped_release release;
        return run_pretrain(cfg, path).mean_proxy_return;
      },
      py::arg("config"), py::arg("path"), "Pre-trains skills, saves them, returns the per-iteration proxy return.");

  m.def(
      "report",
      [](const std::vector<std::string>& metrics_files) {
        std::vector<std::vector<IterationMetrics>> runs;
        for (const auto& f : metrics_files) runs.push_back(read_metrics_csv(f));
        return report_csv(run_report(runs));
      },
      py::arg("metrics_files"), "report.csv text for a set of metrics.csv files.");

  m.def("proxy_reward",
        [](int skill, double dx, double dy, int n_skills) { return proxy_reward(skill, env::Vec2(dx, dy), n_skills); },
        py::arg("skill"), py::arg("dx"), py::arg("dy"), py::arg("n_skills"));

  m.def(
      "skill_length",
      [](int k_0, double tau, int k_s, int iteration) { return SkillSchedule{k_0, tau, k_s, 0}.k_at(iteration); },
      py::arg("k_0"), py::arg("tau"), py::arg("k_s"), py::arg("iteration"));

  m.def(
      "maze_text", [](const std::string& kind) { return env::to_text(env::build_maze(env::parse_maze_kind(kind))); },
      py::arg("kind"));

  auto th = m.def_submodule("theory", "Exact tabular quantities");
  th.def(
      "eta",
      [](const Matrix& p, const Matrix& r, const Vector& rho, const std::vector<bool>& terminal, const Matrix& pi_h,
         const std::vector<Matrix>& pi_l, int k, double gamma_h) {
        return theory::exact_eta(make_mdp(p, r, rho, terminal), make_policy(pi_h, pi_l, k, gamma_h, gamma_h));
      },
      py::arg("P"), py::arg("R"), py::arg("rho"), py::arg("terminal"), py::arg("pi_h"), py::arg("pi_l"), py::arg("k"),
      py::arg("gamma_h"));
  th.def(
      "lemma4_residual",
      [](const Matrix& p, const Matrix& r, const Vector& rho, const std::vector<bool>& terminal, const Matrix& pi_h_old,
         const std::vector<Matrix>& pi_l_old, const Matrix& pi_h_new, const std::vector<Matrix>& pi_l_new, int k,
         double gamma_h) {
        const auto mdp = make_mdp(p, r, rho, terminal);
        return theory::lemma4_residual(mdp, make_policy(pi_h_old, pi_l_old, k, gamma_h, gamma_h),
                                       make_policy(pi_h_new, pi_l_new, k, gamma_h, gamma_h));
      },
      py::arg("P"), py::arg("R"), py::arg("rho"), py::arg("terminal"), py::arg("pi_h_old"), py::arg("pi_l_old"),
      py::arg("pi_h_new"), py::arg("pi_l_new"), py::arg("k"), py::arg("gamma_h"));
  th.def(
      "lemma3_relative_error",
      [](const Matrix& p, const Matrix& r, const Vector& rho, const std::vector<bool>& terminal, const Matrix& pi_h_old,
         const std::vector<Matrix>& pi_l_old, const Matrix& pi_h_new, const std::vector<Matrix>& pi_l_new, int k,
         double gamma_h, double gamma_l) {
        const auto mdp = make_mdp(p, r, rho, terminal);
        return theory::lemma3_relative_error(mdp, make_policy(pi_h_old, pi_l_old, k, gamma_h, gamma_l),
                                             make_policy(pi_h_new, pi_l_new, k, gamma_h, gamma_l), gamma_l);
      },
      py::arg("P"), py::arg("R"), py::arg("rho"), py::arg("terminal"), py::arg("pi_h_old"), py::arg("pi_l_old"),
      py::arg("pi_h_new"), py::arg("pi_l_new"), py::arg("k"), py::arg("gamma_h"), py::arg("gamma_l"));
  th.def(
      "run_checks",
      [](std::uint64_t seed, int instances) {
        py::list out;
        for (const auto& r : theory::run_theory_checks(seed, instances)) {
          py::dict d;
          d["check"] = r.check;
          d["instance"] = r.instance;
          d["param"] = r.param;
          d["value"] = r.value;
          d["tolerance"] = r.tolerance;
          d["pass"] = r.pass;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0, py::arg("instances") = 100);
}
