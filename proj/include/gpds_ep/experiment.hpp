#pragma once

// Benchmark harness: generates data for a seed, trains the GPDS, runs the
// requested smoothers and aggregates metrics over runs.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gpds_ep/benchmark_systems.hpp"
#include "gpds_ep/ep_smoother.hpp"
#include "gpds_ep/io.hpp"
#include "gpds_ep/kalman.hpp"
#include "gpds_ep/metrics.hpp"

namespace gpds {

inline constexpr int kReportSchemaVersion = 1;

enum class Method { EKS, EP_EKS, GPEKS, EP_GPEKS, GPADS, EP_GPADS };

inline const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods = {Method::EKS,      Method::EP_EKS, Method::GPEKS,
                                              Method::EP_GPEKS, Method::GPADS,  Method::EP_GPADS};
  return methods;
}

inline std::string method_name(Method m) {
  switch (m) {
    case Method::EKS: return "EKS";
    case Method::EP_EKS: return "EP-EKS";
    case Method::GPEKS: return "GPEKS";
    case Method::EP_GPEKS: return "EP-GPEKS";
    case Method::GPADS: return "GPADS";
    case Method::EP_GPADS: return "EP-GPADS";
  }
  return "?";
}

inline Method parse_method(const std::string& name) {
  for (Method m : all_methods())
    if (method_name(m) == name) return m;
  throw ConfigError("unknown method '" + name + "' (expected EKS, EP-EKS, GPEKS, EP-GPEKS, GPADS or EP-GPADS)");
}

inline bool is_iterated(Method m) { return m == Method::EP_EKS || m == Method::EP_GPEKS || m == Method::EP_GPADS; }
inline bool uses_gp(Method m) { return m != Method::EKS && m != Method::EP_EKS; }
inline bool uses_linearization(Method m) { return m != Method::GPADS && m != Method::EP_GPADS; }

struct ExperimentConfig {
  std::string system = "sine";  ///< sine | pendulum | linear | path to a trajectory CSV
  std::vector<std::string> methods = {"EKS", "EP-EKS", "GPEKS", "EP-GPEKS", "GPADS", "EP-GPADS"};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  long T = 20;
  EPOptions ep;
  std::string out;         ///< output directory; empty writes nothing
  std::string model_path;  ///< optional GPDS model JSON used instead of training
  bool deterministic = false;
  double allowed_failure_fraction = 0.5;
  long training_points = 30;
  int fit_iters = 300;
  long linear_dim = 2;

  bool is_file_system() const { return system != "sine" && system != "pendulum" && system != "linear"; }

  void validate() const {
    if (methods.empty()) throw ConfigError("experiment: no methods given");
    for (const auto& m : methods) parse_method(m);
    if (seeds.empty() && !is_file_system()) throw ConfigError("experiment: no seeds given");
    if (T < 1) throw ConfigError("experiment: T must be >= 1");
    if (!(allowed_failure_fraction >= 0.0 && allowed_failure_fraction <= 1.0))
      throw ConfigError("experiment: allowed failure fraction must be in [0, 1]");
    if (training_points < 0) throw ConfigError("experiment: negative training size");
    if (linear_dim < 1) throw ConfigError("experiment: linear_dim must be >= 1");
    ep.validate();
    if (is_file_system()) {
      if (!std::filesystem::exists(system)) throw ConfigError("experiment: no such system or file '" + system + "'");
      for (const auto& m : methods)
        if (!uses_gp(parse_method(m))) throw ConfigError("experiment: " + m + " needs a simulated system");
      if (model_path.empty()) throw ConfigError("experiment: a trajectory file needs --model");
    }
  }
};

struct RunRecord {
  std::string method;
  std::uint64_t seed = 0;
  long run = 0;  ///< trajectory index within the seed
  bool failed = false;
  std::string failure;
  double nll_x = 0.0;
  double mae_x = 0.0;
  double nll_z = 0.0;
  double nll_z_posterior = 0.0;
  double seconds = 0.0;
  double rts_error = -1.0;  ///< linear systems only: max deviation from RTS
  EPDiagnostics diagnostics;
  std::vector<Gaussian> marginals;
  Matrix truth;
};

struct MethodSummary {
  std::string method;
  MeanAndError nll_x;
  MeanAndError mae_x;
  MeanAndError nll_z;
  MeanAndError nll_z_posterior;
  int runs = 0;
  int failures = 0;
  double seconds = 0.0;
  bool failure_limit_exceeded = false;
};

struct MetricsReport {
  ExperimentConfig config;
  std::vector<MethodSummary> methods;
  std::vector<RunRecord> runs;
  std::optional<bool> exact;  ///< linear self-test: every method within 1e-6 of RTS

  int exit_code() const {
    for (const auto& m : methods)
      if (m.failure_limit_exceeded) return 2;
    return 0;
  }
};

namespace detail {

/// One seed's data: test trajectories plus whatever models the methods need.
struct SeedData {
  std::uint64_t seed = 0;
  std::vector<Trajectory> tests;
  std::optional<GPDSModel> gpds;
  std::optional<ParametricModel> parametric;
  std::optional<LinearGaussianModel> linear;
};

inline SeedData prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed, bool need_gp) {
  SeedData data;
  data.seed = seed;
  std::optional<GPDSModel> loaded;
  if (!cfg.model_path.empty() && need_gp) loaded = load_model(cfg.model_path);
  if (cfg.system == "sine") {
    const SineSystem sys;
    data.tests.push_back(simulate_sine(derive_seed(seed, 2), cfg.T, sys));
    data.parametric = sys.parametric();
    if (loaded) data.gpds = loaded;
    else if (need_gp)
      data.gpds = train_gpds(sine_training_set(derive_seed(seed, 1), cfg.training_points, sys), sys.prior(),
                             cfg.fit_iters);
  } else if (cfg.system == "pendulum") {
    const PendulumSystem sys;
    data.tests = pendulum_trajectories(seed, true, sys, cfg.T);
    data.parametric = sys.parametric();
    if (loaded) data.gpds = loaded;
    else if (need_gp) data.gpds = train_gpds(pendulum_training_set(seed, sys), sys.prior(), cfg.fit_iters);
  } else if (cfg.system == "linear") {
    data.linear = random_linear_system(derive_seed(seed, 3), cfg.linear_dim);
    data.tests.push_back(simulate_linear(*data.linear, derive_seed(seed, 4), cfg.T));
  } else {
    data.tests.push_back(load_trajectory(cfg.system));
    data.gpds = loaded;
  }
  return data;
}

inline double max_deviation(const std::vector<Gaussian>& a, const std::vector<Gaussian>& b) {
  double worst = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    worst = std::max(worst, (a[t].mean() - b[t].mean()).cwiseAbs().maxCoeff());
    worst = std::max(worst, (a[t].cov() - b[t].cov()).cwiseAbs().maxCoeff());
  }
  return worst;
}

inline RunRecord run_one(const ExperimentConfig& cfg, const SeedData& data, long run, Method method) {
  RunRecord rec;
  rec.method = method_name(method);
  rec.seed = data.seed;
  rec.run = run;
  const Trajectory& traj = data.tests[static_cast<std::size_t>(run)];
  EPOptions opts = cfg.ep;
  if (!is_iterated(method)) opts.max_iters = 1;
  opts.method = uses_linearization(method) ? PredictMethod::linearization() : PredictMethod::moment_matching();

  const auto start = std::chrono::steady_clock::now();
  try {
    EPResult result;
    if (data.linear) {
      // Every method reduces to exact Gaussian propagation on a linear system.
      result = ep_smooth(make_state_space(*data.linear), traj.Z, traj.U, opts, traj.X);
      rec.rts_error = max_deviation(result.marginals, rts_smooth(*data.linear, traj.Z).smoothed);
    } else if (uses_gp(method)) {
      result = ep_smooth(*data.gpds, traj.Z, traj.U, opts, traj.X);
    } else {
      result = ep_smooth(make_state_space(*data.parametric), traj.Z, traj.U, opts, traj.X);
    }
    rec.diagnostics = result.diagnostics;
    rec.nll_x = metric_nll_x(result.marginals, traj.X);
    rec.mae_x = metric_mae_x(result.marginals, traj.X);
    rec.nll_z = metric_nll_z(result.predictives, traj.Z);
    rec.nll_z_posterior = metric_nll_z(result.posterior_predictives, traj.Z);
    rec.marginals = std::move(result.marginals);
    rec.truth = traj.X;
    const auto& d = rec.diagnostics;
    if (2 * d.skipped_total > d.attempted_total) {
      rec.failed = true;
      rec.failure = "more than half of the site updates were skipped";
    } else if (!std::isfinite(rec.nll_x) || !std::isfinite(rec.mae_x) || !std::isfinite(rec.nll_z)) {
      rec.failed = true;
      rec.failure = "non-finite metric";
    }
  } catch (const Error& e) {
    rec.failed = true;
    rec.failure = e.what();
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

inline unsigned worker_count(bool deterministic, std::size_t tasks) {
  if (deterministic) return 1;
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* cap = std::getenv("GPDS_EP_THREADS")) {
    const long v = std::strtol(cap, nullptr, 10);
    if (v >= 1) n = std::min(n, static_cast<unsigned>(v));
  }
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(tasks, 1)));
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Exceptions are
/// rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

inline MethodSummary summarize(const std::string& method, const std::vector<RunRecord>& runs,
                               double allowed_failure_fraction) {
  MethodSummary s;
  s.method = method;
  std::vector<double> nll_x, mae_x, nll_z, nll_z_post;
  for (const auto& r : runs) {
    if (r.method != method) continue;
    ++s.runs;
    s.seconds += r.seconds;
    if (r.failed) {
      ++s.failures;
      continue;
    }
    nll_x.push_back(r.nll_x);
    mae_x.push_back(r.mae_x);
    nll_z.push_back(r.nll_z);
    nll_z_post.push_back(r.nll_z_posterior);
  }
  s.nll_x = mean_and_standard_error(nll_x);
  s.mae_x = mean_and_standard_error(mae_x);
  s.nll_z = mean_and_standard_error(nll_z);
  s.nll_z_posterior = mean_and_standard_error(nll_z_post);
  s.failure_limit_exceeded =
      s.runs > 0 && static_cast<double>(s.failures) > allowed_failure_fraction * static_cast<double>(s.runs);
  return s;
}

/// Run the whole experiment. Errors inside a run are recorded as failures.
inline MetricsReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<Method> methods;
  for (const auto& m : cfg.methods) methods.push_back(parse_method(m));
  const bool need_gp = std::any_of(methods.begin(), methods.end(), uses_gp) && cfg.system != "linear";

  std::vector<std::uint64_t> seeds = cfg.seeds;
  if (cfg.is_file_system()) seeds = {0};
  std::vector<detail::SeedData> data(seeds.size());
  const unsigned workers = detail::worker_count(cfg.deterministic, seeds.size());
  detail::parallel_for(seeds.size(), workers,
                       [&](std::size_t i) { data[i] = detail::prepare_seed(cfg, seeds[i], need_gp); });

  struct Task {
    std::size_t seed_index;
    long run;
    Method method;
  };
  std::vector<Task> tasks;
  for (std::size_t i = 0; i < data.size(); ++i)
    for (long r = 0; r < static_cast<long>(data[i].tests.size()); ++r)
      for (Method m : methods) tasks.push_back({i, r, m});

  MetricsReport report;
  report.config = cfg;
  report.runs.resize(tasks.size());
  detail::parallel_for(tasks.size(), detail::worker_count(cfg.deterministic, tasks.size()), [&](std::size_t k) {
    const Task& task = tasks[k];
    report.runs[k] = detail::run_one(cfg, data[task.seed_index], task.run, task.method);
  });

  for (const auto& m : cfg.methods) report.methods.push_back(summarize(m, report.runs, cfg.allowed_failure_fraction));
  if (cfg.system == "linear") {
    bool exact = true;
    for (const auto& r : report.runs) exact = exact && !r.failed && r.rts_error >= 0.0 && r.rts_error <= 1e-6;
    report.exact = exact;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report output

inline Json config_to_json(const ExperimentConfig& c) {
  return {{"system", c.system},
          {"methods", c.methods},
          {"seeds", c.seeds},
          {"T", c.T},
          {"max_iters", c.ep.max_iters},
          {"tol", c.ep.tol},
          {"damping", c.ep.damping},
          {"deterministic", c.deterministic},
          {"allowed_failure_fraction", c.allowed_failure_fraction},
          {"training_points", c.training_points},
          {"fit_iters", c.fit_iters},
          {"model", c.model_path}};
}

inline Json report_to_json(const MetricsReport& report) {
  auto stat = [](const MeanAndError& m) { return Json{{"mean", m.mean}, {"se", m.standard_error}, {"n", m.count}}; };
  Json methods = Json::array();
  for (const auto& s : report.methods)
    methods.push_back({{"method", s.method},
                       {"nll_x", stat(s.nll_x)},
                       {"mae_x", stat(s.mae_x)},
                       {"nll_z", stat(s.nll_z)},
                       {"nll_z_posterior", stat(s.nll_z_posterior)},
                       {"runs", s.runs},
                       {"failures", s.failures},
                       {"failure_limit_exceeded", s.failure_limit_exceeded},
                       {"wall_seconds", s.seconds}});
  Json runs = Json::array();
  for (const auto& r : report.runs) {
    Json j = {{"method", r.method},   {"seed", r.seed},     {"run", r.run},
              {"failed", r.failed},   {"failure", r.failure}, {"nll_x", r.nll_x},
              {"mae_x", r.mae_x},     {"nll_z", r.nll_z},   {"nll_z_posterior", r.nll_z_posterior}, {"wall_seconds", r.seconds},
              {"diagnostics", diagnostics_to_json(r.diagnostics)}};
    if (r.rts_error >= 0.0) j["rts_max_deviation"] = r.rts_error;
    runs.push_back(std::move(j));
  }
  Json out = {{"schema_version", kReportSchemaVersion},
              {"config", config_to_json(report.config)},
              {"methods", methods},
              {"runs", runs}};
  if (report.exact) out["exact"] = *report.exact;
  return out;
}

inline std::string run_file_name(const RunRecord& r) {
  return r.method + "_seed" + std::to_string(r.seed) + "_run" + std::to_string(r.run) + ".csv";
}

/// report.json plus runs/<method>_seed<s>_run<k>.csv for every completed run.
inline void write_report(const MetricsReport& report, const std::filesystem::path& dir) {
  detail::write_text(dir / "report.json", dump_json(report_to_json(report)));
  for (const auto& r : report.runs) {
    if (r.marginals.empty()) continue;
    detail::write_text(dir / "runs" / run_file_name(r), marginals_csv(r.marginals, &r.truth));
  }
}

}  // namespace gpds
