#pragma once

// File formats: GPDS models as JSON, trajectories as CSV plus a JSON
// metadata sidecar, EP diagnostics as JSON.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gpds_ep/benchmark_systems.hpp"
#include "gpds_ep/ep_smoother.hpp"
#include "gpds_ep/errors.hpp"
#include "gpds_ep/gp_model.hpp"
#include "gpds_ep/state_space.hpp"

namespace gpds {

using Json = nlohmann::json;

inline constexpr int kModelSchemaVersion = 1;

namespace detail {

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (long i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (long j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& j, long cols_if_empty = 0) {
  if (!j.is_array()) throw FormatError("expected a matrix (array of rows)");
  if (j.empty()) return Matrix(0, cols_if_empty);
  const long rows = static_cast<long>(j.size());
  const long cols = static_cast<long>(j.at(0).size());
  Matrix m(rows, cols);
  for (long i = 0; i < rows; ++i) {
    const Json& row = j.at(static_cast<std::size_t>(i));
    if (!row.is_array() || static_cast<long>(row.size()) != cols) throw FormatError("ragged matrix");
    for (long k = 0; k < cols; ++k) m(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
  }
  return m;
}

inline Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (long i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Vector vector_from_json(const Json& j) {
  if (!j.is_array()) throw FormatError("expected a vector");
  Vector v(static_cast<long>(j.size()));
  for (long i = 0; i < v.size(); ++i) v(i) = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Json parse_json(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// GP models

inline Json gp_to_json(const TrainedGP& gp) {
  Json hypers = Json::array();
  for (long a = 0; a < gp.output_dim(); ++a) {
    const GPHyper& h = gp.hyper(a);
    hypers.push_back({{"lengthscales", detail::vector_to_json(h.lengthscales)},
                      {"signal_var", h.signal_var},
                      {"noise_var", h.noise_var}});
  }
  return {{"input_dim", gp.input_dim()},
          {"output_dim", gp.output_dim()},
          {"X", detail::matrix_to_json(gp.inputs())},
          {"Y", detail::matrix_to_json(gp.targets())},
          {"hyper", hypers}};
}

inline TrainedGP gp_from_json(const Json& j) {
  try {
    const long din = j.at("input_dim").get<long>();
    const long dout = j.at("output_dim").get<long>();
    Matrix X = detail::matrix_from_json(j.at("X"), din);
    Matrix Y = detail::matrix_from_json(j.at("Y"), dout);
    std::vector<GPHyper> hypers;
    for (const Json& h : j.at("hyper"))
      hypers.push_back({detail::vector_from_json(h.at("lengthscales")), h.at("signal_var").get<double>(),
                        h.at("noise_var").get<double>()});
    if (static_cast<long>(hypers.size()) != dout) throw FormatError("hyper count does not match output_dim");
    if (X.rows() == 0) X.resize(0, din);
    if (Y.rows() == 0) Y.resize(0, dout);
    return TrainedGP(X, Y, std::move(hypers));
  } catch (const Json::exception& e) {
    throw FormatError(std::string("GP model: ") + e.what());
  }
}

inline std::string dump_json(const Json& j) {
  // nlohmann prints the shortest representation that round-trips each double.
  return j.dump(2) + "\n";
}

inline Json model_to_json(const GPDSModel& model) {
  return {{"schema_version", kModelSchemaVersion},
          {"kind", "gpds"},
          {"transition", gp_to_json(model.gp_h)},
          {"measurement", gp_to_json(model.gp_g)},
          {"prior", {{"mean", detail::vector_to_json(model.prior.mean())},
                     {"cov", detail::matrix_to_json(model.prior.cov())}}}};
}

inline GPDSModel model_from_json(const Json& j) {
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kModelSchemaVersion)
      throw FormatError("unsupported model schema_version " + std::to_string(version));
    GPDSModel model{gp_from_json(j.at("transition")), gp_from_json(j.at("measurement")),
                    Gaussian(detail::vector_from_json(j.at("prior").at("mean")),
                             detail::matrix_from_json(j.at("prior").at("cov")))};
    model.validate();
    return model;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
}

inline void save_model(const std::filesystem::path& path, const GPDSModel& model) {
  detail::write_text(path, dump_json(model_to_json(model)));
}

inline GPDSModel load_model(const std::filesystem::path& path) {
  return model_from_json(detail::parse_json(detail::read_text(path)));
}

// ---------------------------------------------------------------------------
// Trajectories: CSV columns t, x_1..x_D, z_1..z_E, u_1..u_U

inline std::string trajectory_csv(const Trajectory& traj) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "t";
  for (long i = 0; i < traj.X.cols(); ++i) out << ",x_" << i + 1;
  for (long i = 0; i < traj.Z.cols(); ++i) out << ",z_" << i + 1;
  for (long i = 0; i < traj.U.cols(); ++i) out << ",u_" << i + 1;
  out << "\n";
  for (long t = 0; t < traj.length(); ++t) {
    out << t + 1;
    for (long i = 0; i < traj.X.cols(); ++i) out << "," << traj.X(t, i);
    for (long i = 0; i < traj.Z.cols(); ++i) out << "," << traj.Z(t, i);
    for (long i = 0; i < traj.U.cols(); ++i) out << "," << traj.U(t, i);
    out << "\n";
  }
  return out.str();
}

inline Trajectory trajectory_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("trajectory CSV: empty file");
  long d = 0, e = 0, u = 0;
  {
    std::istringstream header(line);
    std::string cell;
    std::getline(header, cell, ',');
    if (cell != "t") throw FormatError("trajectory CSV: first column must be t");
    while (std::getline(header, cell, ',')) {
      if (cell.rfind("x_", 0) == 0) ++d;
      else if (cell.rfind("z_", 0) == 0) ++e;
      else if (cell.rfind("u_", 0) == 0) ++u;
      else throw FormatError("trajectory CSV: unknown column " + cell);
    }
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<double> values;
    while (std::getline(row, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError("trajectory CSV: bad number '" + cell + "'");
      }
    }
    if (static_cast<long>(values.size()) != 1 + d + e + u) throw FormatError("trajectory CSV: wrong column count");
    rows.push_back(std::move(values));
  }
  const long T = static_cast<long>(rows.size());
  Trajectory traj;
  traj.X.resize(T, d);
  traj.Z.resize(T, e);
  traj.U.resize(T, u);
  for (long t = 0; t < T; ++t) {
    const auto& r = rows[static_cast<std::size_t>(t)];
    for (long i = 0; i < d; ++i) traj.X(t, i) = r[static_cast<std::size_t>(1 + i)];
    for (long i = 0; i < e; ++i) traj.Z(t, i) = r[static_cast<std::size_t>(1 + d + i)];
    for (long i = 0; i < u; ++i) traj.U(t, i) = r[static_cast<std::size_t>(1 + d + e + i)];
  }
  return traj;
}

/// Writes `<path>` (CSV) and `<path>.json` (seed and free-form system config).
inline void save_trajectory(const std::filesystem::path& path, const Trajectory& traj, const Json& system_config) {
  detail::write_text(path, trajectory_csv(traj));
  Json meta = {{"seed", traj.seed}, {"length", traj.length()}, {"system", system_config}};
  detail::write_text(path.string() + ".json", dump_json(meta));
}

inline Trajectory load_trajectory(const std::filesystem::path& path) {
  Trajectory traj = trajectory_from_csv(detail::read_text(path));
  const std::filesystem::path meta = path.string() + ".json";
  if (std::filesystem::exists(meta)) {
    const Json j = detail::parse_json(detail::read_text(meta));
    traj.seed = j.value("seed", std::uint64_t{0});
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Diagnostics and smoother output

inline Json diagnostics_to_json(const EPDiagnostics& d) {
  return {{"iterations_run", d.iterations_run}, {"converged", d.converged},
          {"convergence", d.convergence},       {"nll_x", d.nll_x},
          {"nll_z", d.nll_z},                   {"skipped", d.skipped},
          {"attempted", d.attempted},           {"skipped_total", d.skipped_total},
          {"attempted_total", d.attempted_total}, {"skip_reasons", d.skip_reasons}};
}

/// Columns t, mean_i, lower_i, upper_i (2-sigma), then truth_i when given.
inline std::string marginals_csv(const std::vector<Gaussian>& marginals, const Matrix* truth = nullptr) {
  std::ostringstream out;
  out << std::setprecision(17);
  const long d = marginals.empty() ? 0 : marginals.front().dim();
  out << "t";
  for (long i = 0; i < d; ++i) out << ",mean_" << i + 1 << ",lower_" << i + 1 << ",upper_" << i + 1;
  if (truth)
    for (long i = 0; i < d; ++i) out << ",truth_" << i + 1;
  out << "\n";
  for (std::size_t t = 0; t < marginals.size(); ++t) {
    out << t + 1;
    const Gaussian& g = marginals[t];
    for (long i = 0; i < d; ++i) {
      const double sd = std::sqrt(std::max(0.0, g.cov()(i, i)));
      out << "," << g.mean()(i) << "," << g.mean()(i) - 2.0 * sd << "," << g.mean()(i) + 2.0 * sd;
    }
    if (truth)
      for (long i = 0; i < d; ++i) out << "," << (*truth)(static_cast<long>(t), i);
    out << "\n";
  }
  return out.str();
}

}  // namespace gpds
