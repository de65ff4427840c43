// File formats: trajectory CSV, fit JSON, filter run logs, and atomic file output.
#pragma once

#include "fusereg/kalman.hpp"
#include "fusereg/lds.hpp"
#include "fusereg/regression.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace fusereg {

/// Shortest representation that parses back to the same double.
std::string format_double(double value);

/// Header `t,x_1..x_k,z_1..z_d,obs_1..obs_d` (plus `u_1..u_m` when sources are present).
/// Unobserved measurements are written as `nan`.
std::string trajectory_to_csv(const Trajectoryd& traj);
void export_csv(const Trajectoryd& traj, const std::filesystem::path& path);

/// Throws SchemaError when required columns are missing and ParseError (with the 1-based
/// file line) on malformed cells or NaN states.
Trajectoryd trajectory_from_csv(const std::string& text);
Trajectoryd ingest_csv(const std::filesystem::path& path);

/// {kind, lambdas, B_hat (array of rows), duals, diagnostics{iterations, kkt_residual, converged}}.
std::string fit_to_json(const RegressionFitd& fit);
RegressionFitd fit_from_json(const std::string& text);

/// CSV `t,x_hat_1..x_hat_k,trace_P`.
std::string kf_log_csv(const std::vector<KalmanState<double>>& states);

/// Writes `content` to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

} // namespace fusereg
