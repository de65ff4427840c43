// Rolling-window nowcasting: at each prediction time, fit every method on the trailing window
// of (state, measurement) pairs, tune its penalty on the window's latest points, and predict
// the current state from the current measurements.
#pragma once

#include "fusereg/common.hpp"
#include "fusereg/lds.hpp"
#include "fusereg/regression.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fusereg {

enum class NowcastMethod { SF, SFRidge, SFLasso, Ridge, Lasso };

inline constexpr NowcastMethod kAllNowcastMethods[] = {NowcastMethod::SF, NowcastMethod::SFRidge,
                                                       NowcastMethod::SFLasso, NowcastMethod::Ridge,
                                                       NowcastMethod::Lasso};

std::string_view to_string(NowcastMethod method);
NowcastMethod nowcast_method_from_string(std::string_view name);
/// Comma-separated list such as "sf,sf-ridge".
std::vector<NowcastMethod> parse_methods(std::string_view list);

enum class TuningMetric { MAE, MSE };

struct NowcastConfig {
    Index window = 156;
    Index tune_horizon = 10;
    std::vector<NowcastMethod> methods{std::begin(kAllNowcastMethods), std::end(kAllNowcastMethods)};
    /// Absolute penalty values; empty selects `grid_size` log-spaced points in
    /// [grid_min_ratio * lambda_max, lambda_max], lambda_max = max_j (2/t) ||Z^T X_j||_inf.
    std::vector<double> lambda_grid;
    int grid_size = 50;
    double grid_min_ratio = 1e-4;
    TuningMetric metric = TuningMetric::MAE;
    Index segment_length = 0;  // split evaluation times into consecutive segments (0: one segment)
    LassoOptions lasso{1.0, 1e-8, 1e-8, 10000, false};

    void validate() const;
};

struct NowcastPrediction {
    Index time = 0;  // 1-based
    NowcastMethod method = NowcastMethod::SF;
    bool ok = true;
    std::string error;
    VectorXd prediction;
    VectorXd lambdas;  // selected per state; empty for sf
    double constraint_residual = 0.0;  // max |H^T B - I| for constrained methods
};

struct ScoreEntry {
    NowcastMethod method = NowcastMethod::SF;
    std::string segment;  // "all" or "segment-<n>"
    double mae = 0.0;     // per-state mean |error|, averaged over states
    double mad = 0.0;     // per-state median |error|, averaged over states
    Index count = 0;      // scored prediction times
    Index failures = 0;
};

struct ScoreTable {
    std::vector<ScoreEntry> entries;
    const ScoreEntry* find(NowcastMethod method, std::string_view segment = "all") const;
};

struct NowcastResult {
    std::vector<NowcastPrediction> predictions;
    ScoreTable scores;
};

/// Replaces each missing z_ij by the mean of column j's observations before row i. With no such
/// observation it falls back to (H * mean of earlier states)_j when states are given, else 0.
MatrixXd impute(const MatrixXd& Z, const MaskMatrix& mask);
MatrixXd impute(const MatrixXd& Z, const MaskMatrix& mask, const MatrixXd& X, const MatrixXd& H);

NowcastResult rolling_nowcast(const Trajectoryd& traj, const MatrixXd& H, const NowcastConfig& cfg);

ScoreTable score_predictions(const std::vector<NowcastPrediction>& predictions, const MatrixXd& states,
                             Index segment_length);

/// time,method,state,prediction,truth
std::string predictions_csv(const NowcastResult& result, const MatrixXd& states);
/// time,method,state,lambda
std::string lambda_log_csv(const NowcastResult& result);
std::string scores_json(const ScoreTable& scores);

struct BenchmarkOptions {
    Index steps = 220;
    double ar = 0.8;
    double season_amplitude = 1.0;
    double season_period = 52.0;
    double process_sd = 0.3;
    double missing_rate = 0.0;
    /// Sensor noise scales switch between regimes every `regime_length` steps.
    Index regime_length = 40;
};

/// Synthetic flu-like benchmark over the five-state hierarchy: seasonal AR states, sensors with
/// heterogeneous, cross-correlated, regime-switching noise and slowly drifting biases.
Trajectoryd hierarchical_benchmark(std::uint64_t seed, const BenchmarkOptions& opts = {});

} // namespace fusereg
