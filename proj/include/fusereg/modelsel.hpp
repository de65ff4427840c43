// Process-model selection: candidate process models used as extra sensors, selected by a
// constrained lasso, and a boosting-style loop that learns sensors and fuses them.
#pragma once

#include "fusereg/common.hpp"
#include "fusereg/lds.hpp"
#include "fusereg/regression.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace fusereg {

enum class CandidateKind { LinearAR, QuadraticAR, Spline, Sine, Cosine };

inline constexpr CandidateKind kAllCandidates[] = {CandidateKind::LinearAR, CandidateKind::QuadraticAR,
                                                   CandidateKind::Spline, CandidateKind::Sine,
                                                   CandidateKind::Cosine};

/// Frequency of the periodic forcing in the demo system; the periodic candidates are given it.
inline constexpr double kDemoFrequency = 0.126;

std::string_view to_string(CandidateKind kind);

struct CandidateOptions {
    double frequency = kDemoFrequency;
    int spline_interior_knots = 10;
    /// Ridge penalties tried for the spline, chosen by rolling one-step-ahead validation.
    std::vector<double> spline_lambdas{1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
    Index spline_validation_points = 10;
};

/// Cubic B-spline basis (clamped, equispaced interior knots) on [lo, hi], evaluated at `x`.
VectorXd cubic_bspline_basis(double x, double lo, double hi, int interior_knots);

/// A fitted one-step-ahead process model over a single state. Time indices are 1-based:
/// row r of a state history holds x_{r+1}.
struct CandidateSensor {
    CandidateKind kind = CandidateKind::LinearAR;
    VectorXd coefficients;
    std::string features;
    Index fitted_through = 0;
    double spline_lambda = 0.0;
    double spline_lo = 1.0;
    double spline_hi = 1.0;
    int spline_knots = 0;
    double frequency = kDemoFrequency;

    /// Prediction of x_time. Autoregressive kinds read x_{time-1} from the history.
    double predict(const MatrixXd& history, Index time) const;
};

/// Least-squares fit using only x_1..x_{t_index}.
CandidateSensor fit_candidate(CandidateKind kind, const MatrixXd& history, Index t_index,
                              const CandidateOptions& opts = {});

/// One-step-ahead prediction of x_{next_time} from every candidate.
VectorXd candidate_outputs(const std::vector<CandidateSensor>& sensors, const MatrixXd& history, Index next_time);

struct ModelselOptions {
    Index burn_in = 150;
    Index min_history = 20;        // candidate outputs enter the regression once this much history exists
    Index validation_points = 10;  // rolling one-step-ahead validation for lambda
    int lambda_grid_size = 12;
    double lambda_grid_min_ratio = 1e-4;
    AppendixDemoOptions demo;
    CandidateOptions candidates;
    LassoOptions lasso{1.0, 1e-8, 1e-8, 10000, false};
};

struct ModelselStep {
    Index time = 0;
    VectorXd coefficients;  // 4 measurements then linear, quadratic, spline, sine, cosine
    double lambda = 0.0;
    double prediction = 0.0;
    double truth = 0.0;
    bool converged = true;
};

struct ModelselSummary {
    double linear = 0, quadratic = 0, spline = 0, sine = 0, cosine = 0;
    double measurements = 0;  // median over steps of the summed measurement coefficients
};

struct ModelselResult {
    std::uint64_t seed = 0;
    std::vector<ModelselStep> steps;
    ModelselSummary medians;
};

/// Simulates the demo system and, after the burn-in, fits a constrained lasso of x on the
/// 4 measurements plus 5 candidate outputs at each step, penalizing only the candidates.
ModelselResult run_modelsel_experiment(std::uint64_t seed, const ModelselOptions& opts = {});

/// Same experiment on a supplied single-state trajectory with 4 measurements.
ModelselResult run_modelsel_experiment(const Trajectoryd& traj, const ModelselOptions& opts = {});

// ---------------------------------------------------------------------------------------------
// Boosting

/// Fits a univariate predictor from (responses, covariates).
using BaseLearner = std::function<std::function<double(double)>(const VectorXd& responses, const VectorXd& covariates)>;

/// Ordinary least squares with intercept; constant covariates give the response mean.
BaseLearner linear_base_learner();

struct BoostConfig {
    enum class Init { Zeros, LinearSF };
    double eta = 0.1;
    long iterations = 10;
    Init init = Init::Zeros;
    std::vector<BaseLearner> base_learners;  // one per source; empty means linear for all
    double ridge_lambda = 0.0;               // penalty for the constrained fusion step
};

struct BoostResult {
    VectorXd prediction;              // x^{(B)}_{t+1}
    std::vector<double> train_loss;   // mean squared state error, entries b = 0..B
    MatrixXd train_fit;               // x^{(B)}_i, i = 1..t
};

/// Gradient-boosting-style assimilation of sources U (t x d) into states X (t x k).
BoostResult boost_assimilate(const MatrixXd& X, const MatrixXd& U, const MatrixXd& H, const BoostConfig& cfg,
                             const VectorXd& u_next);

} // namespace fusereg
