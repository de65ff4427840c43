#include "fusereg/modelsel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace fusereg {

std::string_view to_string(CandidateKind kind) {
    switch (kind) {
    case CandidateKind::LinearAR: return "linear";
    case CandidateKind::QuadraticAR: return "quadratic";
    case CandidateKind::Spline: return "spline";
    case CandidateKind::Sine: return "sine";
    case CandidateKind::Cosine: return "cosine";
    }
    return "unknown";
}

VectorXd cubic_bspline_basis(double x, double lo, double hi, int interior_knots) {
    constexpr int degree = 3;
    const int n_basis = interior_knots + degree + 1;
    std::vector<double> knots;
    knots.reserve(static_cast<std::size_t>(n_basis + degree + 1));
    for (int i = 0; i <= degree; ++i) knots.push_back(lo);
    for (int i = 1; i <= interior_knots; ++i) knots.push_back(lo + (hi - lo) * i / (interior_knots + 1));
    for (int i = 0; i <= degree; ++i) knots.push_back(hi);

    x = std::clamp(x, lo, hi);
    const int spans = static_cast<int>(knots.size()) - 1;
    std::vector<double> basis(static_cast<std::size_t>(spans), 0.0);
    if (x >= hi) {
        basis[static_cast<std::size_t>(n_basis - 1)] = 1.0;
    } else {
        for (int i = 0; i < spans; ++i)
            if (knots[i] <= x && x < knots[i + 1]) basis[static_cast<std::size_t>(i)] = 1.0;
        for (int p = 1; p <= degree; ++p) {
            for (int i = 0; i + p < spans; ++i) {
                double value = 0.0;
                const double left = knots[i + p] - knots[i];
                const double right = knots[i + p + 1] - knots[i + 1];
                if (left > 0) value += (x - knots[i]) / left * basis[static_cast<std::size_t>(i)];
                if (right > 0) value += (knots[i + p + 1] - x) / right * basis[static_cast<std::size_t>(i + 1)];
                basis[static_cast<std::size_t>(i)] = value;
            }
        }
    }
    VectorXd out(n_basis);
    for (int i = 0; i < n_basis; ++i) out(i) = basis[static_cast<std::size_t>(i)];
    return out;
}

namespace {

double state_at(const MatrixXd& history, Index time) { return history(time - 1, 0); }

double feature(CandidateKind kind, double lagged, double time, double freq) {
    switch (kind) {
    case CandidateKind::LinearAR: return lagged;
    case CandidateKind::QuadraticAR: return lagged * lagged;
    case CandidateKind::Sine: return std::sin(freq * time);
    case CandidateKind::Cosine: return std::cos(freq * time);
    case CandidateKind::Spline: break;
    }
    return 0.0;
}

/// Ridge fit of x_1..x_last on a spline basis over [1, hi].
VectorXd spline_coefficients(const MatrixXd& history, Index last, double hi, int knots, double lambda) {
    const int n = knots + 4;
    MatrixXd gram = MatrixXd::Zero(n, n);
    VectorXd rhs = VectorXd::Zero(n);
    for (Index i = 1; i <= last; ++i) {
        const VectorXd b = cubic_bspline_basis(static_cast<double>(i), 1.0, hi, knots);
        gram.selfadjointView<Eigen::Lower>().rankUpdate(b);
        rhs += b * state_at(history, i);
    }
    MatrixXd a = gram.selfadjointView<Eigen::Lower>();
    a /= static_cast<double>(last);
    a.diagonal().array() += lambda;
    return a.ldlt().solve(rhs / static_cast<double>(last));
}

} // namespace

double CandidateSensor::predict(const MatrixXd& history, Index time) const {
    if (kind == CandidateKind::Spline)
        return cubic_bspline_basis(static_cast<double>(time), spline_lo, spline_hi, spline_knots).dot(coefficients);
    double lagged = 0.0;
    if (kind == CandidateKind::LinearAR || kind == CandidateKind::QuadraticAR) {
        if (time < 2 || time - 1 > history.rows())
            throw InsufficientHistory("autoregressive candidate needs x_{t-1} in the history");
        lagged = state_at(history, time - 1);
    }
    return coefficients(0) * feature(kind, lagged, static_cast<double>(time), frequency);
}

CandidateSensor fit_candidate(CandidateKind kind, const MatrixXd& history, Index t_index, const CandidateOptions& opts) {
    require_dims(history.cols() == 1, "fit_candidate: history must hold a single state");
    if (t_index > history.rows()) throw InsufficientHistory("fit_candidate: t_index beyond available history");

    CandidateSensor out;
    out.kind = kind;
    out.fitted_through = t_index;
    out.frequency = opts.frequency;
    std::ostringstream features;

    if (kind == CandidateKind::Spline) {
        if (t_index < 4) throw InsufficientHistory("spline candidate needs at least 4 points");
        const int knots = opts.spline_interior_knots;
        // Rolling one-step-ahead validation over the latest points picks the ridge penalty.
        const Index first_val = std::max<Index>(4, t_index - opts.spline_validation_points + 1);
        double best_err = std::numeric_limits<double>::infinity();
        double best_lambda = opts.spline_lambdas.front();
        if (first_val <= t_index && t_index > 4) {
            for (double lambda : opts.spline_lambdas) {
                double err = 0.0;
                for (Index v = first_val; v <= t_index; ++v) {
                    const VectorXd c = spline_coefficients(history, v - 1, static_cast<double>(v), knots, lambda);
                    err += std::abs(cubic_bspline_basis(static_cast<double>(v), 1.0, static_cast<double>(v), knots)
                                        .dot(c) -
                                    state_at(history, v));
                }
                if (err < best_err) {
                    best_err = err;
                    best_lambda = lambda;
                }
            }
        }
        out.spline_lambda = best_lambda;
        out.spline_lo = 1.0;
        out.spline_hi = static_cast<double>(t_index + 1);
        out.spline_knots = knots;
        out.coefficients = spline_coefficients(history, t_index, out.spline_hi, knots, best_lambda);
        features << "cubic B-spline in time, " << knots << " interior knots on [1, " << t_index + 1
                 << "], ridge " << best_lambda;
        out.features = features.str();
        return out;
    }

    const bool autoregressive = kind == CandidateKind::LinearAR || kind == CandidateKind::QuadraticAR;
    const Index first = autoregressive ? 2 : 1;
    if (t_index < first) throw InsufficientHistory("candidate needs at least " + std::to_string(first) + " points");
    double sgg = 0.0;
    double sgx = 0.0;
    for (Index i = first; i <= t_index; ++i) {
        const double lagged = autoregressive ? state_at(history, i - 1) : 0.0;
        const double g = feature(kind, lagged, static_cast<double>(i), opts.frequency);
        sgg += g * g;
        sgx += g * state_at(history, i);
    }
    out.coefficients = VectorXd::Constant(1, sgg > 0.0 ? sgx / sgg : 0.0);
    switch (kind) {
    case CandidateKind::LinearAR: features << "x_{i-1}"; break;
    case CandidateKind::QuadraticAR: features << "x_{i-1}^2"; break;
    case CandidateKind::Sine: features << "sin(" << opts.frequency << " i)"; break;
    case CandidateKind::Cosine: features << "cos(" << opts.frequency << " i)"; break;
    case CandidateKind::Spline: break;
    }
    out.features = features.str();
    return out;
}

VectorXd candidate_outputs(const std::vector<CandidateSensor>& sensors, const MatrixXd& history, Index next_time) {
    VectorXd out(static_cast<Index>(sensors.size()));
    for (std::size_t c = 0; c < sensors.size(); ++c) {
        if (sensors[c].fitted_through >= next_time)
            throw InsufficientHistory("candidate fitted on data at or after the prediction time");
        out(static_cast<Index>(c)) = sensors[c].predict(history, next_time);
    }
    return out;
}

namespace {

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

GramStats<double> rows_stats(const MatrixXd& X, const MatrixXd& Z, Index first_row, Index count) {
    return gram_stats<double>(X.middleRows(first_row, count), Z.middleRows(first_row, count));
}

} // namespace

ModelselResult run_modelsel_experiment(const Trajectoryd& traj, const ModelselOptions& opts) {
    traj.check();
    require_dims(traj.k() == 1, "modelsel: trajectory must have a single state");
    const Index T = traj.steps();
    const Index d = traj.d();
    const Index n_cand = static_cast<Index>(std::size(kAllCandidates));
    const Index width = d + n_cand;
    if (opts.burn_in >= T) throw InsufficientHistory("modelsel: burn-in covers the whole trajectory");
    if (opts.min_history + opts.validation_points + 2 > opts.burn_in)
        throw InsufficientHistory("modelsel: burn-in too short for the validation window");
    const MatrixXd& history = traj.states;

    // Augmented sensors for times min_history+1..T; row r holds time r+1.
    MatrixXd augmented = MatrixXd::Constant(T, width, std::numeric_limits<double>::quiet_NaN());
    for (Index time = opts.min_history + 1; time <= T; ++time) {
        at_step(static_cast<long>(time), [&] {
            std::vector<CandidateSensor> sensors;
            for (CandidateKind kind : kAllCandidates)
                sensors.push_back(fit_candidate(kind, history, time - 1, opts.candidates));
            augmented.row(time - 1).head(d) = traj.measurements.row(time - 1);
            augmented.row(time - 1).tail(n_cand) = candidate_outputs(sensors, history, time).transpose();
        });
    }

    const MatrixXd H = MatrixXd::Ones(width, 1);
    VectorXd weights = VectorXd::Ones(width);
    weights.head(d).setZero();
    const VectorXd target = VectorXd::Ones(1);
    const Index first_row = opts.min_history;  // 0-based row of time min_history+1

    // Lambda is searched as a fraction of each training set's own lambda_max, so the validation
    // errors of a given training set do not depend on the step and are computed once.
    std::vector<double> fractions;
    for (int g = 0; g < opts.lambda_grid_size; ++g) {
        const double frac = opts.lambda_grid_size > 1 ? double(g) / (opts.lambda_grid_size - 1) : 0.0;
        fractions.push_back(std::pow(opts.lambda_grid_min_ratio, frac));
    }
    fractions.push_back(0.0);
    std::map<Index, std::vector<double>> validation_errors;  // keyed by validation time
    auto errors_at = [&](Index v) -> const std::vector<double>& {
        auto found = validation_errors.find(v);
        if (found != validation_errors.end()) return found->second;
        const auto stats = rows_stats(history, augmented, first_row, v - 1 - first_row);
        const double lambda_max = lasso_lambda_max(stats)(0);
        LassoSplitting<double> splitting(stats, H, opts.lasso);
        LassoSplitting<double>::Iterate warm;
        std::vector<double> errs;
        for (std::size_t g = 0; g < fractions.size(); ++g) {
            warm = splitting.solve(0, target, fractions[g] * lambda_max, weights, g ? &warm : nullptr);
            errs.push_back(std::abs(augmented.row(v - 1).dot(warm.b) - history(v - 1, 0)));
        }
        return validation_errors.emplace(v, std::move(errs)).first->second;
    };

    ModelselResult result;
    for (Index time = opts.burn_in + 1; time <= T; ++time) {
        at_step(static_cast<long>(time), [&] {
            const Index train_rows = time - 1 - first_row;
            const auto full = rows_stats(history, augmented, first_row, train_rows);
            std::vector<double> err(fractions.size(), 0.0);
            for (Index v = time - opts.validation_points; v < time; ++v) {
                const auto& e = errors_at(v);
                for (std::size_t g = 0; g < err.size(); ++g) err[g] += e[g];
            }
            const std::size_t best =
                static_cast<std::size_t>(std::min_element(err.begin(), err.end()) - err.begin());
            const double lambda = fractions[best] * lasso_lambda_max(full)(0);

            const auto fit = fit_constrained_lasso<double>(full, H, VectorXd::Constant(1, lambda),
                                                           MatrixXd(weights), opts.lasso);
            ModelselStep step;
            step.time = time;
            step.coefficients = fit.B_hat.col(0);
            step.lambda = lambda;
            step.prediction = augmented.row(time - 1).dot(fit.B_hat.col(0));
            step.truth = history(time - 1, 0);
            step.converged = fit.diagnostics.converged;
            result.steps.push_back(std::move(step));
        });
    }

    std::vector<std::vector<double>> per_column(static_cast<std::size_t>(n_cand));
    std::vector<double> measurement_sums;
    for (const auto& s : result.steps) {
        for (Index c = 0; c < n_cand; ++c) per_column[static_cast<std::size_t>(c)].push_back(s.coefficients(d + c));
        measurement_sums.push_back(s.coefficients.head(d).sum());
    }
    result.medians.linear = median(per_column[0]);
    result.medians.quadratic = median(per_column[1]);
    result.medians.spline = median(per_column[2]);
    result.medians.sine = median(per_column[3]);
    result.medians.cosine = median(per_column[4]);
    result.medians.measurements = median(measurement_sums);
    return result;
}

ModelselResult run_modelsel_experiment(std::uint64_t seed, const ModelselOptions& opts) {
    auto result = run_modelsel_experiment(simulate_appendix_demo(seed, opts.demo), opts);
    result.seed = seed;
    return result;
}

BaseLearner linear_base_learner() {
    return [](const VectorXd& y, const VectorXd& u) -> std::function<double(double)> {
        require_dims(y.size() == u.size() && y.size() > 0, "linear base learner: empty or mismatched data");
        const double ubar = u.mean();
        const double ybar = y.mean();
        const double suu = (u.array() - ubar).square().sum();
        const double slope = suu > 0.0 ? ((u.array() - ubar) * (y.array() - ybar)).sum() / suu : 0.0;
        const double intercept = ybar - slope * ubar;
        return [slope, intercept](double x) { return intercept + slope * x; };
    };
}

BoostResult boost_assimilate(const MatrixXd& X, const MatrixXd& U, const MatrixXd& H, const BoostConfig& cfg,
                             const VectorXd& u_next) {
    const Index t = X.rows();
    const Index k = X.cols();
    const Index d = U.cols();
    if (t < 1) throw EmptyHistory("boost_assimilate needs at least one training point");
    require_dims(U.rows() == t, "boost_assimilate: X and U row counts differ");
    require_dims(H.rows() == d && H.cols() == k, "boost_assimilate: H must be d x k");
    require_dims(u_next.size() == d, "boost_assimilate: u_next size differs from d");
    if (!(cfg.eta > 0.0) && cfg.eta != 0.0) throw InvalidArgument("boost_assimilate: eta must be >= 0");
    if (cfg.iterations < 0) throw InvalidArgument("boost_assimilate: iterations must be >= 0");
    if (!cfg.base_learners.empty() && static_cast<Index>(cfg.base_learners.size()) != d)
        throw InvalidArgument("boost_assimilate: need one base learner per source");

    // Rows 0..t-1 are training times, row t is the prediction time.
    MatrixXd sources(t + 1, d);
    sources << U, u_next.transpose();
    MatrixXd fit = MatrixXd::Zero(t + 1, k);
    if (cfg.init == BoostConfig::Init::LinearSF) {
        const auto init = fit_constrained_ls<double>(X, U, H);
        fit = sources * init.B_hat;
    }

    auto train_loss = [&] { return (X - fit.topRows(t)).squaredNorm() / static_cast<double>(t * k); };
    BoostResult out;
    out.train_loss.push_back(train_loss());

    const BaseLearner default_learner = linear_base_learner();
    const MatrixXd Y = X * H.transpose();
    for (long b = 1; b <= cfg.iterations; ++b) {
        at_step(b, [&] {
            const MatrixXd residual_y = Y - fit.topRows(t) * H.transpose();
            MatrixXd sensors(t + 1, d);
            for (Index j = 0; j < d; ++j) {
                const auto& learner = cfg.base_learners.empty() ? default_learner
                                                                : cfg.base_learners[static_cast<std::size_t>(j)];
                const auto fj = learner(residual_y.col(j), U.col(j));
                for (Index i = 0; i <= t; ++i) sensors(i, j) = fj(sources(i, j));
            }
            const MatrixXd residual_x = X - fit.topRows(t);
            const auto fusion = fit_constrained_ridge<double>(residual_x, sensors.topRows(t), H, cfg.ridge_lambda);
            fit += cfg.eta * (sensors * fusion.B_hat);
        });
        out.train_loss.push_back(train_loss());
    }
    out.prediction = fit.row(t).transpose();
    out.train_fit = fit.topRows(t);
    return out;
}

} // namespace fusereg
