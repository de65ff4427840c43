#include "fusereg/nowcast.hpp"

#include "fusereg/hierarchy.hpp"
#include "fusereg/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace fusereg {

std::string_view to_string(NowcastMethod method) {
    switch (method) {
    case NowcastMethod::SF: return "sf";
    case NowcastMethod::SFRidge: return "sf-ridge";
    case NowcastMethod::SFLasso: return "sf-lasso";
    case NowcastMethod::Ridge: return "ridge";
    case NowcastMethod::Lasso: return "lasso";
    }
    return "unknown";
}

NowcastMethod nowcast_method_from_string(std::string_view name) {
    for (NowcastMethod m : kAllNowcastMethods)
        if (to_string(m) == name) return m;
    throw InvalidArgument("unknown nowcast method '" + std::string(name) + "'");
}

std::vector<NowcastMethod> parse_methods(std::string_view list) {
    std::vector<NowcastMethod> out;
    std::size_t start = 0;
    while (start <= list.size()) {
        const auto pos = list.find(',', start);
        const auto item = list.substr(start, pos == std::string_view::npos ? list.size() - start : pos - start);
        if (!item.empty()) out.push_back(nowcast_method_from_string(item));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    if (out.empty()) throw InvalidArgument("method list is empty");
    return out;
}

void NowcastConfig::validate() const {
    if (tune_horizon < 1) throw InvalidArgument("tune_horizon must be >= 1");
    if (window <= tune_horizon) throw InvalidArgument("window must exceed tune_horizon");
    if (methods.empty()) throw InvalidArgument("no nowcast methods selected");
    for (double l : lambda_grid)
        if (!(l > 0.0)) throw InvalidArgument("lambda grid values must be positive");
    if (lambda_grid.empty() && (grid_size < 1 || !(grid_min_ratio > 0.0) || grid_min_ratio > 1.0))
        throw InvalidArgument("default lambda grid needs grid_size >= 1 and grid_min_ratio in (0, 1]");
}

const ScoreEntry* ScoreTable::find(NowcastMethod method, std::string_view segment) const {
    for (const auto& e : entries)
        if (e.method == method && e.segment == segment) return &e;
    return nullptr;
}

MatrixXd impute(const MatrixXd& Z, const MaskMatrix& mask) {
    return impute(Z, mask, MatrixXd(0, 0), MatrixXd(0, 0));
}

MatrixXd impute(const MatrixXd& Z, const MaskMatrix& mask, const MatrixXd& X, const MatrixXd& H) {
    require_dims(mask.rows() == Z.rows() && mask.cols() == Z.cols(), "impute: mask shape differs from Z");
    const bool have_states = X.size() > 0 && H.size() > 0;
    if (have_states)
        require_dims(X.rows() == Z.rows() && H.rows() == Z.cols() && H.cols() == X.cols(),
                     "impute: X or H shape inconsistent with Z");
    MatrixXd out = Z;
    VectorXd sum = VectorXd::Zero(Z.cols());
    Eigen::VectorXi count = Eigen::VectorXi::Zero(Z.cols());
    VectorXd state_sum = have_states ? VectorXd::Zero(X.cols()) : VectorXd();
    for (Index i = 0; i < Z.rows(); ++i) {
        for (Index j = 0; j < Z.cols(); ++j) {
            if (mask(i, j)) continue;
            if (count(j) > 0) {
                out(i, j) = sum(j) / count(j);
            } else if (have_states && i > 0) {
                out(i, j) = H.row(j).dot(state_sum / static_cast<double>(i));
            } else {
                out(i, j) = 0.0;
            }
        }
        for (Index j = 0; j < Z.cols(); ++j) {
            if (!mask(i, j)) continue;
            sum(j) += Z(i, j);
            ++count(j);
        }
        if (have_states) state_sum += X.row(i).transpose();
    }
    return out;
}

namespace {

bool is_constrained(NowcastMethod m) {
    return m == NowcastMethod::SF || m == NowcastMethod::SFRidge || m == NowcastMethod::SFLasso;
}
bool is_lasso(NowcastMethod m) { return m == NowcastMethod::SFLasso || m == NowcastMethod::Lasso; }

RegressionFitd fit_method(NowcastMethod method, const GramStats<double>& stats, const MatrixXd& H,
                          const VectorXd& lambdas, const LassoOptions& lasso) {
    switch (method) {
    case NowcastMethod::SF: return fit_constrained_ls<double>(stats, H);
    case NowcastMethod::SFRidge: return fit_constrained_ridge<double>(stats, H, lambdas);
    case NowcastMethod::SFLasso:
        return fit_constrained_lasso<double>(stats, H, lambdas, MatrixXd::Ones(stats.d(), stats.k()), lasso);
    case NowcastMethod::Ridge: return fit_ridge<double>(stats, lambdas);
    case NowcastMethod::Lasso: return fit_lasso<double>(stats, lambdas, lasso);
    }
    throw InvalidArgument("unknown nowcast method");
}

double tuning_loss(double err, TuningMetric metric) { return metric == TuningMetric::MAE ? std::abs(err) : err * err; }

/// Accumulated validation loss, one row per grid value and one column per state.
MatrixXd validation_losses(NowcastMethod method, const MatrixXd& X, const MatrixXd& Z, const MatrixXd& H,
                           Index window_start, Index first_val, Index end, const std::vector<double>& grid,
                           const NowcastConfig& cfg) {
    const Index k = X.cols();
    const auto n_grid = static_cast<Index>(grid.size());
    MatrixXd loss = MatrixXd::Zero(n_grid, k);
    const MatrixXd no_constraint(H.rows(), 0);
    const MatrixXd eye = MatrixXd::Identity(k, k);
    for (Index v = first_val; v < end; ++v) {
        const auto stats =
            gram_stats<double>(X.middleRows(window_start, v - window_start), Z.middleRows(window_start, v - window_start));
        const VectorXd z = Z.row(v).transpose();
        if (is_lasso(method)) {
            const MatrixXd& Hc = is_constrained(method) ? H : no_constraint;
            std::optional<LassoSplitting<double>> splitting;
            try {
                splitting.emplace(stats, Hc, cfg.lasso);
            } catch (const Error&) {
                loss.setConstant(std::numeric_limits<double>::infinity());
                continue;
            }
            const VectorXd weights = VectorXd::Ones(stats.d());
            for (Index j = 0; j < k; ++j) {
                const VectorXd target = is_constrained(method) ? VectorXd(eye.col(j)) : VectorXd();
                LassoSplitting<double>::Iterate warm;
                for (Index g = 0; g < n_grid; ++g) {
                    warm = splitting->solve(j, target, grid[static_cast<std::size_t>(g)], weights, g ? &warm : nullptr);
                    loss(g, j) += tuning_loss(z.dot(warm.b) - X(v, j), cfg.metric);
                }
            }
        } else {
            for (Index g = 0; g < n_grid; ++g) {
                try {
                    const auto fit = fit_method(method, stats, H, VectorXd::Constant(k, grid[static_cast<std::size_t>(g)]),
                                                cfg.lasso);
                    const VectorXd pred = predict(fit, z);
                    for (Index j = 0; j < k; ++j) loss(g, j) += tuning_loss(pred(j) - X(v, j), cfg.metric);
                } catch (const Error&) {
                    loss.row(g).setConstant(std::numeric_limits<double>::infinity());
                }
            }
        }
    }
    return loss;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

NowcastResult rolling_nowcast(const Trajectoryd& traj, const MatrixXd& H, const NowcastConfig& cfg) {
    cfg.validate();
    traj.check();
    require_dims(H.rows() == traj.d() && H.cols() == traj.k(), "rolling_nowcast: H must be d x k");
    const Index T = traj.steps();
    if (T <= cfg.window + cfg.tune_horizon)
        throw WindowTooShort("rolling_nowcast: need more than window + tune_horizon = " +
                             std::to_string(cfg.window + cfg.tune_horizon) + " steps, have " + std::to_string(T));

    const MatrixXd& X = traj.states;
    const MatrixXd Z = impute(traj.measurements, traj.mask, X, H);
    const Index k = traj.k();

    NowcastResult result;
    // Row p (0-based) is predicted from rows p - window .. p - 1 and z_p.
    for (Index p = cfg.window; p < T; ++p) {
        const Index start = p - cfg.window;
        const auto stats = gram_stats<double>(X.middleRows(start, cfg.window), Z.middleRows(start, cfg.window));
        std::vector<double> grid = cfg.lambda_grid;
        if (grid.empty()) {
            const double lambda_max = lasso_lambda_max(stats).maxCoeff();
            for (int g = 0; g < cfg.grid_size; ++g) {
                const double frac = cfg.grid_size > 1 ? double(g) / (cfg.grid_size - 1) : 0.0;
                grid.push_back(lambda_max * std::pow(cfg.grid_min_ratio, frac));
            }
        }
        std::sort(grid.begin(), grid.end(), std::greater<>());

        for (NowcastMethod method : cfg.methods) {
            NowcastPrediction pred;
            pred.time = p + 1;
            pred.method = method;
            try {
                VectorXd lambdas = VectorXd::Zero(k);
                if (method != NowcastMethod::SF) {
                    const MatrixXd loss = validation_losses(method, X, Z, H, start, p - cfg.tune_horizon, p, grid, cfg);
                    for (Index j = 0; j < k; ++j) {
                        Index best = 0;
                        loss.col(j).minCoeff(&best);
                        if (!std::isfinite(loss(best, j))) throw SingularKKT("every lambda failed during tuning");
                        lambdas(j) = grid[static_cast<std::size_t>(best)];
                    }
                    pred.lambdas = lambdas;
                }
                const auto fit = fit_method(method, stats, H, lambdas, cfg.lasso);
                pred.prediction = predict(fit, VectorXd(Z.row(p).transpose()));
                if (is_constrained(method)) pred.constraint_residual = constraint_residual(fit, H);
            } catch (const Error& e) {
                pred.ok = false;
                pred.error = e.what();
                pred.prediction = VectorXd::Constant(k, std::numeric_limits<double>::quiet_NaN());
            }
            result.predictions.push_back(std::move(pred));
        }
    }
    result.scores = score_predictions(result.predictions, X, cfg.segment_length);
    return result;
}

ScoreTable score_predictions(const std::vector<NowcastPrediction>& predictions, const MatrixXd& states,
                             Index segment_length) {
    ScoreTable table;
    if (predictions.empty()) return table;
    Index first_time = predictions.front().time;
    for (const auto& p : predictions) first_time = std::min(first_time, p.time);

    std::vector<NowcastMethod> methods;
    for (const auto& p : predictions)
        if (std::find(methods.begin(), methods.end(), p.method) == methods.end()) methods.push_back(p.method);

    auto segment_of = [&](Index time) -> std::string {
        if (segment_length <= 0) return "all";
        return "segment-" + std::to_string((time - first_time) / segment_length + 1);
    };

    for (NowcastMethod m : methods) {
        std::vector<std::string> segments{"all"};
        if (segment_length > 0)
            for (const auto& p : predictions)
                if (p.method == m && std::find(segments.begin(), segments.end(), segment_of(p.time)) == segments.end())
                    segments.push_back(segment_of(p.time));
        for (const auto& seg : segments) {
            ScoreEntry entry;
            entry.method = m;
            entry.segment = seg;
            std::vector<std::vector<double>> errors(static_cast<std::size_t>(states.cols()));
            for (const auto& p : predictions) {
                if (p.method != m || (seg != "all" && segment_of(p.time) != seg)) continue;
                if (!p.ok) {
                    ++entry.failures;
                    continue;
                }
                ++entry.count;
                for (Index j = 0; j < states.cols(); ++j)
                    errors[static_cast<std::size_t>(j)].push_back(std::abs(p.prediction(j) - states(p.time - 1, j)));
            }
            if (entry.count > 0) {
                double mae = 0.0;
                double mad = 0.0;
                for (const auto& e : errors) {
                    double sum = 0.0;
                    for (double v : e) sum += v;
                    mae += sum / static_cast<double>(e.size());
                    mad += median_of(e);
                }
                entry.mae = mae / static_cast<double>(states.cols());
                entry.mad = mad / static_cast<double>(states.cols());
            }
            table.entries.push_back(entry);
        }
    }
    return table;
}

std::string predictions_csv(const NowcastResult& result, const MatrixXd& states) {
    std::ostringstream os;
    os << "time,method,state,prediction,truth\n";
    for (const auto& p : result.predictions)
        for (Index j = 0; j < p.prediction.size(); ++j)
            os << p.time << ',' << to_string(p.method) << ',' << j + 1 << ',' << format_double(p.prediction(j)) << ','
               << format_double(states(p.time - 1, j)) << '\n';
    return os.str();
}

std::string lambda_log_csv(const NowcastResult& result) {
    std::ostringstream os;
    os << "time,method,state,lambda\n";
    for (const auto& p : result.predictions)
        for (Index j = 0; j < p.lambdas.size(); ++j)
            os << p.time << ',' << to_string(p.method) << ',' << j + 1 << ',' << format_double(p.lambdas(j)) << '\n';
    return os.str();
}

std::string scores_json(const ScoreTable& scores) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : scores.entries)
        j.push_back({{"method", std::string(to_string(e.method))},
                     {"segment", e.segment},
                     {"mae", e.mae},
                     {"mad", e.mad},
                     {"count", e.count},
                     {"failures", e.failures}});
    return nlohmann::json{{"scores", j}}.dump(2);
}

Trajectoryd hierarchical_benchmark(std::uint64_t seed, const BenchmarkOptions& opts) {
    const MatrixXd H = build_measurement_map(five_state_hierarchy());
    const Index k = H.cols();
    const Index d = H.rows();
    const Index T = opts.steps;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    VectorXd level(k), phase(k);
    for (Index j = 0; j < k; ++j) {
        level(j) = 2.0 + 2.0 * unif(rng);
        phase(j) = 4.0 * unif(rng);
    }
    VectorXd base_sd(d), bias(d);
    for (Index j = 0; j < d; ++j) {
        base_sd(j) = 0.2 + unif(rng);
        bias(j) = 0.1 * normal(rng);
    }
    VectorXd regime = VectorXd::Ones(d);
    const double rho = 0.3;
    const double pi = std::acos(-1.0);

    Trajectoryd traj;
    traj.states.resize(T, k);
    traj.measurements.resize(T, d);
    traj.mask = MaskMatrix::Constant(T, d, true);
    VectorXd dev = VectorXd::Zero(k);
    for (Index i = 0; i < T; ++i) {
        if (opts.regime_length > 0 && i % opts.regime_length == 0)
            for (Index j = 0; j < d; ++j) regime(j) = std::exp(0.7 * normal(rng));
        for (Index j = 0; j < k; ++j) {
            dev(j) = opts.ar * dev(j) + opts.process_sd * normal(rng);
            traj.states(i, j) = level(j) + opts.season_amplitude * std::sin(2 * pi * (i + phase(j)) / opts.season_period) +
                                dev(j);
        }
        const double common = normal(rng);
        for (Index j = 0; j < d; ++j) {
            bias(j) += 0.02 * normal(rng);
            const double eps = base_sd(j) * regime(j) * (std::sqrt(1 - rho) * normal(rng) + std::sqrt(rho) * common);
            traj.measurements(i, j) = H.row(j).dot(traj.states.row(i)) + bias(j) + eps;
            if (opts.missing_rate > 0 && unif(rng) < opts.missing_rate) traj.mask(i, j) = false;
        }
    }
    return traj;
}

} // namespace fusereg
