// Regression formulations of sensor fusion: state columns X_j regressed on measurements Z,
// optionally subject to H^T b_j = e_j, with ridge or weighted-lasso penalties.
//
// Losses are (1/t) sum_i (x_ij - b_j^T z_i)^2 throughout. Returned duals follow the
// unscaled Lagrangian ||X_j - Z b_j||^2 / 2 + u_j^T (H^T b_j - e_j), i.e. for least squares
//     Z^T (Z b_j - X_j) + H u_j = 0.
#pragma once

#include "fusereg/common.hpp"
#include "fusereg/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fusereg {

enum class FitKind { ConstrainedLS, ConstrainedRidge, ConstrainedLasso, Ridge, Lasso };

inline std::string_view to_string(FitKind kind) {
    switch (kind) {
    case FitKind::ConstrainedLS: return "constrained-ls";
    case FitKind::ConstrainedRidge: return "constrained-ridge";
    case FitKind::ConstrainedLasso: return "constrained-lasso";
    case FitKind::Ridge: return "ridge";
    case FitKind::Lasso: return "lasso";
    }
    return "unknown";
}

inline FitKind fit_kind_from_string(std::string_view name) {
    for (FitKind kind : {FitKind::ConstrainedLS, FitKind::ConstrainedRidge, FitKind::ConstrainedLasso,
                         FitKind::Ridge, FitKind::Lasso})
        if (to_string(kind) == name) return kind;
    throw InvalidArgument("unknown fit kind '" + std::string(name) + "'");
}

inline bool is_constrained(FitKind kind) {
    return kind == FitKind::ConstrainedLS || kind == FitKind::ConstrainedRidge ||
           kind == FitKind::ConstrainedLasso;
}

struct FitDiagnostics {
    long iterations = 0;          // max over columns; 0 for direct solves
    double kkt_residual = 0.0;    // max-norm stationarity residual (subgradient-adjusted for lasso)
    bool converged = true;
    std::vector<double> objective; // per column, penalized (1/t)-scaled objective
};

template <typename Scalar>
struct RegressionFit {
    FitKind kind = FitKind::ConstrainedLS;
    Matrix<Scalar> B_hat;           // d x k
    Vector<Scalar> lambdas;         // k
    Matrix<Scalar> penalty_weights; // d x k
    Matrix<Scalar> duals;           // k x k, column j is u_j; empty when unconstrained
    FitDiagnostics diagnostics;

    Index d() const { return B_hat.rows(); }
    Index k() const { return B_hat.cols(); }
};

using RegressionFitd = RegressionFit<double>;

/// Raised when the lasso splitting hits its iteration cap; carries the last iterate.
template <typename Scalar>
class NonConvergence : public Error {
public:
    NonConvergence(const std::string& what, RegressionFit<Scalar> best)
        : Error(what), best_(std::move(best)) {}
    const RegressionFit<Scalar>& best() const noexcept { return best_; }

private:
    RegressionFit<Scalar> best_;
};

/// Second moments of a training set: G = Z^T Z / t, C = Z^T X / t, xx_j = X_j^T X_j / t.
template <typename Scalar>
struct GramStats {
    Matrix<Scalar> G;
    Matrix<Scalar> C;
    Vector<Scalar> xx;
    Index t = 0;

    Index d() const { return G.rows(); }
    Index k() const { return C.cols(); }
};

template <typename Scalar>
GramStats<Scalar> gram_stats(const Matrix<Scalar>& X, const Matrix<Scalar>& Z) {
    require_dims(X.rows() == Z.rows(), "regression: X and Z row counts differ");
    if (X.rows() == 0) throw EmptyHistory("regression needs at least one training row");
    GramStats<Scalar> s;
    s.t = X.rows();
    const Scalar inv_t = Scalar(1) / Scalar(s.t);
    s.G = symmetrized(Z.transpose() * Z) * inv_t;
    s.C = Z.transpose() * X * inv_t;
    s.xx = X.colwise().squaredNorm().transpose() * inv_t;
    return s;
}

/// Per column lambda_max,j = (2/t) ||Z^T X_j||_inf, the smallest lasso penalty giving b_j = 0.
template <typename Scalar>
Vector<Scalar> lasso_lambda_max(const GramStats<Scalar>& s) {
    Vector<Scalar> out(s.k());
    for (Index j = 0; j < s.k(); ++j) out(j) = Scalar(2) * s.C.col(j).cwiseAbs().maxCoeff();
    return out;
}

namespace detail {

inline const char* kSingularKktMessage =
    "KKT system singular: null space of Z intersects null space of H^T (or H lacks full column rank)";

template <typename Scalar>
Scalar quadratic_loss(const GramStats<Scalar>& s, Index j, const Vector<Scalar>& b) {
    return s.xx(j) - Scalar(2) * b.dot(s.C.col(j)) + b.dot(s.G * b);
}

template <typename Scalar>
void check_constraint_map(const GramStats<Scalar>& s, const Matrix<Scalar>& H) {
    require_dims(H.rows() == s.d(), "regression: H rows differ from number of sensors");
    require_dims(H.cols() == s.k(), "regression: H columns differ from number of states");
}

/// Ridge-type solve of one column (or all columns sharing lambda) with optional constraints.
/// Returns [b; nu] with G b - c + lambda b + H nu = 0 and H^T b = E.
template <typename Scalar>
Matrix<Scalar> ridge_kkt_solve(const GramStats<Scalar>& s, const Matrix<Scalar>& H, Scalar lambda,
                               const Matrix<Scalar>& C, const Matrix<Scalar>& E) {
    const Index d = s.d();
    Matrix<Scalar> a = s.G;
    a.diagonal().array() += lambda;
    if (H.cols() == 0) {
        auto ldlt = guarded_ldlt<SingularGram>(a, "Z^T Z / t + lambda I (least squares not well-defined)");
        return ldlt.solve(C);
    }
    const Index m = H.cols();
    // Dividing the quadratic block by its scale keeps large penalties well conditioned;
    // the multiplier comes back scaled by the same factor.
    const Scalar scale = std::max(Scalar(1), a.diagonal().cwiseAbs().maxCoeff());
    auto lu = guarded_lu<SingularKKT>(saddle_matrix<Scalar>(Matrix<Scalar>(a / scale), H), kSingularKktMessage);
    Matrix<Scalar> rhs(d + m, C.cols());
    rhs << C / scale, E;
    Matrix<Scalar> sol = lu.solve(rhs);
    sol.bottomRows(m) *= scale;
    return sol;
}

template <typename Scalar>
RegressionFit<Scalar> ridge_fit(const GramStats<Scalar>& s, const Matrix<Scalar>& H, const Vector<Scalar>& lambdas,
                                FitKind kind) {
    const Index d = s.d();
    const Index k = s.k();
    const bool constrained = H.cols() > 0;
    if (constrained) check_constraint_map(s, H);
    require_dims(lambdas.size() == k, "regression: need one lambda per state");
    if ((lambdas.array() < Scalar(0)).any()) throw InvalidArgument("regression: lambdas must be >= 0");

    RegressionFit<Scalar> fit;
    fit.kind = kind;
    fit.lambdas = lambdas;
    fit.B_hat.resize(d, k);
    fit.penalty_weights = Matrix<Scalar>::Ones(d, k);
    if (constrained) fit.duals.resize(k, k);
    const Matrix<Scalar> eye = Matrix<Scalar>::Identity(k, k);

    // Columns sharing a lambda share one factorization.
    std::vector<bool> done(static_cast<std::size_t>(k), false);
    for (Index j = 0; j < k; ++j) {
        if (done[static_cast<std::size_t>(j)]) continue;
        std::vector<Index> cols;
        for (Index jj = j; jj < k; ++jj)
            if (!done[static_cast<std::size_t>(jj)] && lambdas(jj) == lambdas(j)) cols.push_back(jj);
        Matrix<Scalar> C(d, static_cast<Index>(cols.size()));
        Matrix<Scalar> E(constrained ? k : 0, static_cast<Index>(cols.size()));
        for (std::size_t c = 0; c < cols.size(); ++c) {
            C.col(static_cast<Index>(c)) = s.C.col(cols[c]);
            if (constrained) E.col(static_cast<Index>(c)) = eye.col(cols[c]);
        }
        const Matrix<Scalar> sol = ridge_kkt_solve<Scalar>(s, H, lambdas(j), C, E);
        for (std::size_t c = 0; c < cols.size(); ++c) {
            const Index col = cols[c];
            fit.B_hat.col(col) = sol.col(static_cast<Index>(c)).head(d);
            if (constrained) fit.duals.col(col) = sol.col(static_cast<Index>(c)).tail(k) * Scalar(s.t);
            done[static_cast<std::size_t>(col)] = true;
        }
    }

    fit.diagnostics.objective.resize(static_cast<std::size_t>(k));
    double residual = 0.0;
    for (Index j = 0; j < k; ++j) {
        const Vector<Scalar> b = fit.B_hat.col(j);
        fit.diagnostics.objective[static_cast<std::size_t>(j)] =
            static_cast<double>(quadratic_loss(s, j, b) + lambdas(j) * b.squaredNorm());
        Vector<Scalar> g = (s.G * b - s.C.col(j) + lambdas(j) * b) * Scalar(s.t);
        if (constrained) g += H * fit.duals.col(j);
        residual = std::max(residual, static_cast<double>(g.cwiseAbs().maxCoeff()));
    }
    fit.diagnostics.kkt_residual = residual;
    return fit;
}

} // namespace detail

struct LassoOptions {
    double rho = 1.0;
    double primal_tolerance = 1e-8;
    double dual_tolerance = 1e-8;
    long max_iterations = 10000;
    bool throw_on_nonconvergence = true;
};

/// Operator splitting for
///     minimize (1/t) ||X_j - Z b||^2 + lambda ||w .* v||_1   s.t.  H^T b = target,  b = v.
/// The b-step is an equality-constrained quadratic solve whose saddle matrix is factored once
/// per training set and shared by every column and penalty level.
template <typename Scalar>
class LassoSplitting {
public:
    struct Iterate {
        Vector<Scalar> b;
        Vector<Scalar> v;
        Vector<Scalar> u;   // scaled dual of b = v
        Vector<Scalar> nu;  // multiplier of H^T b = target, objective-gradient scale
        long iterations = 0;
        bool converged = false;
    };

    LassoSplitting(const GramStats<Scalar>& stats, const Matrix<Scalar>& H, const LassoOptions& opts)
        : stats_(stats), H_(H), opts_(opts) {
        if (!(opts.rho > 0)) throw InvalidArgument("lasso: rho must be positive");
        require_dims(H.rows() == stats.d(), "lasso: H rows differ from number of sensors");
        Matrix<Scalar> a = Scalar(2) * stats.G;
        a.diagonal().array() += Scalar(opts.rho);
        lu_.emplace(guarded_lu<SingularKKT>(saddle_matrix<Scalar>(a, H), detail::kSingularKktMessage));
    }

    Iterate solve(Index column, const Vector<Scalar>& target, Scalar lambda, const Vector<Scalar>& weights,
                  const Iterate* warm = nullptr) const {
        const Index d = stats_.d();
        const Index m = H_.cols();
        const Scalar rho = Scalar(opts_.rho);
        const Vector<Scalar> thresholds = weights * (lambda / rho);
        const Vector<Scalar> two_c = Scalar(2) * stats_.C.col(column);

        Iterate it;
        it.v = warm ? warm->v : Vector<Scalar>::Zero(d);
        it.u = warm ? warm->u : Vector<Scalar>::Zero(d);
        Vector<Scalar> rhs(d + m);
        Vector<Scalar> sol = Vector<Scalar>::Zero(d + m);
        rhs.tail(m) = target;
        for (it.iterations = 1; it.iterations <= opts_.max_iterations; ++it.iterations) {
            rhs.head(d).noalias() = two_c + rho * (it.v - it.u);
            sol = lu_->solve(rhs);
            double primal = 0.0;
            double dual = 0.0;
            for (Index i = 0; i < d; ++i) {
                const Scalar b = sol(i);
                const Scalar s = b + it.u(i);
                const Scalar v = s > thresholds(i) ? s - thresholds(i) : (s < -thresholds(i) ? s + thresholds(i) : Scalar(0));
                dual = std::max(dual, static_cast<double>(rho * std::abs(v - it.v(i))));
                primal = std::max(primal, static_cast<double>(std::abs(b - v)));
                it.v(i) = v;
                it.u(i) = s - v;
            }
            if (primal <= opts_.primal_tolerance && dual <= opts_.dual_tolerance) {
                it.converged = true;
                break;
            }
        }
        it.b = sol.head(d);
        it.nu = sol.tail(m);
        it.iterations = std::min(it.iterations, opts_.max_iterations);
        return it;
    }

private:
    const GramStats<Scalar>& stats_;
    Matrix<Scalar> H_;
    LassoOptions opts_;
    std::optional<Eigen::PartialPivLU<Matrix<Scalar>>> lu_;
};

/// Largest per-coordinate violation of 0 in 2(G b - c) + H nu + lambda w .* sign(b)
/// (coordinates with |b_i| <= zero_tol may take any subgradient in [-1, 1]).
template <typename Scalar>
double lasso_subgradient_violation(const GramStats<Scalar>& s, Index column, const Matrix<Scalar>& H,
                                   const Vector<Scalar>& b, const Vector<Scalar>& nu, Scalar lambda,
                                   const Vector<Scalar>& weights, double zero_tol = 1e-6) {
    Vector<Scalar> g = Scalar(2) * (s.G * b - s.C.col(column));
    if (H.cols() > 0) g += H * nu;
    double worst = 0.0;
    for (Index i = 0; i < b.size(); ++i) {
        const double gi = static_cast<double>(g(i));
        const double pen = static_cast<double>(lambda * weights(i));
        const double bi = static_cast<double>(b(i));
        const double v = std::abs(bi) > zero_tol ? std::abs(gi + pen * (bi > 0 ? 1.0 : -1.0))
                                                 : std::max(0.0, std::abs(gi) - pen);
        worst = std::max(worst, v);
    }
    return worst;
}

namespace detail {

template <typename Scalar>
RegressionFit<Scalar> lasso_fit(const GramStats<Scalar>& s, const Matrix<Scalar>& H, const Vector<Scalar>& lambdas,
                                const Matrix<Scalar>& weights, const LassoOptions& opts, FitKind kind) {
    const Index d = s.d();
    const Index k = s.k();
    const bool constrained = H.cols() > 0;
    if (constrained) check_constraint_map(s, H);
    require_dims(lambdas.size() == k, "lasso: need one lambda per state");
    require_dims(weights.rows() == d && weights.cols() == k, "lasso: penalty weights must be d x k");
    if ((lambdas.array() < Scalar(0)).any()) throw InvalidArgument("lasso: lambdas must be >= 0");
    if ((weights.array() < Scalar(0)).any()) throw InvalidArgument("lasso: penalty weights must be >= 0");

    LassoSplitting<Scalar> splitting(s, H, opts);
    RegressionFit<Scalar> fit;
    fit.kind = kind;
    fit.lambdas = lambdas;
    fit.penalty_weights = weights;
    fit.B_hat.resize(d, k);
    if (constrained) fit.duals.resize(k, k);
    fit.diagnostics.objective.resize(static_cast<std::size_t>(k));
    const Matrix<Scalar> eye = Matrix<Scalar>::Identity(k, k);

    for (Index j = 0; j < k; ++j) {
        const Vector<Scalar> target = constrained ? Vector<Scalar>(eye.col(j)) : Vector<Scalar>();
        const Vector<Scalar> w = weights.col(j);
        auto it = splitting.solve(j, target, lambdas(j), w);
        fit.B_hat.col(j) = it.b;
        if (constrained) fit.duals.col(j) = it.nu * (Scalar(s.t) / Scalar(2));
        fit.diagnostics.iterations = std::max(fit.diagnostics.iterations, it.iterations);
        fit.diagnostics.converged = fit.diagnostics.converged && it.converged;
        fit.diagnostics.objective[static_cast<std::size_t>(j)] = static_cast<double>(
            quadratic_loss(s, j, it.b) + lambdas(j) * (w.array() * it.b.array()).abs().sum());
        fit.diagnostics.kkt_residual = std::max(
            fit.diagnostics.kkt_residual, lasso_subgradient_violation<Scalar>(s, j, H, it.b, it.nu, lambdas(j), w));
    }
    if (!fit.diagnostics.converged && opts.throw_on_nonconvergence)
        throw NonConvergence<Scalar>("lasso splitting did not converge in " + std::to_string(opts.max_iterations) +
                                         " iterations",
                                     fit);
    return fit;
}

} // namespace detail

// ---------------------------------------------------------------------------------------------
// Constrained fits (H^T b_j = e_j)

template <typename Scalar>
RegressionFit<Scalar> fit_constrained_ridge(const GramStats<Scalar>& s, const Matrix<Scalar>& H,
                                            const Vector<Scalar>& lambdas) {
    return detail::ridge_fit<Scalar>(s, H, lambdas, FitKind::ConstrainedRidge);
}

template <typename Scalar>
RegressionFit<Scalar> fit_constrained_ridge(const GramStats<Scalar>& s, const Matrix<Scalar>& H, Scalar lambda) {
    return fit_constrained_ridge<Scalar>(s, H, Vector<Scalar>::Constant(s.k(), lambda));
}

template <typename Scalar>
RegressionFit<Scalar> fit_constrained_ridge(const Matrix<Scalar>& X, const Matrix<Scalar>& Z,
                                            const Matrix<Scalar>& H, Scalar lambda) {
    return fit_constrained_ridge<Scalar>(gram_stats(X, Z), H, lambda);
}

template <typename Scalar>
RegressionFit<Scalar> fit_constrained_ls(const GramStats<Scalar>& s, const Matrix<Scalar>& H) {
    return detail::ridge_fit<Scalar>(s, H, Vector<Scalar>::Zero(s.k()), FitKind::ConstrainedLS);
}

/// Each column minimizes sum_i (x_ij - b_j^T z_i)^2 subject to H^T b_j = e_j.
template <typename Scalar>
RegressionFit<Scalar> fit_constrained_ls(const Matrix<Scalar>& X, const Matrix<Scalar>& Z, const Matrix<Scalar>& H) {
    return fit_constrained_ls<Scalar>(gram_stats(X, Z), H);
}

template <typename Scalar>
RegressionFit<Scalar> fit_constrained_lasso(const GramStats<Scalar>& s, const Matrix<Scalar>& H,
                                            const Vector<Scalar>& lambdas, const Matrix<Scalar>& penalty_weights,
                                            const LassoOptions& opts = {}) {
    return detail::lasso_fit<Scalar>(s, H, lambdas, penalty_weights, opts, FitKind::ConstrainedLasso);
}

template <typename Scalar>
RegressionFit<Scalar> fit_constrained_lasso(const Matrix<Scalar>& X, const Matrix<Scalar>& Z, const Matrix<Scalar>& H,
                                            const Vector<Scalar>& lambdas, const Matrix<Scalar>& penalty_weights,
                                            const LassoOptions& opts = {}) {
    return fit_constrained_lasso<Scalar>(gram_stats(X, Z), H, lambdas, penalty_weights, opts);
}

// ---------------------------------------------------------------------------------------------
// Unconstrained fits

template <typename Scalar>
RegressionFit<Scalar> fit_ridge(const GramStats<Scalar>& s, const Vector<Scalar>& lambdas) {
    return detail::ridge_fit<Scalar>(s, Matrix<Scalar>(s.d(), 0), lambdas, FitKind::Ridge);
}

template <typename Scalar>
RegressionFit<Scalar> fit_ridge(const Matrix<Scalar>& X, const Matrix<Scalar>& Z, Scalar lambda) {
    const auto s = gram_stats(X, Z);
    return fit_ridge<Scalar>(s, Vector<Scalar>::Constant(s.k(), lambda));
}

template <typename Scalar>
RegressionFit<Scalar> fit_lasso(const GramStats<Scalar>& s, const Vector<Scalar>& lambdas,
                                const LassoOptions& opts = {}) {
    return detail::lasso_fit<Scalar>(s, Matrix<Scalar>(s.d(), 0), lambdas, Matrix<Scalar>::Ones(s.d(), s.k()), opts,
                                     FitKind::Lasso);
}

template <typename Scalar>
RegressionFit<Scalar> fit_lasso(const Matrix<Scalar>& X, const Matrix<Scalar>& Z, const Vector<Scalar>& lambdas,
                                const LassoOptions& opts = {}) {
    return fit_lasso<Scalar>(gram_stats(X, Z), lambdas, opts);
}

/// B_hat^T z.
template <typename Scalar>
Vector<Scalar> predict(const RegressionFit<Scalar>& fit, const Vector<Scalar>& z) {
    require_dims(z.size() == fit.d(), "predict: measurement size differs from d");
    return fit.B_hat.transpose() * z;
}

/// max |H^T B_hat - I|.
template <typename Scalar>
double constraint_residual(const RegressionFit<Scalar>& fit, const Matrix<Scalar>& H) {
    require_dims(H.rows() == fit.d() && H.cols() == fit.k(), "constraint_residual: H shape differs from d x k");
    return static_cast<double>(
        (H.transpose() * fit.B_hat - Matrix<Scalar>::Identity(fit.k(), fit.k())).cwiseAbs().maxCoeff());
}

} // namespace fusereg
