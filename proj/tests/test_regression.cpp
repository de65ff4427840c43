#include "fusereg/fusion.hpp"
#include "fusereg/hierarchy.hpp"
#include "fusereg/io.hpp"
#include "fusereg/regression.hpp"
#include "fusereg/synthetic.hpp"
#include "oracles.hpp"

#include <doctest.h>

using namespace fusereg;

namespace {

struct Instance {
    MatrixXd X, Z, H;
    VectorXd z_next;
};

Instance make_instance(std::uint64_t seed, Index k, Index d, Index t, const MatrixXd* H = nullptr) {
    auto sys = random_linear_system<double>(seed, k, d);
    if (H) sys.H = *H;
    const auto traj = simulate_lds<double>(sys, VectorXd::Zero(k), t + 1, seed + 1);
    return {traj.states.topRows(t), traj.measurements.topRows(t), sys.H, traj.measurements.row(t).transpose()};
}

/// ||Z^T (Z b_j - X_j) + H u_j||_inf over columns, unscaled.
double stationarity(const RegressionFitd& fit, const MatrixXd& X, const MatrixXd& Z, const MatrixXd& H) {
    const double t = static_cast<double>(Z.rows());
    double worst = 0.0;
    for (Index j = 0; j < X.cols(); ++j) {
        VectorXd g = Z.transpose() * (Z * fit.B_hat.col(j) - X.col(j)) + t * fit.lambdas(j) * fit.B_hat.col(j);
        if (H.cols() > 0) g += H * fit.duals.col(j);
        worst = std::max(worst, g.cwiseAbs().maxCoeff());
    }
    return worst;
}

} // namespace

TEST_SUITE("regression") {

TEST_CASE("H = I pins B to the identity") {
    const auto inst = make_instance(1, 3, 3, 30);
    const auto fit = fit_constrained_ls<double>(inst.X, inst.Z, MatrixXd::Identity(3, 3));
    CHECK((fit.B_hat - MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((predict(fit, inst.z_next) - inst.z_next).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("constrained LS matches SF with the empirical covariance on the five-state map") {
    const MatrixXd H = build_measurement_map(five_state_hierarchy());
    const auto inst = make_instance(7, 5, 8, 200, &H);
    const auto fit = fit_constrained_ls<double>(inst.X, inst.Z, inst.H);
    const auto cov = empirical_covariance<double>(inst.X, inst.Z, inst.H);
    CHECK((predict(fit, inst.z_next) - sf_estimate<double>(inst.H, cov, inst.z_next)).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(constraint_residual(fit, inst.H) <= 1e-10);
}

TEST_CASE("constrained LS on random instances: oracle, feasibility, certificates") {
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        const Index k = 1 + seed % 3;
        const Index d = k + 1 + seed % 6;
        const auto inst = make_instance(seed, k, d, d + 10 + seed);
        const auto fit = fit_constrained_ls<double>(inst.X, inst.Z, inst.H);
        CHECK(fit.kind == FitKind::ConstrainedLS);
        CHECK((fit.B_hat - oracle::constrained_ridge(inst.X, inst.Z, inst.H, 0.0)).cwiseAbs().maxCoeff() <= 1e-8);
        CHECK(constraint_residual(fit, inst.H) <= 1e-10);
        CHECK((fit.B_hat.transpose() * inst.H - MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() <= 1e-8);
        CHECK(stationarity(fit, inst.X, inst.Z, inst.H) <= 1e-6);
        CHECK(fit.diagnostics.kkt_residual <= 1e-6);
        const auto cov = empirical_covariance<double>(inst.X, inst.Z, inst.H);
        const VectorXd sf = sf_estimate<double>(inst.H, cov, inst.z_next);
        CHECK((predict(fit, inst.z_next) - sf).cwiseAbs().maxCoeff() <= 1e-8 * (1 + inst.X.cwiseAbs().maxCoeff()));
        // Invariance loop: re-measuring the prediction through H reproduces it.
        const VectorXd p = predict(fit, inst.z_next);
        CHECK((predict(fit, VectorXd(inst.H * p)) - p).cwiseAbs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("the worked j = 3 constraint on the five-state map") {
    const MatrixXd H = build_measurement_map(five_state_hierarchy());
    const auto inst = make_instance(3, 5, 8, 80, &H);
    const auto fit = fit_constrained_ls<double>(inst.X, inst.Z, H);
    const VectorXd b = fit.B_hat.col(2);
    auto bb = [&](int i) { return b(i - 1); };
    CHECK(std::abs(bb(1) + bb(6) / 3 + bb(8) / 5 - 0.0) <= 1e-8);
    CHECK(std::abs(bb(2) + bb(6) / 3 + bb(8) / 5 - 0.0) <= 1e-8);
    CHECK(std::abs(bb(3) + bb(6) / 3 + bb(8) / 5 - 1.0) <= 1e-8);
    CHECK(std::abs(bb(4) + bb(7) / 2 + bb(8) / 5 - 0.0) <= 1e-8);
    CHECK(std::abs(bb(5) + bb(7) / 2 + bb(8) / 5 - 0.0) <= 1e-8);
}

TEST_CASE("singular KKT system is reported") {
    // Z has a null direction that H^T also annihilates.
    MatrixXd Z = MatrixXd::Zero(10, 3);
    Z.col(0).setLinSpaced(10, 1, 10);
    const MatrixXd X = Z.col(0);
    const MatrixXd H = (MatrixXd(3, 1) << 1, 0, 0).finished();
    CHECK_THROWS_AS(fit_constrained_ls<double>(X, Z, H), SingularKKT);
}

TEST_CASE("constrained ridge: lambda 0, shrinkage identity, huge lambda, oracle") {
    const auto inst = make_instance(11, 2, 6, 40);
    const auto ls = fit_constrained_ls<double>(inst.X, inst.Z, inst.H);
    const auto r0 = fit_constrained_ridge<double>(inst.X, inst.Z, inst.H, 0.0);
    CHECK((ls.B_hat - r0.B_hat).cwiseAbs().maxCoeff() <= 1e-12);
    for (double alpha : {0.1, 0.5, 0.9}) {
        const double lambda = (1 - alpha) / alpha;
        const auto fit = fit_constrained_ridge<double>(inst.X, inst.Z, inst.H, lambda);
        const auto cov = shrunk_covariance<double>(inst.X, inst.Z, inst.H, alpha);
        CHECK((predict(fit, inst.z_next) - sf_estimate<double>(inst.H, cov, inst.z_next)).cwiseAbs().maxCoeff() <= 1e-8);
        CHECK((fit.B_hat - oracle::constrained_ridge(inst.X, inst.Z, inst.H, lambda)).cwiseAbs().maxCoeff() <= 1e-8);
        CHECK(stationarity(fit, inst.X, inst.Z, inst.H) <= 1e-6);
    }
    const auto huge = fit_constrained_ridge<double>(inst.X, inst.Z, inst.H, 1e10);
    const MatrixXd min_norm = inst.H * (inst.H.transpose() * inst.H).inverse();
    CHECK((huge.B_hat - min_norm).cwiseAbs().maxCoeff() <= 1e-4);
    CHECK_THROWS_AS(fit_constrained_ridge<double>(inst.X, inst.Z, inst.H, -1.0), InvalidArgument);
}

TEST_CASE("per-column lambdas are honoured") {
    const auto inst = make_instance(13, 3, 6, 40);
    const VectorXd lambdas = (VectorXd(3) << 0.0, 0.5, 2.0).finished();
    const auto fit = fit_constrained_ridge<double>(gram_stats(inst.X, inst.Z), inst.H, lambdas);
    for (Index j = 0; j < 3; ++j) {
        const VectorXd e = MatrixXd::Identity(3, 3).col(j);
        const VectorXd ref = oracle::constrained_ridge_column(inst.Z, inst.X.col(j), inst.H, e, lambdas(j));
        CHECK((fit.B_hat.col(j) - ref).cwiseAbs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("constrained lasso reduces to constrained LS without effective penalty") {
    const auto inst = make_instance(17, 2, 6, 50);
    const auto ls = fit_constrained_ls<double>(inst.X, inst.Z, inst.H);
    const auto zero_lambda =
        fit_constrained_lasso<double>(inst.X, inst.Z, inst.H, VectorXd::Zero(2), MatrixXd::Ones(6, 2));
    CHECK((zero_lambda.B_hat - ls.B_hat).cwiseAbs().maxCoeff() <= 1e-6);
    const auto zero_weights =
        fit_constrained_lasso<double>(inst.X, inst.Z, inst.H, VectorXd::Constant(2, 5.0), MatrixXd::Zero(6, 2));
    CHECK((zero_weights.B_hat - ls.B_hat).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(zero_lambda.diagnostics.converged);
}

TEST_CASE("constrained lasso matches the sign-enumeration oracle") {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        const Index k = 1 + seed % 2;
        const auto inst = make_instance(seed + 40, k, 6, 50);
        const auto stats = gram_stats(inst.X, inst.Z);
        const VectorXd lmax = lasso_lambda_max(stats);
        MatrixXd W = MatrixXd::Ones(6, k);
        if (seed % 2) W.row(0).setZero();
        const VectorXd lambdas = lmax * (0.05 + 0.1 * static_cast<double>(seed % 4));
        const auto fit = fit_constrained_lasso<double>(stats, inst.H, lambdas, W);
        CHECK(fit.diagnostics.converged);
        CHECK(fit.diagnostics.kkt_residual <= 1e-5);
        CHECK(constraint_residual(fit, inst.H) <= 1e-8);
        for (Index j = 0; j < k; ++j) {
            const VectorXd e = MatrixXd::Identity(k, k).col(j);
            const auto ref = oracle::lasso_enumeration(inst.Z, inst.X.col(j), inst.H, e, lambdas(j), W.col(j));
            const double obj = oracle::lasso_objective(inst.Z, inst.X.col(j), fit.B_hat.col(j), lambdas(j), W.col(j));
            // Residual tolerances of 1e-8 leave first-order slack in the l1 term.
            CHECK(obj <= ref.objective + 1e-7);
            CHECK(obj >= ref.objective - 1e-8);
            CHECK(fit.diagnostics.objective[static_cast<std::size_t>(j)] == doctest::Approx(obj).epsilon(1e-9));
        }
    }
}

TEST_CASE("large penalty zeroes the penalized subset where feasible") {
    const auto inst = make_instance(23, 1, 6, 50);
    MatrixXd W = MatrixXd::Zero(6, 1);
    W.bottomRows(3).setOnes();
    // The unpenalized rows can satisfy H^T b = 1 on their own.
    const auto stats = gram_stats(inst.X, inst.Z);
    const VectorXd lambdas = 1e3 * lasso_lambda_max(stats);
    const auto fit = fit_constrained_lasso<double>(stats, inst.H, lambdas, W);
    CHECK(fit.B_hat.bottomRows(3).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(constraint_residual(fit, inst.H) <= 1e-8);
    CHECK(fit.diagnostics.kkt_residual <= 1e-5);
}

TEST_CASE("lasso nonconvergence carries the best iterate") {
    const auto inst = make_instance(29, 2, 5, 30);
    LassoOptions opts;
    opts.max_iterations = 2;
    try {
        fit_constrained_lasso<double>(inst.X, inst.Z, inst.H, VectorXd::Constant(2, 0.1), MatrixXd::Ones(5, 2), opts);
        FAIL("expected NonConvergence");
    } catch (const NonConvergence<double>& e) {
        CHECK(e.best().B_hat.rows() == 5);
        CHECK_FALSE(e.best().diagnostics.converged);
        CHECK(e.best().diagnostics.iterations == 2);
    }
    opts.throw_on_nonconvergence = false;
    const auto fit =
        fit_constrained_lasso<double>(inst.X, inst.Z, inst.H, VectorXd::Constant(2, 0.1), MatrixXd::Ones(5, 2), opts);
    CHECK_FALSE(fit.diagnostics.converged);
}

TEST_CASE("unconstrained ridge and lasso") {
    const auto inst = make_instance(31, 2, 4, 40);
    const auto ols = fit_ridge<double>(inst.X, inst.Z, 0.0);
    const MatrixXd ref = inst.Z.colPivHouseholderQr().solve(inst.X);
    CHECK((ols.B_hat - ref).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(ols.duals.size() == 0);
    CHECK(stationarity(ols, inst.X, inst.Z, MatrixXd(4, 0)) <= 1e-6);

    const double lambda = 0.3;
    const auto ridge = fit_ridge<double>(inst.X, inst.Z, lambda);
    const double t = 40.0;
    const MatrixXd ridge_ref =
        (inst.Z.transpose() * inst.Z / t + lambda * MatrixXd::Identity(4, 4)).ldlt().solve(inst.Z.transpose() * inst.X / t);
    CHECK((ridge.B_hat - ridge_ref).cwiseAbs().maxCoeff() <= 1e-10);

    const auto stats = gram_stats(inst.X, inst.Z);
    const VectorXd lmax = lasso_lambda_max(stats);
    CHECK(lmax(0) == doctest::Approx(2.0 / t * (inst.Z.transpose() * inst.X.col(0)).cwiseAbs().maxCoeff()));
    const auto at_max = fit_lasso<double>(stats, lmax);
    CHECK(at_max.B_hat.cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(at_max.diagnostics.kkt_residual <= 1e-5);
    const auto mid = fit_lasso<double>(stats, VectorXd(0.2 * lmax));
    CHECK(mid.diagnostics.kkt_residual <= 1e-5);
    for (Index j = 0; j < 2; ++j) {
        const auto ref_l = oracle::lasso_enumeration(inst.Z, inst.X.col(j), MatrixXd(4, 0), VectorXd(0), 0.2 * lmax(j),
                                                     VectorXd::Ones(4));
        CHECK(oracle::lasso_objective(inst.Z, inst.X.col(j), mid.B_hat.col(j), 0.2 * lmax(j), VectorXd::Ones(4)) ==
              doctest::Approx(ref_l.objective).epsilon(1e-8));
    }
}

TEST_CASE("ordinary least squares with fewer samples than sensors is not defined") {
    const auto inst = make_instance(37, 1, 6, 4);
    CHECK_THROWS_AS(fit_ridge<double>(inst.X, inst.Z, 0.0), SingularGram);
    CHECK(fit_ridge<double>(inst.X, inst.Z, 0.1).B_hat.allFinite());
}

TEST_CASE("zero padding removes the constraint") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const Index k = 1 + seed % 3;
        const Index d = k + seed % 4;
        const auto inst = make_instance(seed + 60, k, d, d + k + 10 + seed);
        const auto [Hp, Zp] = zero_pad<double>(inst.H, inst.Z);
        VectorXd zp = VectorXd::Zero(d + k);
        zp.head(d) = inst.z_next;
        const auto padded = fit_constrained_ls<double>(inst.X, Zp, Hp);
        const auto ols = fit_ridge<double>(inst.X, inst.Z, 0.0);
        CHECK((predict(padded, zp) - predict(ols, inst.z_next)).cwiseAbs().maxCoeff() <= 1e-8);
        const auto cov = empirical_covariance<double>(inst.X, Zp, Hp);
        CHECK((sf_estimate<double>(Hp, cov, zp) - predict(ols, inst.z_next)).cwiseAbs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("padded system with shrinkage is ridge with an extra constraint penalty") {
    // On the padded system the identity rows absorb the constraint, leaving
    // (1/t)||x - Z b||^2 + lambda (||b||^2 + ||e_j - H^T b||^2), not plain ridge.
    const auto inst = make_instance(71, 2, 5, 40);
    const auto [Hp, Zp] = zero_pad<double>(inst.H, inst.Z);
    VectorXd zp = VectorXd::Zero(7);
    zp.head(5) = inst.z_next;
    const double t = 40.0;
    for (double alpha : {0.1, 0.5, 0.9}) {
        const double lambda = (1 - alpha) / alpha;
        const auto cov = shrunk_covariance<double>(inst.X, Zp, Hp, alpha);
        const VectorXd sf = sf_estimate<double>(Hp, cov, zp);
        const MatrixXd A = inst.Z.transpose() * inst.Z / t + lambda * (MatrixXd::Identity(5, 5) + inst.H * inst.H.transpose());
        const MatrixXd rhs = inst.Z.transpose() * inst.X / t + lambda * inst.H;
        const MatrixXd B = A.ldlt().solve(rhs);
        CHECK((sf - B.transpose() * inst.z_next).cwiseAbs().maxCoeff() <= 1e-8);
        const auto ridge = fit_ridge<double>(inst.X, inst.Z, lambda);
        CHECK((sf - predict(ridge, inst.z_next)).cwiseAbs().maxCoeff() > 1e-6);
    }
}

TEST_CASE("predict contracts and fit JSON round trip") {
    const auto inst = make_instance(41, 2, 4, 30);
    const auto fit = fit_constrained_ridge<double>(inst.X, inst.Z, inst.H, 0.2);
    CHECK(predict(fit, VectorXd(VectorXd::Zero(4))).isZero(0.0));
    CHECK_THROWS_AS(predict(fit, VectorXd(VectorXd::Zero(3))), DimensionMismatch);
    const auto back = fit_from_json(fit_to_json(fit));
    CHECK(back.kind == fit.kind);
    CHECK(back.B_hat == fit.B_hat);
    CHECK(back.duals == fit.duals);
    CHECK(back.lambdas == fit.lambdas);
    CHECK(back.diagnostics.kkt_residual == fit.diagnostics.kkt_residual);
    for (auto kind : {FitKind::ConstrainedLS, FitKind::ConstrainedRidge, FitKind::ConstrainedLasso, FitKind::Ridge,
                      FitKind::Lasso})
        CHECK(fit_kind_from_string(to_string(kind)) == kind);
}

}
