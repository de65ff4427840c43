#include "fusereg/kalman.hpp"
#include "fusereg/synthetic.hpp"
#include "oracles.hpp"

#include <doctest.h>

using namespace fusereg;

namespace {

MatrixXd scalar(double v) { return MatrixXd::Constant(1, 1, v); }
VectorXd vec1(double v) { return VectorXd::Constant(1, v); }

} // namespace

TEST_SUITE("kalman") {

TEST_CASE("predict with identity dynamics and no noise is a no-op") {
    auto sys = random_linear_system<double>(1, 2, 3);
    sys.F.setIdentity();
    sys.Q.setZero();
    KalmanState<double> s{(VectorXd(2) << 1, -2).finished(), MatrixXd::Identity(2, 2) * 3, 0};
    const auto p = kf_predict(s, sys);
    CHECK(p.x_bar == s.x_hat);
    CHECK(p.P_bar == s.P);
    CHECK(p.t == 1);
}

TEST_CASE("predict scalar F=1, P=0, Q=1 gives P_bar = 1; F=0 gives Q") {
    LinearSystemd sys{scalar(1), scalar(1), scalar(1), scalar(1)};
    const auto p = kf_predict(KalmanState<double>{vec1(3), scalar(0), 0}, sys);
    CHECK(p.P_bar(0, 0) == 1.0);
    auto sys2 = random_linear_system<double>(4, 2, 2);
    sys2.F.setZero();
    const auto q = kf_predict(KalmanState<double>{VectorXd::Ones(2), MatrixXd::Identity(2, 2), 0}, sys2);
    CHECK(q.x_bar.isZero());
    CHECK((q.P_bar - sys2.Q).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("predict rejects mismatched dimensions") {
    const auto sys = random_linear_system<double>(1, 2, 3);
    CHECK_THROWS_AS(kf_predict(KalmanState<double>{VectorXd::Zero(3), MatrixXd::Identity(3, 3), 0}, sys),
                    DimensionMismatch);
}

TEST_CASE("update scalar hand case") {
    LinearSystemd sys{scalar(1), scalar(1), scalar(0), scalar(1)};
    KfIntermediate<double> inter{vec1(0), scalar(1), {}, 1};
    const auto s = kf_update(inter, vec1(2), sys);
    CHECK(s.x_hat(0) == doctest::Approx(1.0));
    CHECK(s.P(0, 0) == doctest::Approx(0.5));
    CHECK(kalman_gain<double>(scalar(1), scalar(1), scalar(1))(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("huge R ignores the measurement") {
    auto sys = random_linear_system<double>(6, 2, 3);
    sys.R = 1e12 * MatrixXd::Identity(3, 3);
    KfIntermediate<double> inter{(VectorXd(2) << 0.7, -0.4).finished(), MatrixXd::Identity(2, 2), {}, 1};
    const auto s = kf_update(inter, (VectorXd(3) << 5, 5, 5).finished(), sys);
    CHECK((s.x_hat - inter.x_bar).norm() <= 1e-6 * inter.x_bar.norm());
}

TEST_CASE("zero innovation leaves the prediction unchanged") {
    const auto sys = random_linear_system<double>(7, 2, 4);
    KfIntermediate<double> inter{(VectorXd(2) << 0.1, 0.2).finished(), MatrixXd::Identity(2, 2), {}, 1};
    const auto s = kf_update(inter, VectorXd(sys.H * inter.x_bar), sys);
    CHECK((s.x_hat - inter.x_bar).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("singular innovation covariance is reported") {
    LinearSystemd sys{scalar(1), scalar(1), scalar(0), scalar(0)};
    KfIntermediate<double> inter{vec1(0), scalar(0), {}, 1};
    CHECK_THROWS_AS(kf_update(inter, vec1(1), sys), SingularInnovation);
}

TEST_CASE("run_kf handles empty input and tags failing steps") {
    const auto sys = random_linear_system<double>(2, 2, 3);
    CHECK(run_kf<double>(sys, VectorXd::Zero(2), MatrixXd::Identity(2, 2), MatrixXd(0, 3)).empty());

    LinearSystemd degenerate{scalar(1), scalar(1), scalar(0), scalar(0)};
    try {
        run_kf<double>(degenerate, vec1(0), scalar(1), MatrixXd::Ones(3, 1));
        FAIL("expected SingularInnovation");
    } catch (const SingularInnovation& e) {
        // P collapses to 0 after the first noiseless update, so step 2 fails.
        CHECK(e.step() == 2);
    }
}

TEST_CASE("one step of run_kf equals update(predict)") {
    const auto sys = random_linear_system<double>(3, 2, 3);
    const auto traj = simulate_lds<double>(sys, VectorXd::Zero(2), 1, 3);
    const VectorXd x0 = VectorXd::Zero(2);
    const MatrixXd P0 = 1e3 * MatrixXd::Identity(2, 2);
    const auto run = run_kf<double>(sys, x0, P0, traj.measurements);
    const auto manual = kf_update(kf_predict(KalmanState<double>{x0, P0, 0}, sys),
                                  VectorXd(traj.measurements.row(0).transpose()), sys);
    CHECK(run[0].x_hat == manual.x_hat);
    CHECK(run[0].P == manual.P);
}

TEST_CASE("run_kf matches the batch joint-Gaussian posterior mean") {
    const auto sys = random_linear_system<double>(21, 2, 3);
    const VectorXd x0 = (VectorXd(2) << 0.5, -0.5).finished();
    const MatrixXd P0 = 2.0 * MatrixXd::Identity(2, 2);
    const auto traj = simulate_lds<double>(sys, x0, 15, 22);
    const auto kf = run_kf<double>(sys, x0, P0, traj.measurements);
    const auto batch = oracle::batch_posterior_means(sys, x0, P0, traj.measurements);
    double worst = 0.0;
    for (std::size_t t = 0; t < kf.size(); ++t) worst = std::max(worst, (kf[t].x_hat - batch[t]).cwiseAbs().maxCoeff());
    CHECK(worst <= 1e-8);
}

TEST_CASE("covariance invariants along a run") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto sys = random_linear_system<double>(seed, 1 + seed % 3, 4);
        const Index k = sys.k();
        const auto traj = simulate_lds<double>(sys, VectorXd::Zero(k), 30, seed);
        KalmanState<double> state{VectorXd::Zero(k), 10 * MatrixXd::Identity(k, k), 0};
        for (Index i = 0; i < 30; ++i) {
            const auto inter = kf_predict(state, sys);
            state = kf_update(inter, VectorXd(traj.measurements.row(i).transpose()), sys);
            CHECK(state.P.trace() <= inter.P_bar.trace() + 1e-10);
            CHECK((state.P - state.P.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
            CHECK(eigen_range(state.P).first >= -1e-8);
            const MatrixXd K = kalman_gain(inter.P_bar, sys.H, sys.R);
            const MatrixXd IKH = MatrixXd::Identity(k, k) - K * sys.H;
            const MatrixXd joseph = IKH * inter.P_bar * IKH.transpose() + K * sys.R * K.transpose();
            CHECK((joseph - state.P).norm() <= 1e-8 * state.P.norm());
        }
    }
}

TEST_CASE("run_kf is invariant to joint covariance rescaling") {
    const auto sys = random_linear_system<double>(31, 3, 5);
    const auto traj = simulate_lds<double>(sys, VectorXd::Zero(3), 40, 32);
    const MatrixXd P0 = MatrixXd::Identity(3, 3);
    const auto base = run_kf<double>(sys, VectorXd::Zero(3), P0, traj.measurements);
    for (double s : {0.01, 7.0, 1e3}) {
        LinearSystemd scaled{sys.F, sys.H, s * sys.Q, s * sys.R};
        const auto run = run_kf<double>(scaled, VectorXd::Zero(3), s * P0, traj.measurements);
        double worst = 0.0;
        for (std::size_t t = 0; t < run.size(); ++t) worst = std::max(worst, (run[t].x_hat - base[t].x_hat).cwiseAbs().maxCoeff());
        CHECK(worst <= 1e-9);
    }
}

TEST_CASE("EKF with linear maps equals the KF") {
    const auto sys = random_linear_system<double>(41, 2, 3);
    const auto nsys = NonlinearSystemd::from_linear(sys);
    const auto traj = simulate_lds<double>(sys, VectorXd::Zero(2), 20, 42);
    KalmanState<double> ekf{VectorXd::Zero(2), MatrixXd::Identity(2, 2), 0};
    KalmanState<double> kf = ekf;
    for (Index i = 0; i < 20; ++i) {
        const VectorXd z = traj.measurements.row(i).transpose();
        ekf = ekf_step(ekf, nsys, z).first;
        kf = kf_update(kf_predict(kf, sys), z, sys);
        CHECK((ekf.x_hat - kf.x_hat).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((ekf.P - kf.P).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("EKF with h(x) = x^2 linearizes at x_bar") {
    NonlinearSystemd sys;
    sys.f = [](const VectorXd& x) -> VectorXd { return x; };
    sys.Df = [](const VectorXd&) -> MatrixXd { return MatrixXd::Identity(1, 1); };
    sys.h = [](const VectorXd& x) -> VectorXd { return x.array().square().matrix(); };
    sys.Dh = [](const VectorXd& x) -> MatrixXd { return 2.0 * x; };
    sys.Q = scalar(0);
    sys.R = scalar(1);
    const KalmanState<double> s{vec1(2), scalar(1), 0};
    const auto [next, inter] = ekf_step(s, sys, vec1(5.0));
    // H = 4, S = 16 + 1, K = 4/17, residual = 5 - 4.
    CHECK(inter.x_bar(0) == 2.0);
    CHECK(inter.K(0, 0) == doctest::Approx(4.0 / 17));
    CHECK(next.x_hat(0) == doctest::Approx(2.0 + 4.0 / 17));
    const auto [same, unused] = ekf_step(s, sys, vec1(4.0));
    CHECK(same.x_hat(0) == doctest::Approx(2.0));
}

TEST_CASE("linearized_predict uses Df(x) x") {
    NonlinearSystemd sys;
    sys.f = [](const VectorXd& x) -> VectorXd { return x.array().sin().matrix(); };
    sys.Df = [](const VectorXd& x) -> MatrixXd { return x.array().cos().matrix().asDiagonal(); };
    sys.h = [](const VectorXd& x) -> VectorXd { return x; };
    sys.Dh = [](const VectorXd&) -> MatrixXd { return MatrixXd::Identity(1, 1); };
    sys.Q = scalar(0.1);
    sys.R = scalar(1);
    const KalmanState<double> s{vec1(0.8), scalar(1), 0};
    CHECK(ekf_step(s, sys, vec1(0)).second.x_bar(0) == doctest::Approx(std::sin(0.8)));
    CHECK(ekf_step(s, sys, vec1(0), EkfOptions{true}).second.x_bar(0) == doctest::Approx(std::cos(0.8) * 0.8));
}

}
