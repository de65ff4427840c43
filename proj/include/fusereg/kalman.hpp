// Kalman filter and extended Kalman filter.
#pragma once

#include "fusereg/common.hpp"
#include "fusereg/lds.hpp"
#include "fusereg/linalg.hpp"

#include <utility>
#include <vector>

namespace fusereg {

/// Filtered estimate x_hat_t with error covariance P_t.
template <typename Scalar>
struct KalmanState {
    Vector<Scalar> x_hat;
    Matrix<Scalar> P;
    long t = 0;
};

/// Predicted state x_bar_{t+1}, its covariance P_bar_{t+1} and (after an update) the gain K_{t+1}.
template <typename Scalar>
struct KfIntermediate {
    Vector<Scalar> x_bar;
    Matrix<Scalar> P_bar;
    Matrix<Scalar> K;
    long t = 0;
};

struct EkfOptions {
    /// Predict with x_bar = Df(x_hat) x_hat instead of f(x_hat).
    bool linearized_predict = false;
};

/// x_bar = F x_hat, P_bar = F P F^T + Q.
template <typename Scalar>
KfIntermediate<Scalar> kf_predict(const KalmanState<Scalar>& state, const LinearSystem<Scalar>& sys) {
    require_dims(state.x_hat.size() == sys.k() && state.P.rows() == sys.k() && state.P.cols() == sys.k(),
                 "kf_predict: state dimension differs from k");
    require_dims(sys.F.cols() == sys.k() && sys.Q.rows() == sys.k() && sys.Q.cols() == sys.k(),
                 "kf_predict: F or Q shape inconsistent");
    KfIntermediate<Scalar> out;
    out.x_bar = sys.F * state.x_hat;
    out.P_bar = symmetrized(sys.F * state.P * sys.F.transpose() + sys.Q);
    out.t = state.t + 1;
    return out;
}

/// K = P_bar H^T (H P_bar H^T + R)^{-1}, via an LDLT of the innovation covariance.
template <typename Scalar>
Matrix<Scalar> kalman_gain(const Matrix<Scalar>& P_bar, const Matrix<Scalar>& H, const Matrix<Scalar>& R) {
    require_dims(H.cols() == P_bar.rows() && R.rows() == H.rows() && R.cols() == H.rows(),
                 "kalman_gain: H, P_bar, R shapes inconsistent");
    const Matrix<Scalar> innovation_cov = symmetrized(H * P_bar * H.transpose() + R);
    auto ldlt = guarded_ldlt<SingularInnovation>(innovation_cov, "innovation covariance H P_bar H^T + R");
    // S symmetric, so K^T = S^{-1} H P_bar.
    return ldlt.solve(H * P_bar).transpose();
}

namespace detail {

template <typename Scalar>
KalmanState<Scalar> apply_gain(const Vector<Scalar>& x_bar, const Matrix<Scalar>& P_bar,
                               const Matrix<Scalar>& K, const Matrix<Scalar>& H,
                               const Vector<Scalar>& innovation, long t) {
    const Index k = x_bar.size();
    KalmanState<Scalar> out;
    out.x_hat = x_bar + K * innovation;
    out.P = symmetrized((Matrix<Scalar>::Identity(k, k) - K * H) * P_bar);
    out.t = t;
    return out;
}

} // namespace detail

/// x_hat = x_bar + K (z - H x_bar), P = (I - K H) P_bar, re-symmetrized.
template <typename Scalar>
KalmanState<Scalar> kf_update(const KfIntermediate<Scalar>& inter, const Vector<Scalar>& z,
                              const LinearSystem<Scalar>& sys) {
    require_dims(inter.x_bar.size() == sys.k() && inter.P_bar.rows() == sys.k(),
                 "kf_update: intermediate dimension differs from k");
    require_dims(z.size() == sys.d(), "kf_update: measurement size differs from d");
    const Matrix<Scalar> K = kalman_gain(inter.P_bar, sys.H, sys.R);
    return detail::apply_gain<Scalar>(inter.x_bar, inter.P_bar, K, sys.H, z - sys.H * inter.x_bar, inter.t);
}

/// Filters every row of Z. Failures are re-raised tagged with the 1-based step.
template <typename Scalar>
std::vector<KalmanState<Scalar>> run_kf(const LinearSystem<Scalar>& sys, const Vector<Scalar>& x0_hat,
                                        const Matrix<Scalar>& P0, const Matrix<Scalar>& Z) {
    require_dims(Z.rows() == 0 || Z.cols() == sys.d(), "run_kf: measurement columns differ from d");
    std::vector<KalmanState<Scalar>> out;
    out.reserve(static_cast<std::size_t>(Z.rows()));
    KalmanState<Scalar> state{x0_hat, P0, 0};
    for (Index i = 0; i < Z.rows(); ++i) {
        state = at_step(static_cast<long>(i + 1), [&] {
            return kf_update(kf_predict(state, sys), Vector<Scalar>(Z.row(i).transpose()), sys);
        });
        out.push_back(state);
    }
    return out;
}

/// One EKF step. The returned intermediate carries x_bar, P_bar and the gain used.
template <typename Scalar>
std::pair<KalmanState<Scalar>, KfIntermediate<Scalar>> ekf_step(const KalmanState<Scalar>& state,
                                                                const NonlinearSystem<Scalar>& sys,
                                                                const Vector<Scalar>& z,
                                                                const EkfOptions& opts = {}) {
    require_dims(state.x_hat.size() == sys.k() && z.size() == sys.d(), "ekf_step: dimension mismatch");
    const Matrix<Scalar> F = sys.Df(state.x_hat);
    KfIntermediate<Scalar> inter;
    inter.x_bar = opts.linearized_predict ? Vector<Scalar>(F * state.x_hat) : sys.f(state.x_hat);
    inter.P_bar = symmetrized(F * state.P * F.transpose() + sys.Q);
    inter.t = state.t + 1;

    const Matrix<Scalar> H = sys.Dh(inter.x_bar);
    require_dims(H.rows() == sys.d() && H.cols() == sys.k(), "ekf_step: Dh shape differs from d x k");
    inter.K = kalman_gain(inter.P_bar, H, sys.R);
    KalmanState<Scalar> next =
        detail::apply_gain<Scalar>(inter.x_bar, inter.P_bar, inter.K, H, z - sys.h(inter.x_bar), inter.t);
    return {std::move(next), std::move(inter)};
}

} // namespace fusereg
