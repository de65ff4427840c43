// Sensor fusion (generalized least squares), the KF <-> SF augmented system, and the
// measurement-noise covariance estimators used by the regression formulation.
#pragma once

#include "fusereg/common.hpp"
#include "fusereg/kalman.hpp"
#include "fusereg/linalg.hpp"

#include <utility>
#include <vector>

namespace fusereg {

/// Measurements stacked with the prediction: z_tilde = (z, x_bar), H_tilde = [H; I], R_tilde = diag(R, P_bar).
template <typename Scalar>
struct AugmentedSystem {
    Vector<Scalar> z_tilde;
    Matrix<Scalar> H_tilde;
    Matrix<Scalar> R_tilde;
};

template <typename Scalar>
struct CovarianceEstimate {
    Matrix<Scalar> R_hat;
    double alpha = 1.0;
    Index t = 0;
};

/// (H^T R^{-1} H)^{-1} H^T R^{-1} z.
template <typename Scalar>
Vector<Scalar> sf_estimate(const Matrix<Scalar>& H, const Matrix<Scalar>& R, const Vector<Scalar>& z) {
    require_dims(R.rows() == H.rows() && R.cols() == H.rows() && z.size() == H.rows(),
                 "sf_estimate: H, R, z shapes inconsistent");
    auto r_ldlt = guarded_ldlt<SingularR>(R, "measurement covariance R");
    const Matrix<Scalar> r_inv_h = r_ldlt.solve(H);
    const Vector<Scalar> r_inv_z = r_ldlt.solve(z);
    const Matrix<Scalar> gram = symmetrized(H.transpose() * r_inv_h);
    auto gram_ldlt = guarded_ldlt<SingularGram>(gram, "H^T R^{-1} H");
    return gram_ldlt.solve(H.transpose() * r_inv_z);
}

template <typename Scalar>
Vector<Scalar> sf_estimate(const AugmentedSystem<Scalar>& aug) {
    return sf_estimate<Scalar>(aug.H_tilde, aug.R_tilde, aug.z_tilde);
}

/// SF with an estimated covariance; refuses the unshrunk estimate when it is rank deficient by construction.
template <typename Scalar>
Vector<Scalar> sf_estimate(const Matrix<Scalar>& H, const CovarianceEstimate<Scalar>& cov, const Vector<Scalar>& z) {
    if (cov.alpha >= 1.0 && cov.t < cov.R_hat.rows())
        throw SingularR("empirical covariance from " + std::to_string(cov.t) + " samples in dimension " +
                        std::to_string(cov.R_hat.rows()) + " is singular; use shrinkage (alpha < 1)");
    return sf_estimate<Scalar>(H, cov.R_hat, z);
}

/// The d x k weight matrix B = R^{-1} H (H^T R^{-1} H)^{-1}, so that sf_estimate(H, R, z) = B^T z.
template <typename Scalar>
Matrix<Scalar> sf_weights(const Matrix<Scalar>& H, const Matrix<Scalar>& R) {
    require_dims(R.rows() == H.rows() && R.cols() == H.rows(), "sf_weights: H, R shapes inconsistent");
    auto r_ldlt = guarded_ldlt<SingularR>(R, "measurement covariance R");
    const Matrix<Scalar> r_inv_h = r_ldlt.solve(H);
    auto gram_ldlt = guarded_ldlt<SingularGram>(symmetrized(H.transpose() * r_inv_h), "H^T R^{-1} H");
    return gram_ldlt.solve(r_inv_h.transpose()).transpose();
}

template <typename Scalar>
AugmentedSystem<Scalar> augment(const Matrix<Scalar>& H, const Matrix<Scalar>& R, const Vector<Scalar>& z,
                                const Vector<Scalar>& x_bar, const Matrix<Scalar>& P_bar) {
    const Index d = H.rows();
    const Index k = H.cols();
    require_dims(R.rows() == d && R.cols() == d && z.size() == d, "augment: R or z shape differs from d");
    require_dims(x_bar.size() == k && P_bar.rows() == k && P_bar.cols() == k,
                 "augment: x_bar or P_bar shape differs from k");
    AugmentedSystem<Scalar> aug;
    aug.z_tilde.resize(d + k);
    aug.z_tilde << z, x_bar;
    aug.H_tilde.resize(d + k, k);
    aug.H_tilde << H, Matrix<Scalar>::Identity(k, k);
    aug.R_tilde = Matrix<Scalar>::Zero(d + k, d + k);
    aug.R_tilde.topLeftCorner(d, d) = R;
    aug.R_tilde.bottomRightCorner(k, k) = P_bar;
    return aug;
}

template <typename Scalar>
AugmentedSystem<Scalar> augment_linear(const LinearSystem<Scalar>& sys, const KfIntermediate<Scalar>& inter,
                                       const Vector<Scalar>& z) {
    return augment<Scalar>(sys.H, sys.R, z, inter.x_bar, inter.P_bar);
}

/// Filters by applying SF to the augmented system at each step. Shares only the covariance
/// recursion with the KF; each state estimate comes from sf_estimate.
template <typename Scalar>
std::vector<Vector<Scalar>> run_augmented_sf(const LinearSystem<Scalar>& sys, const Vector<Scalar>& x0_hat,
                                             const Matrix<Scalar>& P0, const Matrix<Scalar>& Z) {
    require_dims(Z.rows() == 0 || Z.cols() == sys.d(), "run_augmented_sf: measurement columns differ from d");
    std::vector<Vector<Scalar>> out;
    out.reserve(static_cast<std::size_t>(Z.rows()));
    KalmanState<Scalar> state{x0_hat, P0, 0};
    for (Index i = 0; i < Z.rows(); ++i) {
        at_step(static_cast<long>(i + 1), [&] {
            const Vector<Scalar> z = Z.row(i).transpose();
            const KfIntermediate<Scalar> inter = kf_predict(state, sys);
            const Vector<Scalar> estimate = sf_estimate(augment_linear(sys, inter, z));
            state.P = kf_update(inter, z, sys).P;
            state.x_hat = estimate;
            state.t = inter.t;
        });
        out.push_back(state.x_hat);
    }
    return out;
}

/// SF on the linearization-offset augmented system; the nonlinear counterpart of run_augmented_sf.
template <typename Scalar>
KalmanState<Scalar> esf_step(const KalmanState<Scalar>& state, const NonlinearSystem<Scalar>& sys,
                             const Vector<Scalar>& z, const EkfOptions& opts = {}) {
    require_dims(state.x_hat.size() == sys.k() && z.size() == sys.d(), "esf_step: dimension mismatch");
    const Matrix<Scalar> F = sys.Df(state.x_hat);
    const Vector<Scalar> x_bar = opts.linearized_predict ? Vector<Scalar>(F * state.x_hat) : sys.f(state.x_hat);
    const Matrix<Scalar> P_bar = symmetrized(F * state.P * F.transpose() + sys.Q);
    const Matrix<Scalar> H = sys.Dh(x_bar);
    require_dims(H.rows() == sys.d() && H.cols() == sys.k(), "esf_step: Dh shape differs from d x k");

    const Vector<Scalar> offset_z = z + H * x_bar - sys.h(x_bar);
    KalmanState<Scalar> next;
    next.x_hat = sf_estimate(augment<Scalar>(H, sys.R, offset_z, x_bar, P_bar));
    const Matrix<Scalar> K = kalman_gain(P_bar, H, sys.R);
    next.P = symmetrized((Matrix<Scalar>::Identity(sys.k(), sys.k()) - K * H) * P_bar);
    next.t = state.t + 1;
    return next;
}

namespace detail {

template <typename Scalar>
Matrix<Scalar> residuals(const Matrix<Scalar>& X, const Matrix<Scalar>& Z, const Matrix<Scalar>& H) {
    require_dims(X.rows() == Z.rows(), "covariance: X and Z row counts differ");
    require_dims(H.rows() == Z.cols() && H.cols() == X.cols(), "covariance: H shape differs from d x k");
    if (X.rows() == 0) throw EmptyHistory("covariance estimate needs at least one time point");
    return Z - X * H.transpose();
}

} // namespace detail

/// R_hat = (1/t) sum_i (z_i - H x_i)(z_i - H x_i)^T, uncentered.
template <typename Scalar>
CovarianceEstimate<Scalar> empirical_covariance(const Matrix<Scalar>& X, const Matrix<Scalar>& Z,
                                                const Matrix<Scalar>& H) {
    const Matrix<Scalar> e = detail::residuals(X, Z, H);
    CovarianceEstimate<Scalar> out;
    out.t = X.rows();
    out.alpha = 1.0;
    out.R_hat = symmetrized(e.transpose() * e) / Scalar(out.t);
    return out;
}

/// alpha * empirical + (1 - alpha) * I.
template <typename Scalar>
CovarianceEstimate<Scalar> shrunk_covariance(const Matrix<Scalar>& X, const Matrix<Scalar>& Z,
                                             const Matrix<Scalar>& H, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw AlphaOutOfRange("shrinkage alpha must lie in [0, 1]");
    CovarianceEstimate<Scalar> out = empirical_covariance(X, Z, H);
    const Index d = out.R_hat.rows();
    out.R_hat = Scalar(alpha) * out.R_hat + Scalar(1.0 - alpha) * Matrix<Scalar>::Identity(d, d);
    out.alpha = alpha;
    return out;
}

/// Appends k identically-zero sensors: H -> [H; I_k], Z -> [Z, 0].
template <typename Scalar>
std::pair<Matrix<Scalar>, Matrix<Scalar>> zero_pad(const Matrix<Scalar>& H, const Matrix<Scalar>& Z) {
    require_dims(Z.cols() == H.rows(), "zero_pad: Z columns differ from H rows");
    const Index d = H.rows();
    const Index k = H.cols();
    Matrix<Scalar> h_padded(d + k, k);
    h_padded << H, Matrix<Scalar>::Identity(k, k);
    Matrix<Scalar> z_padded = Matrix<Scalar>::Zero(Z.rows(), d + k);
    z_padded.leftCols(d) = Z;
    return {std::move(h_padded), std::move(z_padded)};
}

} // namespace fusereg
