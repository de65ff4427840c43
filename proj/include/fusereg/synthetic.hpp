// Seeded generators for random test systems.
#pragma once

#include "fusereg/lds.hpp"

#include <cstdint>
#include <random>

namespace fusereg {

struct RandomSystemOptions {
    double spectral_radius = 0.9;  // of F
    double q_scale = 0.1;
    double r_scale = 1.0;
    double h_scale = 1.0;          // upper bound on ||H||_2 when positive
    bool normalize_h = false;
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> gaussian_matrix(std::mt19937_64& rng, Index rows, Index cols) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix<Scalar> m(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) m(i, j) = Scalar(normal(rng));
    return m;
}

template <typename Scalar>
Matrix<Scalar> random_spd(std::mt19937_64& rng, Index n, double scale) {
    Matrix<Scalar> a = gaussian_matrix<Scalar>(rng, n, n);
    Matrix<Scalar> m = a * a.transpose() / Scalar(n) + Scalar(0.2) * Matrix<Scalar>::Identity(n, n);
    m *= Scalar(scale);
    return symmetrized(m);
}

} // namespace detail

/// Random stable system with full-column-rank H and SPD Q, R. Requires d >= k.
template <typename Scalar = double>
LinearSystem<Scalar> random_linear_system(std::mt19937_64& rng, Index k, Index d,
                                          const RandomSystemOptions& opts = {}) {
    if (d < k) throw InvalidArgument("random_linear_system: d < k leaves H rank deficient");
    LinearSystem<Scalar> sys;
    Matrix<Scalar> f = detail::gaussian_matrix<Scalar>(rng, k, k);
    const double radius = f.eigenvalues().cwiseAbs().maxCoeff();
    sys.F = f * Scalar(opts.spectral_radius / std::max(radius, 1e-12));
    for (;;) {
        sys.H = detail::gaussian_matrix<Scalar>(rng, d, k);
        Eigen::JacobiSVD<Matrix<Scalar>> svd(sys.H);
        const auto& sv = svd.singularValues();
        if (sv.minCoeff() > Scalar(1e-3) * sv.maxCoeff()) {
            if (opts.normalize_h) sys.H *= Scalar(opts.h_scale) / sv.maxCoeff();
            break;
        }
    }
    sys.Q = detail::random_spd<Scalar>(rng, k, opts.q_scale);
    sys.R = detail::random_spd<Scalar>(rng, d, opts.r_scale);
    return sys;
}

template <typename Scalar = double>
LinearSystem<Scalar> random_linear_system(std::uint64_t seed, Index k, Index d,
                                          const RandomSystemOptions& opts = {}) {
    std::mt19937_64 rng(seed);
    return random_linear_system<Scalar>(rng, k, d, opts);
}

/// Random smooth nonlinear system: f(x) = A x + c * sin(x), h_i(x) = (H x)_i + g_i * x_{i mod k}^2.
template <typename Scalar = double>
NonlinearSystem<Scalar> random_nonlinear_system(std::uint64_t seed, Index k, Index d) {
    std::mt19937_64 rng(seed);
    RandomSystemOptions opts;
    opts.spectral_radius = 0.6;
    LinearSystem<Scalar> base = random_linear_system<Scalar>(rng, k, d, opts);
    std::uniform_real_distribution<double> unif(-0.5, 0.5);
    const Scalar c = Scalar(unif(rng));
    Vector<Scalar> g(d);
    for (Index i = 0; i < d; ++i) g(i) = Scalar(unif(rng));

    NonlinearSystem<Scalar> sys;
    sys.f = [A = base.F, c](const Vector<Scalar>& x) -> Vector<Scalar> {
        return A * x + c * x.array().sin().matrix();
    };
    sys.Df = [A = base.F, c](const Vector<Scalar>& x) -> Matrix<Scalar> {
        Matrix<Scalar> j = A;
        j.diagonal() += c * x.array().cos().matrix();
        return j;
    };
    sys.h = [H = base.H, g, k](const Vector<Scalar>& x) -> Vector<Scalar> {
        Vector<Scalar> z = H * x;
        for (Index i = 0; i < z.size(); ++i) z(i) += g(i) * x(i % k) * x(i % k);
        return z;
    };
    sys.Dh = [H = base.H, g, k](const Vector<Scalar>& x) -> Matrix<Scalar> {
        Matrix<Scalar> j = H;
        for (Index i = 0; i < j.rows(); ++i) j(i, i % k) += Scalar(2) * g(i) * x(i % k);
        return j;
    };
    sys.Q = base.Q;
    sys.R = base.R;
    return sys;
}

/// Simulates a nonlinear system with Gaussian noise, same draw order as simulate_lds.
template <typename Scalar>
Trajectory<Scalar> simulate_nonlinear(const NonlinearSystem<Scalar>& sys, const Vector<Scalar>& x0,
                                      Index steps, std::uint64_t seed) {
    const Matrix<Scalar> q_factor = psd_factor(sys.Q);
    const Matrix<Scalar> r_factor = psd_factor(sys.R);
    std::mt19937_64 rng(seed);
    Trajectory<Scalar> traj;
    traj.states.resize(steps, sys.k());
    traj.measurements.resize(steps, sys.d());
    traj.mask = MaskMatrix::Constant(steps, sys.d(), true);
    Vector<Scalar> x = x0;
    for (Index i = 0; i < steps; ++i) {
        x = sys.f(x) + detail::gaussian_draw(rng, q_factor);
        traj.states.row(i) = x.transpose();
        traj.measurements.row(i) = (sys.h(x) + detail::gaussian_draw(rng, r_factor)).transpose();
    }
    return traj;
}

} // namespace fusereg
