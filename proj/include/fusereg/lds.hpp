// Linear dynamical systems: x_t = F x_{t-1} + delta_t, z_t = H x_t + eps_t.
#pragma once

#include "fusereg/common.hpp"
#include "fusereg/linalg.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace fusereg {

/// Time-invariant linear system. F is k x k, H is d x k, Q is k x k, R is d x d.
template <typename Scalar>
struct LinearSystem {
    Matrix<Scalar> F;
    Matrix<Scalar> H;
    Matrix<Scalar> Q;
    Matrix<Scalar> R;

    Index k() const { return F.rows(); }
    Index d() const { return H.rows(); }
};

/// Nonlinear process and measurement maps with their Jacobians.
template <typename Scalar>
struct NonlinearSystem {
    using Map = std::function<Vector<Scalar>(const Vector<Scalar>&)>;
    using Jacobian = std::function<Matrix<Scalar>(const Vector<Scalar>&)>;

    Map f;
    Jacobian Df;
    Map h;
    Jacobian Dh;
    Matrix<Scalar> Q;
    Matrix<Scalar> R;

    Index k() const { return Q.rows(); }
    Index d() const { return R.rows(); }

    /// The nonlinear system whose maps are x -> F x and x -> H x.
    static NonlinearSystem from_linear(const LinearSystem<Scalar>& sys) {
        NonlinearSystem out;
        out.f = [F = sys.F](const Vector<Scalar>& x) -> Vector<Scalar> { return F * x; };
        out.Df = [F = sys.F](const Vector<Scalar>&) { return F; };
        out.h = [H = sys.H](const Vector<Scalar>& x) -> Vector<Scalar> { return H * x; };
        out.Dh = [H = sys.H](const Vector<Scalar>&) { return H; };
        out.Q = sys.Q;
        out.R = sys.R;
        return out;
    }
};

/// States X (t x k), measurements Z (t x d), optional sources U (t x d), observation mask (t x d).
template <typename Scalar>
struct Trajectory {
    Matrix<Scalar> states;
    Matrix<Scalar> measurements;
    Matrix<Scalar> sources;
    MaskMatrix mask;

    Index steps() const { return states.rows(); }
    Index k() const { return states.cols(); }
    Index d() const { return measurements.cols(); }
    bool has_sources() const { return sources.size() > 0; }

    void check() const {
        require_dims(states.rows() == measurements.rows(), "trajectory: states/measurements row count differ");
        require_dims(mask.rows() == measurements.rows() && mask.cols() == measurements.cols(),
                     "trajectory: mask shape differs from measurements");
        require_dims(!has_sources() || sources.rows() == states.rows(),
                     "trajectory: sources row count differs");
    }
};

using LinearSystemd = LinearSystem<double>;
using NonlinearSystemd = NonlinearSystem<double>;
using Trajectoryd = Trajectory<double>;

namespace detail {

template <typename Scalar>
bool exactly_symmetric(const Matrix<Scalar>& m) {
    return m.rows() == m.cols() && m == m.transpose();
}

template <typename Scalar>
bool psd_within_slack(const Matrix<Scalar>& m) {
    if (m.rows() == 0) return true;
    auto [lo, hi] = eigen_range(m);
    return lo >= -1e-10 * std::max(hi, 0.0);
}

} // namespace detail

/// Lists every violated LinearSystem invariant. An empty list means the system is valid.
template <typename Scalar>
std::vector<std::string> validate_system(const LinearSystem<Scalar>& sys) {
    std::vector<std::string> report;
    const Index k = sys.F.rows();
    const Index d = sys.H.rows();
    if (k == 0) report.emplace_back("k must be positive");
    if (d == 0) report.emplace_back("d must be positive");
    if (sys.F.cols() != k) report.emplace_back("F not square");
    if (sys.H.cols() != k) report.emplace_back("H column count differs from k");
    if (sys.Q.rows() != k || sys.Q.cols() != k) report.emplace_back("Q shape differs from k x k");
    if (sys.R.rows() != d || sys.R.cols() != d) report.emplace_back("R shape differs from d x d");
    if (!report.empty()) return report;

    if (!detail::exactly_symmetric(sys.Q)) report.emplace_back("Q not symmetric");
    else if (!detail::psd_within_slack(sys.Q)) report.emplace_back("Q not positive semidefinite");
    if (!detail::exactly_symmetric(sys.R)) report.emplace_back("R not symmetric");
    else if (!detail::psd_within_slack(sys.R)) report.emplace_back("R not positive semidefinite");

    if (d < k) {
        report.emplace_back("H not full column rank");
    } else {
        Eigen::JacobiSVD<Matrix<Scalar>> svd(sys.H);
        const auto& sv = svd.singularValues();
        if (!(sv.minCoeff() > Scalar(1e-10) * sv.maxCoeff())) report.emplace_back("H not full column rank");
    }
    return report;
}

namespace detail {

template <typename Scalar>
Vector<Scalar> gaussian_draw(std::mt19937_64& rng, const Matrix<Scalar>& factor) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector<Scalar> w(factor.cols());
    for (Index i = 0; i < w.size(); ++i) w(i) = Scalar(normal(rng));
    return factor * w;
}

} // namespace detail

/// Simulates `steps` steps from x0. Draw order per step: process noise, then measurement noise,
/// both from one mt19937_64 seeded with `seed`.
template <typename Scalar>
Trajectory<Scalar> simulate_lds(const LinearSystem<Scalar>& sys, const Vector<Scalar>& x0, Index steps,
                                std::uint64_t seed) {
    auto report = validate_system(sys);
    if (!report.empty()) throw InvalidSystem("simulate_lds: " + report.front());
    require_dims(x0.size() == sys.k(), "simulate_lds: x0 size differs from k");
    if (steps < 1) throw InvalidArgument("simulate_lds: steps must be >= 1");

    const Matrix<Scalar> q_factor = psd_factor(sys.Q);
    const Matrix<Scalar> r_factor = psd_factor(sys.R);
    std::mt19937_64 rng(seed);

    Trajectory<Scalar> traj;
    traj.states.resize(steps, sys.k());
    traj.measurements.resize(steps, sys.d());
    traj.mask = MaskMatrix::Constant(steps, sys.d(), true);

    Vector<Scalar> x = x0;
    for (Index i = 0; i < steps; ++i) {
        x = sys.F * x + detail::gaussian_draw(rng, q_factor);
        Vector<Scalar> z = sys.H * x + detail::gaussian_draw(rng, r_factor);
        traj.states.row(i) = x.transpose();
        traj.measurements.row(i) = z.transpose();
    }
    return traj;
}

struct AppendixDemoOptions {
    Index steps = 200;
    double process_variance = 0.01;
    double measurement_variance = 1.0;
    double x0 = 1.0;
};

/// x_t = 0.5 x_{t-1} + 0.05 sin(0.126 t) + delta_t, z_t = (1,1,1,1)^T x_t + eps_t.
inline Trajectoryd simulate_appendix_demo(std::uint64_t seed, const AppendixDemoOptions& opts = {}) {
    constexpr Index d = 4;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double sd_process = std::sqrt(opts.process_variance);
    const double sd_measure = std::sqrt(opts.measurement_variance);

    Trajectoryd traj;
    traj.states.resize(opts.steps, 1);
    traj.measurements.resize(opts.steps, d);
    traj.mask = MaskMatrix::Constant(opts.steps, d, true);

    double x = opts.x0;
    for (Index i = 0; i < opts.steps; ++i) {
        const double t = static_cast<double>(i + 1);
        x = 0.5 * x + 0.05 * std::sin(0.126 * t) + sd_process * normal(rng);
        traj.states(i, 0) = x;
        for (Index j = 0; j < d; ++j) traj.measurements(i, j) = x + sd_measure * normal(rng);
    }
    return traj;
}

/// The 4 x 1 all-ones measurement map of the process-model demo.
inline MatrixXd appendix_demo_map() { return MatrixXd::Ones(4, 1); }

} // namespace fusereg
