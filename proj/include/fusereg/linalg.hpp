// Factorizations behind every solve in the library. Nothing here forms an explicit inverse.
#pragma once

#include "fusereg/common.hpp"

#include <limits>
#include <sstream>

namespace fusereg {

namespace detail {

inline std::string condition_message(const std::string& what, double rcond) {
    std::ostringstream os;
    os << what << ": reciprocal condition estimate " << rcond << " below " << 1.0 / kMaxCondition;
    return os.str();
}

/// Eigen's condition estimators skip exactly zero pivots, so those are checked directly.
template <typename Derived>
bool has_null_pivot(const Eigen::MatrixBase<Derived>& pivots) {
    using Scalar = typename Derived::Scalar;
    if (pivots.size() == 0) return false;
    const Scalar largest = pivots.cwiseAbs().maxCoeff();
    const Scalar floor = Scalar(pivots.size()) * std::numeric_limits<Scalar>::epsilon() * largest;
    return !(pivots.cwiseAbs().minCoeff() > floor);
}

} // namespace detail

/// LDLT of a symmetric matrix, rejected (as `ErrorT`) when its condition estimate exceeds 1e12.
template <typename ErrorT, typename Derived>
Eigen::LDLT<Matrix<typename Derived::Scalar>> guarded_ldlt(const Eigen::MatrixBase<Derived>& m,
                                                           const std::string& what) {
    using Scalar = typename Derived::Scalar;
    Eigen::LDLT<Matrix<Scalar>> ldlt(m);
    if (ldlt.info() != Eigen::Success) throw ErrorT(what + ": factorization failed");
    if (detail::has_null_pivot(ldlt.vectorD())) throw ErrorT(what + ": matrix is singular");
    const double rc = static_cast<double>(ldlt.rcond());
    if (!(rc >= 1.0 / kMaxCondition)) throw ErrorT(detail::condition_message(what, rc));
    return ldlt;
}

/// LU with partial pivoting for symmetric indefinite (saddle point) systems.
template <typename ErrorT, typename Derived>
Eigen::PartialPivLU<Matrix<typename Derived::Scalar>> guarded_lu(const Eigen::MatrixBase<Derived>& m,
                                                                 const std::string& what) {
    using Scalar = typename Derived::Scalar;
    Eigen::PartialPivLU<Matrix<Scalar>> lu(m);
    if (detail::has_null_pivot(lu.matrixLU().diagonal())) throw ErrorT(what + ": matrix is singular");
    const double rc = static_cast<double>(lu.rcond());
    if (!(rc >= 1.0 / kMaxCondition)) throw ErrorT(detail::condition_message(what, rc));
    return lu;
}

/// Saddle point matrix [[A, C], [C^T, 0]].
template <typename Scalar>
Matrix<Scalar> saddle_matrix(const Matrix<Scalar>& a, const Matrix<Scalar>& c) {
    const Index n = a.rows();
    const Index m = c.cols();
    Matrix<Scalar> kkt = Matrix<Scalar>::Zero(n + m, n + m);
    kkt.topLeftCorner(n, n) = a;
    kkt.topRightCorner(n, m) = c;
    kkt.bottomLeftCorner(m, n) = c.transpose();
    return kkt;
}

/// Smallest/largest eigenvalues of the symmetric part of `m`.
template <typename Derived>
std::pair<double, double> eigen_range(const Eigen::MatrixBase<Derived>& m) {
    using Scalar = typename Derived::Scalar;
    if (m.rows() == 0) return {0.0, 0.0};
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(symmetrized(m), Eigen::EigenvaluesOnly);
    return {static_cast<double>(es.eigenvalues().minCoeff()),
            static_cast<double>(es.eigenvalues().maxCoeff())};
}

/// Symmetric square root factor L with L L^T = m, valid for PSD (including singular) m.
template <typename Scalar>
Matrix<Scalar> psd_factor(const Matrix<Scalar>& m) {
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(symmetrized(m));
    Vector<Scalar> root = es.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal();
}

} // namespace fusereg
