// Shared aliases and the error hierarchy used across fusereg.
#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace fusereg {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;
using MaskMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

/// Largest condition number any guarded solve accepts.
inline constexpr double kMaxCondition = 1e12;

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, long step = -1)
        : std::runtime_error(step < 0 ? what : "step " + std::to_string(step) + ": " + what), step_(step) {}

    /// 1-based time step (or boosting iteration) the failure is attributed to; -1 if none.
    long step() const noexcept { return step_; }

private:
    long step_;
};

#define FUSEREG_DEFINE_ERROR(Name)                \
    class Name : public Error {                   \
    public:                                       \
        using Error::Error;                       \
    };

FUSEREG_DEFINE_ERROR(DimensionMismatch)
FUSEREG_DEFINE_ERROR(InvalidSystem)
FUSEREG_DEFINE_ERROR(EmptyHierarchy)
FUSEREG_DEFINE_ERROR(NoSensors)
FUSEREG_DEFINE_ERROR(InvalidHierarchy)
FUSEREG_DEFINE_ERROR(SingularInnovation)
FUSEREG_DEFINE_ERROR(SingularR)
FUSEREG_DEFINE_ERROR(SingularGram)
FUSEREG_DEFINE_ERROR(SingularKKT)
FUSEREG_DEFINE_ERROR(EmptyHistory)
FUSEREG_DEFINE_ERROR(AlphaOutOfRange)
FUSEREG_DEFINE_ERROR(InvalidArgument)
FUSEREG_DEFINE_ERROR(InsufficientHistory)
FUSEREG_DEFINE_ERROR(WindowTooShort)
FUSEREG_DEFINE_ERROR(SchemaError)
FUSEREG_DEFINE_ERROR(IoError)

#undef FUSEREG_DEFINE_ERROR

class ParseError : public Error {
public:
    ParseError(const std::string& what, long line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    long line() const noexcept { return line_; }

private:
    long line_;
};

/// Runs `fn`, re-raising numerical failures as the same type tagged with `step`.
template <typename Fn>
decltype(auto) at_step(long step, Fn&& fn) {
    try {
        return fn();
    }
#define FUSEREG_RETAG(Name) \
    catch (const Name& e) { throw Name(e.what(), step); }
    FUSEREG_RETAG(SingularInnovation)
    FUSEREG_RETAG(SingularR)
    FUSEREG_RETAG(SingularGram)
    FUSEREG_RETAG(SingularKKT)
    FUSEREG_RETAG(DimensionMismatch)
    FUSEREG_RETAG(InsufficientHistory)
#undef FUSEREG_RETAG
}

inline void require_dims(bool ok, const std::string& what) {
    if (!ok) throw DimensionMismatch(what);
}

template <typename Derived>
Matrix<typename Derived::Scalar> symmetrized(const Eigen::MatrixBase<Derived>& m) {
    return (m + m.transpose()) / typename Derived::Scalar(2);
}

} // namespace fusereg
