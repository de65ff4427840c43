#include "fusereg/modelsel.hpp"
#include "fusereg/synthetic.hpp"

#include <doctest.h>

#include <cmath>

using namespace fusereg;

namespace {

MatrixXd history_from(const std::function<double(Index)>& x, Index n) {
    MatrixXd h(n, 1);
    for (Index i = 1; i <= n; ++i) h(i - 1, 0) = x(i);
    return h;
}

} // namespace

TEST_SUITE("modelsel") {

TEST_CASE("linear AR recovers an exact coefficient") {
    const MatrixXd h = history_from([](Index i) { return std::pow(0.5, double(i)); }, 30);
    const auto c = fit_candidate(CandidateKind::LinearAR, h, 30);
    CHECK(c.coefficients(0) == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(c.predict(h, 31) == doctest::Approx(0.5 * h(29, 0)));
}

TEST_CASE("sine candidate recovers the amplitude") {
    const MatrixXd h = history_from([](Index i) { return 0.05 * std::sin(0.126 * double(i)); }, 60);
    const auto c = fit_candidate(CandidateKind::Sine, h, 60);
    CHECK(std::abs(c.coefficients(0) - 0.05) <= 1e-8);
    const auto cc = fit_candidate(CandidateKind::Cosine, history_from([](Index i) { return 2 * std::cos(0.126 * double(i)); }, 60), 60);
    CHECK(std::abs(cc.coefficients(0) - 2.0) <= 1e-8);
}

TEST_CASE("constant history: AR prediction is the constant") {
    const MatrixXd h = MatrixXd::Constant(25, 1, 3.0);
    CHECK(fit_candidate(CandidateKind::LinearAR, h, 25).predict(h, 26) == doctest::Approx(3.0));
    CHECK(fit_candidate(CandidateKind::QuadraticAR, h, 25).predict(h, 26) == doctest::Approx(3.0));
}

TEST_CASE("candidate fits need history") {
    const MatrixXd h = MatrixXd::Ones(10, 1);
    CHECK_THROWS_AS(fit_candidate(CandidateKind::LinearAR, h, 1), InsufficientHistory);
    CHECK_THROWS_AS(fit_candidate(CandidateKind::Spline, h, 3), InsufficientHistory);
    CHECK_NOTHROW(fit_candidate(CandidateKind::Sine, h, 1));
}

TEST_CASE("B-spline basis is a partition of unity") {
    for (double x : {1.0, 2.5, 17.0, 39.999, 40.0}) {
        const VectorXd b = cubic_bspline_basis(x, 1.0, 40.0, 10);
        CHECK(b.size() == 14);
        CHECK(b.sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(b.minCoeff() >= 0.0);
    }
}

TEST_CASE("candidate outputs: five finite values, no lookahead") {
    const auto traj = simulate_appendix_demo(3);
    const MatrixXd& h = traj.states;
    std::vector<CandidateSensor> sensors;
    for (auto kind : kAllCandidates) sensors.push_back(fit_candidate(kind, h, 100));
    const VectorXd out = candidate_outputs(sensors, h, 101);
    CHECK(out.size() == 5);
    CHECK(out.allFinite());
    CHECK(out(0) == doctest::Approx(sensors[0].coefficients(0) * h(99, 0)));
    CHECK_THROWS_AS(candidate_outputs(sensors, h, 100), InsufficientHistory);

    MatrixXd mutated = h;
    mutated.bottomRows(100).setConstant(1e6);
    std::vector<CandidateSensor> again;
    for (auto kind : kAllCandidates) again.push_back(fit_candidate(kind, mutated, 100));
    CHECK((candidate_outputs(again, mutated, 101) - out).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("model selection experiment shape, constraint and determinism") {
    ModelselOptions opts;
    opts.demo.steps = 170;
    opts.burn_in = 160;
    const auto a = run_modelsel_experiment(5, opts);
    const auto b = run_modelsel_experiment(5, opts);
    REQUIRE(a.steps.size() == 10);
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        CHECK(a.steps[i].time == static_cast<Index>(161 + i));
        CHECK(a.steps[i].coefficients.size() == 9);
        CHECK(std::abs(a.steps[i].coefficients.sum() - 1.0) <= 1e-8);
        CHECK(a.steps[i].coefficients == b.steps[i].coefficients);
        CHECK(a.steps[i].lambda >= 0.0);
    }
    CHECK(a.medians.linear == b.medians.linear);
}

TEST_CASE("model selection uses only past states") {
    ModelselOptions opts;
    opts.demo.steps = 160;
    opts.burn_in = 150;
    auto traj = simulate_appendix_demo(8, opts.demo);
    const auto base = run_modelsel_experiment(traj, opts);
    // Perturb everything after time 155; steps up to 155 must not move.
    traj.states.bottomRows(5).array() += 10.0;
    traj.measurements.bottomRows(5).array() -= 3.0;
    const auto mutated = run_modelsel_experiment(traj, opts);
    for (const auto& s : base.steps) {
        if (s.time > 155) break;
        const auto& m = mutated.steps[static_cast<std::size_t>(s.time - 151)];
        CHECK(m.coefficients == s.coefficients);
        CHECK(m.prediction == s.prediction);
    }
}

TEST_CASE("boosting identities") {
    const auto sys = random_linear_system<double>(9, 2, 4);
    const auto traj = simulate_lds<double>(sys, VectorXd::Zero(2), 60, 10);
    const MatrixXd X = traj.states.topRows(59);
    const MatrixXd U = traj.measurements.topRows(59);
    const VectorXd u_next = traj.measurements.row(59).transpose();

    BoostConfig none;
    none.iterations = 0;
    CHECK(boost_assimilate(X, U, sys.H, none, u_next).prediction.isZero(0.0));
    none.init = BoostConfig::Init::LinearSF;
    const VectorXd init = boost_assimilate(X, U, sys.H, none, u_next).prediction;
    const VectorXd direct = fit_constrained_ls<double>(X, U, sys.H).B_hat.transpose() * u_next;
    CHECK((init - direct).cwiseAbs().maxCoeff() <= 1e-12);

    BoostConfig frozen;
    frozen.eta = 0.0;
    frozen.iterations = 5;
    CHECK(boost_assimilate(X, U, sys.H, frozen, u_next).prediction.isZero(0.0));
    frozen.init = BoostConfig::Init::LinearSF;
    CHECK(boost_assimilate(X, U, sys.H, frozen, u_next).prediction == init);
}

TEST_CASE("boosting training loss descends") {
    auto sys = random_linear_system<double>(12, 2, 4);
    sys.R.setZero();
    const auto traj = simulate_lds<double>(sys, VectorXd::Zero(2), 50, 13);
    BoostConfig one;
    one.eta = 1.0;
    one.iterations = 1;
    // Exact sensors make every feasible fusion matrix interpolate; unpenalized, the KKT system is singular.
    CHECK_THROWS_AS(boost_assimilate(traj.states, traj.measurements, sys.H, one, VectorXd::Zero(4)), SingularKKT);
    one.ridge_lambda = 1e-8;
    const auto r1 = boost_assimilate(traj.states, traj.measurements, sys.H, one, VectorXd::Zero(4));
    REQUIRE(r1.train_loss.size() == 2);
    CHECK(r1.train_loss[1] < r1.train_loss[0]);
    CHECK(r1.train_loss[1] <= 1e-10 * r1.train_loss[0]);

    // Early iterations descend; the unit-gain constraint can push the loss back up once the residual is noise.
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        const auto noisy_sys = random_linear_system<double>(seed, 2, 4);
        const auto noisy = simulate_lds<double>(noisy_sys, VectorXd::Zero(2), 80, seed + 100);
        BoostConfig slow;
        slow.iterations = 5;
        const auto r = boost_assimilate(noisy.states, noisy.measurements, noisy_sys.H, slow, VectorXd::Zero(4));
        for (std::size_t b = 1; b < r.train_loss.size(); ++b) CHECK(r.train_loss[b] <= r.train_loss[b - 1]);
    }
}

TEST_CASE("linear base learner and custom learners") {
    const VectorXd u = VectorXd::LinSpaced(10, 0, 9);
    const VectorXd y = 2.0 * u.array() + 1.0;
    const auto f = linear_base_learner()(y, u);
    CHECK(f(20.0) == doctest::Approx(41.0));
    CHECK(linear_base_learner()(y, VectorXd::Constant(10, 3.0))(0.0) == doctest::Approx(y.mean()));

    const auto sys = random_linear_system<double>(16, 1, 2);
    const auto traj = simulate_lds<double>(sys, VectorXd::Zero(1), 20, 17);
    BoostConfig cfg;
    cfg.base_learners = {linear_base_learner()};
    CHECK_THROWS_AS(boost_assimilate(traj.states, traj.measurements, sys.H, cfg, VectorXd::Zero(2)), InvalidArgument);
    int calls = 0;
    auto counting = [&calls](const VectorXd& r, const VectorXd& c) {
        ++calls;
        return linear_base_learner()(r, c);
    };
    cfg.base_learners = {counting, counting};
    cfg.iterations = 3;
    boost_assimilate(traj.states, traj.measurements, sys.H, cfg, VectorXd::Zero(2));
    CHECK(calls == 6);
}

}
