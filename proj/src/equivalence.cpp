#include "fusereg/equivalence.hpp"

#include "fusereg/fusion.hpp"
#include "fusereg/regression.hpp"
#include "fusereg/synthetic.hpp"

#include <algorithm>
#include <functional>
#include <mutex>
#include <thread>

namespace fusereg {

std::pair<Index, Index> suite_dimensions(long i, Index max_k, Index max_d) {
    const Index k = 1 + static_cast<Index>(i) % max_k;
    const Index span = std::max<Index>(1, max_d - k + 1);
    const Index d = k + (static_cast<Index>(i) / max_k) % span;
    return {k, d};
}

namespace {

/// Runs `instance(i)` for i in [0, n) over `threads` workers; max is order independent.
SuiteReport run_suite(const std::string& name, const EquivalenceConfig& cfg,
                      const std::function<double(long)>& instance) {
    SuiteReport report;
    report.name = name;
    report.instances = std::max(0L, cfg.seeds);
    std::mutex mu;
    long next = 0;
    auto worker = [&] {
        for (;;) {
            long i;
            {
                std::lock_guard lock(mu);
                if (next >= report.instances) return;
                i = next++;
            }
            try {
                const double dev = instance(i);
                std::lock_guard lock(mu);
                report.max_deviation = std::max(report.max_deviation, dev);
            } catch (const Error& e) {
                std::lock_guard lock(mu);
                if (report.failures++ == 0) report.first_error = e.what();
            }
        }
    };
    const unsigned n_threads = std::max(1u, cfg.threads);
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < n_threads; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return report;
}

std::uint64_t instance_seed(const EquivalenceConfig& cfg, long i, std::uint64_t salt) {
    return cfg.base_seed * 1000003ULL + static_cast<std::uint64_t>(i) * 7919ULL + salt;
}

double max_abs(const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

struct RegressionInstance {
    MatrixXd X, Z, H;
    VectorXd z_next;
};

RegressionInstance regression_instance(const EquivalenceConfig& cfg, long i, std::uint64_t salt, Index extra_rows) {
    auto [k, d] = suite_dimensions(i, cfg.max_k, cfg.max_d);
    const std::uint64_t seed = instance_seed(cfg, i, salt);
    const auto sys = random_linear_system<double>(seed, k, d);
    const Index t = d + extra_rows + static_cast<Index>(i % 40);
    const auto traj = simulate_lds<double>(sys, VectorXd::Zero(k), t + 1, seed + 1);
    return {traj.states.topRows(t), traj.measurements.topRows(t), sys.H, traj.measurements.row(t).transpose()};
}

} // namespace

SuiteReport suite_kf_augmented_sf(const EquivalenceConfig& cfg) {
    return run_suite("kf_augmented_sf", cfg, [&](long i) {
        auto [k, d] = suite_dimensions(i, cfg.max_k, cfg.max_d);
        const std::uint64_t seed = instance_seed(cfg, i, 11);
        const auto sys = random_linear_system<double>(seed, k, d);
        const auto traj = simulate_lds<double>(sys, VectorXd::Zero(k), cfg.steps, seed + 1);
        const VectorXd x0 = VectorXd::Zero(k);
        const MatrixXd P0 = 1e3 * MatrixXd::Identity(k, k);
        const auto kf = run_kf<double>(sys, x0, P0, traj.measurements);
        const auto sf = run_augmented_sf<double>(sys, x0, P0, traj.measurements);
        double dev = 0.0;
        for (std::size_t s = 0; s < kf.size(); ++s) dev = std::max(dev, max_abs(kf[s].x_hat - sf[s]));
        return dev;
    });
}

SuiteReport suite_sf_constrained_regression(const EquivalenceConfig& cfg) {
    return run_suite("sf_constrained_regression", cfg, [&](long i) {
        const auto inst = regression_instance(cfg, i, 23, 10);
        const auto cov = empirical_covariance<double>(inst.X, inst.Z, inst.H);
        const auto fit = fit_constrained_ls<double>(inst.X, inst.Z, inst.H);
        const double dev = max_abs(predict(fit, inst.z_next) - sf_estimate<double>(inst.H, cov, inst.z_next));
        return std::max(dev, constraint_residual(fit, inst.H));
    });
}

SuiteReport suite_shrinkage_ridge(const EquivalenceConfig& cfg) {
    return run_suite("shrinkage_ridge", cfg, [&](long i) {
        const auto inst = regression_instance(cfg, i, 37, 10);
        double dev = 0.0;
        for (double alpha : cfg.alphas) {
            const auto cov = shrunk_covariance<double>(inst.X, inst.Z, inst.H, alpha);
            const auto fit = fit_constrained_ridge<double>(inst.X, inst.Z, inst.H, (1 - alpha) / alpha);
            dev = std::max(dev, max_abs(predict(fit, inst.z_next) - sf_estimate<double>(inst.H, cov, inst.z_next)));
        }
        return dev;
    });
}

SuiteReport suite_zero_padding_unconstrained(const EquivalenceConfig& cfg) {
    return run_suite("zero_padding_unconstrained", cfg, [&](long i) {
        auto [k, d] = suite_dimensions(i, cfg.max_k, cfg.max_d);
        const auto inst = regression_instance(cfg, i, 41, k + 10);
        auto [H_pad, Z_pad] = zero_pad<double>(inst.H, inst.Z);
        VectorXd z_pad = VectorXd::Zero(d + k);
        z_pad.head(d) = inst.z_next;
        const auto cov = empirical_covariance<double>(inst.X, Z_pad, H_pad);
        const auto ols = fit_ridge<double>(inst.X, inst.Z, 0.0);
        return max_abs(predict(ols, inst.z_next) - sf_estimate<double>(H_pad, cov, z_pad));
    });
}

SuiteReport suite_ekf_esf(const EquivalenceConfig& cfg) {
    return run_suite("ekf_esf", cfg, [&](long i) {
        const Index k = 1 + static_cast<Index>(i % 2);
        const Index d = k + static_cast<Index>((i / 2) % 3);
        const std::uint64_t seed = instance_seed(cfg, i, 53);
        const auto sys = random_nonlinear_system<double>(seed, k, d);
        const auto traj = simulate_nonlinear<double>(sys, VectorXd::Constant(k, 0.5), cfg.nonlinear_steps, seed + 1);
        const EkfOptions opts{true};
        KalmanState<double> ekf{VectorXd::Zero(k), MatrixXd::Identity(k, k), 0};
        KalmanState<double> esf = ekf;
        double dev = 0.0;
        for (Index s = 0; s < traj.steps(); ++s) {
            const VectorXd z = traj.measurements.row(s).transpose();
            ekf = ekf_step(ekf, sys, z, opts).first;
            esf = esf_step(esf, sys, z, opts);
            dev = std::max(dev, max_abs(ekf.x_hat - esf.x_hat));
        }
        return dev;
    });
}

std::vector<SuiteReport> run_equivalence_suites(const EquivalenceConfig& cfg) {
    return {suite_kf_augmented_sf(cfg), suite_sf_constrained_regression(cfg), suite_shrinkage_ridge(cfg),
            suite_zero_padding_unconstrained(cfg), suite_ekf_esf(cfg)};
}

} // namespace fusereg
