// Seeded suites that execute the KF/SF/regression equivalences and report worst deviations.
#pragma once

#include "fusereg/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fusereg {

struct EquivalenceConfig {
    std::uint64_t base_seed = 1;
    long seeds = 50;        // instances per suite
    Index steps = 100;      // filter length for the KF suite
    Index nonlinear_steps = 50;
    Index max_k = 5;
    Index max_d = 8;
    double tolerance = 1e-8;
    std::vector<double> alphas{0.1, 0.5, 0.9};
    unsigned threads = 1;
};

struct SuiteReport {
    std::string name;
    long instances = 0;
    double max_deviation = 0.0;
    long failures = 0;  // instances that raised instead of producing a deviation
    std::string first_error;
    bool passed(double tolerance) const { return failures == 0 && max_deviation <= tolerance; }
};

/// (k, d) for instance `i`: k cycles 1..max_k, d spans k..max_d.
std::pair<Index, Index> suite_dimensions(long i, Index max_k, Index max_d);

SuiteReport suite_kf_augmented_sf(const EquivalenceConfig& cfg);
SuiteReport suite_sf_constrained_regression(const EquivalenceConfig& cfg);
SuiteReport suite_shrinkage_ridge(const EquivalenceConfig& cfg);
SuiteReport suite_zero_padding_unconstrained(const EquivalenceConfig& cfg);
SuiteReport suite_ekf_esf(const EquivalenceConfig& cfg);

std::vector<SuiteReport> run_equivalence_suites(const EquivalenceConfig& cfg);

} // namespace fusereg
