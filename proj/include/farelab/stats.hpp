#pragma once

#include <cstdint>
#include <vector>

#include "farelab/common.hpp"

namespace fare::stats {

enum class PermMethod { Auto, Exact, MonteCarlo };

struct TestResult {
    double statistic = 0.0;  // mean paired difference
    double p_value = 1.0;
    int n_permutations = 0;
    bool exact = false;
};

struct CIResult {
    double low = 0.0;
    double high = 0.0;
    double level = 0.95;
    int n_resamples = 0;
};

struct BHResult {
    std::vector<bool> reject;
    Vec adjusted_p;
};

// Two-sided sign-flip test on the mean paired difference. Full enumeration
// when 2^n <= n_perm (or method Exact); otherwise Monte Carlo with add-one
// smoothing.
TestResult paired_permutation_test(std::span<const double> diffs, int n_perm = 10000,
                                   std::uint64_t seed = 0,
                                   PermMethod method = PermMethod::Auto);

// Percentile bootstrap CI of the mean.
CIResult bootstrap_ci(std::span<const double> values, int n_resamples = 1000,
                      double level = 0.95, std::uint64_t seed = 0);

// Benjamini-Hochberg step-up at FDR level q.
BHResult bh_correct(std::span<const double> p_values, double q);

// Kolmogorov-Smirnov statistic of a sample against Uniform(0,1).
double ks_uniform_statistic(Vec sample);

}  // namespace fare::stats
