#include "farelab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fare::stats {

TestResult paired_permutation_test(std::span<const double> diffs, int n_perm,
                                   std::uint64_t seed, PermMethod method) {
    if (diffs.empty()) throw InputError("paired_permutation_test: empty input");
    const auto n = diffs.size();
    TestResult result;
    result.statistic = mean(diffs);
    const double t_obs = std::abs(result.statistic);
    // Guards against spurious strict inequalities from float rounding when a
    // permuted statistic equals |T_obs| analytically.
    const double tie_eps = 1e-12 * (1.0 + t_obs);

    const bool enumerable = n < 63 && (1ull << n) <= static_cast<std::uint64_t>(n_perm);
    const bool use_exact =
        method == PermMethod::Exact || (method == PermMethod::Auto && enumerable);

    if (use_exact) {
        if (n >= 63) throw InputError("exact permutation test infeasible for n >= 63");
        const std::uint64_t total = 1ull << n;
        std::uint64_t count = 0;
        for (std::uint64_t mask = 0; mask < total; ++mask) {
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                sum += (mask >> i) & 1 ? -diffs[i] : diffs[i];
            if (std::abs(sum / static_cast<double>(n)) >= t_obs - tie_eps) ++count;
        }
        result.p_value = static_cast<double>(count) / static_cast<double>(total);
        result.n_permutations = static_cast<int>(total);
        result.exact = true;
    } else {
        Rng rng(seed);
        int count = 0;
        for (int p = 0; p < n_perm; ++p) {
            double sum = 0.0;
            std::uint64_t bits = 0;
            int avail = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (avail == 0) {
                    bits = rng.raw();
                    avail = 64;
                }
                sum += (bits & 1) ? -diffs[i] : diffs[i];
                bits >>= 1;
                --avail;
            }
            if (std::abs(sum / static_cast<double>(n)) >= t_obs - tie_eps) ++count;
        }
        result.p_value = static_cast<double>(1 + count) / static_cast<double>(n_perm + 1);
        result.n_permutations = n_perm;
        result.exact = false;
    }
    return result;
}

CIResult bootstrap_ci(std::span<const double> values, int n_resamples, double level,
                      std::uint64_t seed) {
    if (values.empty()) throw InputError("bootstrap_ci: empty input");
    if (level <= 0.0 || level >= 1.0) throw ConfigError("bootstrap_ci: level in (0,1)");
    Rng rng(seed);
    const auto n = values.size();
    Vec means;
    means.reserve(static_cast<std::size_t>(n_resamples));
    for (int r = 0; r < n_resamples; ++r) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += values[rng.below(n)];
        means.push_back(sum / static_cast<double>(n));
    }
    const double alpha = 1.0 - level;
    CIResult ci;
    ci.low = percentile(means, alpha / 2.0);
    ci.high = percentile(means, 1.0 - alpha / 2.0);
    ci.level = level;
    ci.n_resamples = n_resamples;
    return ci;
}

BHResult bh_correct(std::span<const double> p_values, double q) {
    if (q <= 0.0 || q >= 1.0) throw ConfigError("bh_correct: q must be in (0,1)");
    for (double p : p_values)
        if (p < 0.0 || p > 1.0) throw InputError("bh_correct: p-value outside [0,1]");
    const auto m = p_values.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });

    // Step-up rule: largest i with p_(i) <= (i/m) q.
    std::size_t cutoff = 0;  // 1-based rank of last rejection
    for (std::size_t i = 0; i < m; ++i) {
        const double thresh = q * static_cast<double>(i + 1) / static_cast<double>(m);
        if (p_values[order[i]] <= thresh) cutoff = i + 1;
    }

    BHResult out;
    out.reject.assign(m, false);
    out.adjusted_p.assign(m, 1.0);
    for (std::size_t i = 0; i < cutoff; ++i) out.reject[order[i]] = true;

    // Adjusted p: running min of (m/rank) p from the largest rank down.
    double running = 1.0;
    for (std::size_t i = m; i-- > 0;) {
        const double scaled =
            p_values[order[i]] * static_cast<double>(m) / static_cast<double>(i + 1);
        running = std::min(running, std::min(scaled, 1.0));
        out.adjusted_p[order[i]] = running;
    }
    return out;
}

double ks_uniform_statistic(Vec sample) {
    if (sample.empty()) throw InputError("ks_uniform_statistic: empty sample");
    std::sort(sample.begin(), sample.end());
    const auto n = static_cast<double>(sample.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double cdf = std::clamp(sample[i], 0.0, 1.0);
        d = std::max(d, (static_cast<double>(i) + 1.0) / n - cdf);
        d = std::max(d, cdf - static_cast<double>(i) / n);
    }
    return d;
}

}  // namespace fare::stats
