#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fare {

using Vec = std::vector<double>;

// Error taxonomy. Every failure mode the CLI can hit maps onto one of these,
// so exit-code handling stays in one place.
struct FareError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : FareError {
    using FareError::FareError;
};
struct InputError : FareError {
    using FareError::FareError;
};
struct ProtocolError : FareError {
    using FareError::FareError;
};
struct ParseError : FareError {
    using FareError::FareError;
};

// Deterministic RNG built on mt19937_64 (bit-exact across platforms, unlike
// the std distributions).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; caches the second variate.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    // Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    std::uint64_t raw() { return engine_(); }

  private:
    std::mt19937_64 engine_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

inline void softmax_inplace(std::span<double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - m);
        sum += v;
    }
    for (double& v : z) v /= sum;
}

inline Vec softmax(std::span<const double> z) {
    Vec out(z.begin(), z.end());
    softmax_inplace(out);
    return out;
}

inline Vec log_softmax(std::span<const double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    const double lse = m + std::log(sum);
    Vec out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
    return out;
}

// Indices of the k largest entries; ties broken toward the lower index.
inline std::vector<int> top_k_indices(std::span<const double> z, int k) {
    std::vector<int> idx(z.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return z[a] > z[b]; });
    idx.resize(static_cast<std::size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

// Linear-interpolation percentile over unsorted values, q in [0,1].
inline double percentile(Vec values, double q) {
    if (values.empty()) throw InputError("percentile: empty input");
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values[0];
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

inline double mean(std::span<const double> v) {
    if (v.empty()) throw InputError("mean: empty input");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// FNV-1a over raw bytes; used for artifact provenance hashes and weight
// checksums.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string fnv1a_hex(const std::string& s) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a(s.data(), s.size())));
    return std::string(buf);
}

}  // namespace fare
