#include "farelab/profiling.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace fare::profile {

namespace {

double log2_clamped(double x) { return std::log2(std::max(x, kProbFloor)); }

void check_distribution(std::span<const double> p, const char* what) {
    double sum = 0.0;
    for (double v : p) {
        if (v < 0.0) throw InputError(std::string(what) + ": negative probability");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw InputError(std::string(what) + ": input not normalized");
}

}  // namespace

double jsd(std::span<const double> p_d, std::span<const double> p_n) {
    if (p_d.size() != p_n.size()) throw InputError("jsd: length mismatch");
    check_distribution(p_d, "jsd");
    check_distribution(p_n, "jsd");
    double kl_d = 0.0, kl_n = 0.0;
    for (std::size_t i = 0; i < p_d.size(); ++i) {
        const double m = 0.5 * (p_d[i] + p_n[i]);
        if (p_d[i] > 0.0) kl_d += p_d[i] * std::log2(p_d[i] / m);
        if (p_n[i] > 0.0) kl_n += p_n[i] * std::log2(p_n[i] / m);
    }
    return 0.5 * kl_d + 0.5 * kl_n;
}

double entropy(std::span<const double> p) {
    check_distribution(p, "entropy");
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log2(v);
    return h;
}

void MetricWeights::validate() const {
    if (w_ard < 0.0 || w_jsd < 0.0 || w_pmi < 0.0 || w_ent < 0.0)
        throw ConfigError("metric weights must be non-negative");
    if (w_ard == 0.0 && w_jsd == 0.0 && w_pmi == 0.0 && w_ent == 0.0)
        throw ConfigError("at least one metric weight must be positive");
}

MetricTensor compute_metrics(const ActivationStats& stats, bool standard_pmi) {
    MetricTensor t;
    const int K = stats.n_experts;
    for (const auto& [layer, groups] : stats.group_rate) {
        const Vec& base = stats.baseline_rate.at(layer);
        for (const auto& [key, rates] : groups) {
            Vec ard(static_cast<std::size_t>(K));
            Vec pmi(static_cast<std::size_t>(K));
            const double p_g = stats.p_group.at(key);
            for (int e = 0; e < K; ++e) {
                const auto i = static_cast<std::size_t>(e);
                ard[i] = std::abs(rates[i] - base[i]);
                const double denom =
                    standard_pmi ? std::max(base[i], kProbFloor)
                                 : std::max(base[i], kProbFloor) * std::max(p_g, kProbFloor);
                pmi[i] = log2_clamped(rates[i]) - std::log2(denom);
            }
            t.ard[layer][key] = std::move(ard);
            t.pmi[layer][key] = std::move(pmi);

            const Vec& p_d = stats.mean_dist_group.at(layer).at(key);
            const Vec& p_n = stats.mean_dist_neutral.at(layer);
            t.jsd[layer][key] = jsd(p_d, p_n);
            t.entropy_gap[layer][key] = std::abs(entropy(p_d) - entropy(p_n));
        }
    }
    return t;
}

std::map<int, Vec> normalize_per_layer(const std::map<int, Vec>& values) {
    std::map<int, Vec> out;
    for (const auto& [layer, v] : values) {
        for (double x : v)
            if (!std::isfinite(x))
                throw InputError("normalize_per_layer: non-finite value");
        const double lo = *std::min_element(v.begin(), v.end());
        const double hi = *std::max_element(v.begin(), v.end());
        Vec n(v.size(), 0.0);
        if (hi > lo)
            for (std::size_t i = 0; i < v.size(); ++i) n[i] = (v[i] - lo) / (hi - lo);
        out[layer] = std::move(n);
    }
    return out;
}

namespace {

// Collapse per-group expert vectors to one vector per layer.
std::map<int, Vec> collapse_groups(const std::map<int, std::map<GroupKey, Vec>>& metric,
                                   GroupCollapse rule) {
    std::map<int, Vec> out;
    for (const auto& [layer, groups] : metric) {
        Vec acc;
        bool first = true;
        for (const auto& [key, v] : groups) {
            if (first) {
                acc = v;
                first = false;
                continue;
            }
            for (std::size_t i = 0; i < v.size(); ++i)
                acc[i] = rule == GroupCollapse::Mean ? acc[i] + v[i]
                                                     : std::max(acc[i], v[i]);
        }
        if (rule == GroupCollapse::Mean && groups.size() > 1)
            for (double& x : acc) x /= static_cast<double>(groups.size());
        out[layer] = std::move(acc);
    }
    return out;
}

std::map<int, double> collapse_groups_scalar(
    const std::map<int, std::map<GroupKey, double>>& metric, GroupCollapse rule) {
    std::map<int, double> out;
    for (const auto& [layer, groups] : metric) {
        double acc = 0.0;
        bool first = true;
        for (const auto& [key, v] : groups) {
            if (first) {
                acc = v;
                first = false;
                continue;
            }
            acc = rule == GroupCollapse::Mean ? acc + v : std::max(acc, v);
        }
        if (rule == GroupCollapse::Mean && groups.size() > 1)
            acc /= static_cast<double>(groups.size());
        out[layer] = acc;
    }
    return out;
}

// Layer-level metrics carry one value per layer, so their min-max range is
// taken across layers before the value is broadcast to every expert.
std::map<int, double> normalize_across_layers(const std::map<int, double>& values) {
    std::map<int, double> out;
    if (values.empty()) return out;
    double lo = values.begin()->second, hi = values.begin()->second;
    for (const auto& [l, v] : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (const auto& [l, v] : values) out[l] = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    return out;
}

}  // namespace

double SensitivityProfile::max_value() const {
    double m = 0.0;
    bool first = true;
    for (const auto& [l, v] : phi)
        for (double x : v) {
            if (first) {
                m = x;
                first = false;
            } else {
                m = std::max(m, x);
            }
        }
    return m;
}

double SensitivityProfile::mean_value() const {
    double sum = 0.0;
    int n = 0;
    for (const auto& [l, v] : phi)
        for (double x : v) {
            sum += x;
            ++n;
        }
    return n ? sum / n : 0.0;
}

int SensitivityProfile::total_entries() const {
    int n = 0;
    for (const auto& [l, v] : phi) n += static_cast<int>(v.size());
    return n;
}

SensitivityProfile fsp_score(const MetricTensor& metrics, const MetricWeights& weights,
                             GroupCollapse collapse) {
    weights.validate();
    SensitivityProfile profile;
    profile.weights = weights;
    profile.collapse = collapse;

    const auto ard_hat = normalize_per_layer(collapse_groups(metrics.ard, collapse));
    const auto pmi_hat = normalize_per_layer(collapse_groups(metrics.pmi, collapse));
    const auto jsd_hat = normalize_across_layers(collapse_groups_scalar(metrics.jsd, collapse));
    const auto ent_hat =
        normalize_across_layers(collapse_groups_scalar(metrics.entropy_gap, collapse));

    for (const auto& [layer, ard] : ard_hat) {
        Vec phi(ard.size(), 0.0);
        const Vec& pmi = pmi_hat.at(layer);
        const double jsd_l = jsd_hat.at(layer);
        const double ent_l = ent_hat.at(layer);
        for (std::size_t e = 0; e < phi.size(); ++e)
            phi[e] = weights.w_ard * ard[e] + weights.w_jsd * jsd_l +
                     weights.w_pmi * pmi[e] + weights.w_ent * ent_l;
        profile.phi[layer] = std::move(phi);
    }
    return profile;
}

double gini(std::span<const double> values) {
    if (values.empty()) throw InputError("gini: empty input");
    const double m = mean(values);
    if (m <= 0.0) return 0.0;
    double acc = 0.0;
    for (double a : values)
        for (double b : values) acc += std::abs(a - b);
    const auto n = static_cast<double>(values.size());
    return acc / (2.0 * n * n * m);
}

namespace {

Vec ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    Vec r(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

double pearson(std::span<const double> a, std::span<const double> b) {
    const double ma = mean(a), mb = mean(b);
    double num = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return num / std::sqrt(va * vb);
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) throw InputError("spearman: bad input sizes");
    const Vec ra = ranks(a);
    const Vec rb = ranks(b);
    return pearson(ra, rb);
}

DescriptiveStats descriptive_stats(const ActivationStats& stats,
                                   const SensitivityProfile& profile) {
    DescriptiveStats d;
    Vec pooled_freq;
    Vec pooled_phi;
    for (const auto& [layer, f] : stats.routing_frequency) {
        d.gini_per_layer[layer] = gini(f);
        pooled_freq.insert(pooled_freq.end(), f.begin(), f.end());
        const auto it = profile.phi.find(layer);
        if (it != profile.phi.end())
            pooled_phi.insert(pooled_phi.end(), it->second.begin(), it->second.end());
    }
    d.gini_pooled = gini(pooled_freq);

    Vec sorted = pooled_freq;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const std::size_t top_n = std::min<std::size_t>(10, sorted.size());
    d.top10_truncated = sorted.size() < 10;
    double total = 0.0, top = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        total += sorted[i];
        if (i < top_n) top += sorted[i];
    }
    d.top10_share = top / total;

    if (pooled_phi.size() == pooled_freq.size() && !pooled_phi.empty())
        d.spearman_phi_freq = spearman(pooled_phi, pooled_freq);
    return d;
}

}  // namespace fare::profile
