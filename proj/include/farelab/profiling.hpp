#pragma once

#include <map>
#include <string>

#include "farelab/capture.hpp"

namespace fare::profile {

using capture::ActivationStats;
using capture::GroupKey;

// Floor applied to probabilities before any logarithm.
inline constexpr double kProbFloor = 1e-6;

struct MetricTensor {
    // Expert-level, per (layer, group): vectors over experts.
    std::map<int, std::map<GroupKey, Vec>> ard;
    std::map<int, std::map<GroupKey, Vec>> pmi;
    // Layer-level, per (layer, group) scalars.
    std::map<int, std::map<GroupKey, double>> jsd;
    // Layer-level entropy gap |H(P_d) - H(P_n)| per (layer, group).
    std::map<int, std::map<GroupKey, double>> entropy_gap;
};

struct MetricWeights {
    double w_ard = 1.0;
    double w_jsd = 0.5;
    double w_pmi = 0.3;
    double w_ent = 0.0;

    void validate() const;
};

enum class GroupCollapse { Mean, Max };

struct SensitivityProfile {
    std::map<int, Vec> phi;  // per layer: vector over experts
    MetricWeights weights;
    GroupCollapse collapse = GroupCollapse::Mean;
    std::string provenance;

    double max_value() const;
    double mean_value() const;
    int total_entries() const;
};

struct DescriptiveStats {
    std::map<int, double> gini_per_layer;
    double gini_pooled = 0.0;
    double top10_share = 0.0;
    bool top10_truncated = false;  // fewer than 10 experts available
    double spearman_phi_freq = 0.0;
};

double jsd(std::span<const double> p_d, std::span<const double> p_n);
double entropy(std::span<const double> p);

// When `standard_pmi` is set the group marginal is dropped from the
// denominator, i.e. log2(P(e|g)/P(e)).
MetricTensor compute_metrics(const ActivationStats& stats, bool standard_pmi = false);

// Min-max within each layer's vector; a constant layer maps to all zeros.
std::map<int, Vec> normalize_per_layer(const std::map<int, Vec>& values);

SensitivityProfile fsp_score(const MetricTensor& metrics, const MetricWeights& weights,
                             GroupCollapse collapse = GroupCollapse::Mean);

double gini(std::span<const double> values);
double spearman(std::span<const double> a, std::span<const double> b);

DescriptiveStats descriptive_stats(const ActivationStats& stats,
                                   const SensitivityProfile& profile);

}  // namespace fare::profile
