#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "farelab/evaluation.hpp"
#include "farelab/model.hpp"
#include "farelab/profiling.hpp"

namespace fare::intervene {

using profile::SensitivityProfile;

struct ProfileTransform {
    enum class Kind { Identity, Flatten, Inverted, Power, TopK, Random };
    Kind kind = Kind::Identity;
    double alpha = 1.0;        // Power
    int n = 0;                 // TopK
    std::uint64_t seed = 0;    // Random
    bool per_layer_topk = false;

    static ProfileTransform identity() { return {}; }
    static ProfileTransform flatten() { return {Kind::Flatten}; }
    static ProfileTransform inverted() { return {Kind::Inverted}; }
    static ProfileTransform power(double a);
    static ProfileTransform top_k(int n, bool per_layer = false);
    static ProfileTransform random(std::uint64_t seed);

    std::string name() const;
};

struct TransformResult {
    SensitivityProfile profile;
    bool truncated_to_all = false;  // TopK n exceeded the entry count
};

struct InterventionSpec {
    std::set<int> layers;
    double lambda = 0.0;
    SensitivityProfile profile;

    void validate(const moe::ModelConfig& config) const;
};

struct MaskSpec {
    std::set<std::pair<int, int>> masked;  // (layer, expert)

    void validate(const moe::ModelConfig& config) const;
};

// z' = z - lambda * phi for routed experts; entries listed in `shared_ids`
// are left untouched.
void arr_adjust(std::span<double> gate_logits, std::span<const double> phi_layer,
                double lambda, const std::set<int>& shared_ids = {});

TransformResult transform_profile(const SensitivityProfile& profile,
                                  const ProfileTransform& t);

// RouterHook applying ARR (optional) then hard masking (optional), in that
// order, so masking composes with reweighting.
class RoutingIntervention : public moe::RouterHook {
  public:
    RoutingIntervention() = default;
    explicit RoutingIntervention(InterventionSpec arr) : arr_(std::move(arr)) {}
    RoutingIntervention(std::optional<InterventionSpec> arr, MaskSpec mask)
        : arr_(std::move(arr)), mask_(std::move(mask)) {}

    void adjust_logits(int layer, std::span<double> gate_logits) const override;

    const std::optional<InterventionSpec>& arr() const { return arr_; }
    const MaskSpec& mask() const { return mask_; }

  private:
    std::optional<InterventionSpec> arr_;
    MaskSpec mask_;
};

RoutingIntervention mask_experts(const moe::Model& model, MaskSpec spec);

struct LayerScore {
    int layer = -1;
    double delta_bias = 0.0;  // baseline preference - intervened preference
    double delta_ppl = 0.0;   // intervened PPL - baseline PPL
    double ratio = 0.0;       // delta_bias / (|delta_ppl| + epsilon)
};

inline constexpr double kAalsEpsilon = 1e-6;
inline constexpr double kAalsLambdaProbe = 1.0;

LayerScore aals_probe(const moe::Model& model, const eval::EvalBundle& validation,
                      int layer, const SensitivityProfile& profile,
                      double lambda_probe = kAalsLambdaProbe);

struct AalsSelection {
    std::set<int> layers;
    bool fallback_used = false;  // strict rule emptied the set; max-R returned
    double threshold = 0.0;
};

AalsSelection aals_select(const std::vector<LayerScore>& scores, double quantile = 0.75);

struct ParetoPoint {
    double lambda = 0.0;
    double preference = 0.5;
    double ppl = 1.0;
    bool feasible = true;
};

struct ParetoResult {
    double lambda_star = 0.0;
    std::vector<ParetoPoint> grid;
    double beta = 1.0;
    double ppl_base = 1.0;
};

// Pure selection rule over a pre-evaluated grid (curve-level oracle surface).
ParetoResult pareto_select(const std::vector<double>& lambda_grid,
                           const std::vector<double>& preferences,
                           const std::vector<double>& ppls, double beta);

ParetoResult pareto_search(const moe::Model& model, const eval::EvalBundle& bundle,
                           const SensitivityProfile& profile, const std::set<int>& layers,
                           const std::vector<double>& lambda_grid, double beta = 1.0);

std::vector<double> default_lambda_grid(double lambda_max = 8.0);

struct ConditionRow {
    std::string condition;
    double lambda = 0.0;
    double delta_preference = 0.0;  // points vs baseline
    double delta_utility = 0.0;
    double ppl_ratio = 1.0;
    int n_seeds = 1;
};

// Table 2-style masking experiment: top/bottom/random-mean groups by phi.
std::vector<ConditionRow> group_masking_experiment(const moe::Model& model,
                                                   const SensitivityProfile& profile,
                                                   int group_size, int n_random_seeds,
                                                   const eval::EvalBundle& bundle,
                                                   std::uint64_t seed = 7);

std::vector<ProfileTransform> default_ablation_conditions();

std::vector<ConditionRow> synthetic_ablation(const moe::Model& model,
                                             const SensitivityProfile& profile,
                                             const std::vector<ProfileTransform>& conditions,
                                             const eval::EvalBundle& bundle,
                                             double lambda = 1.0, int n_random_seeds = 5);

}  // namespace fare::intervene
