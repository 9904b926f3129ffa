#include "farelab/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>

namespace fare::intervene {

ProfileTransform ProfileTransform::power(double a) {
    if (a <= 0.0) throw ConfigError("power transform: alpha must be > 0");
    ProfileTransform t;
    t.kind = Kind::Power;
    t.alpha = a;
    return t;
}

ProfileTransform ProfileTransform::top_k(int n, bool per_layer) {
    if (n < 1) throw ConfigError("top-k transform: n must be >= 1");
    ProfileTransform t;
    t.kind = Kind::TopK;
    t.n = n;
    t.per_layer_topk = per_layer;
    return t;
}

ProfileTransform ProfileTransform::random(std::uint64_t seed) {
    ProfileTransform t;
    t.kind = Kind::Random;
    t.seed = seed;
    return t;
}

std::string ProfileTransform::name() const {
    switch (kind) {
        case Kind::Identity: return "fsp";
        case Kind::Flatten: return "flatten";
        case Kind::Inverted: return "inverted";
        case Kind::Power: {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "power-%g", alpha);
            return buf;
        }
        case Kind::TopK: return "top-" + std::to_string(n);
        case Kind::Random: return "random";
    }
    return "?";
}

void InterventionSpec::validate(const moe::ModelConfig& config) const {
    if (lambda < 0.0) throw ConfigError("intervention: lambda must be >= 0");
    for (int l : layers)
        if (!config.is_moe_layer(l))
            throw ConfigError("intervention: layer " + std::to_string(l) +
                              " is not a MoE layer");
    for (int l : layers) {
        const auto it = profile.phi.find(l);
        if (it == profile.phi.end())
            throw ConfigError("intervention: profile has no entries for layer " +
                              std::to_string(l));
        if (static_cast<int>(it->second.size()) != config.n_experts)
            throw ConfigError("intervention: profile length mismatch at layer " +
                              std::to_string(l));
    }
}

void MaskSpec::validate(const moe::ModelConfig& config) const {
    std::map<int, int> per_layer;
    for (const auto& [l, e] : masked) {
        if (!config.is_moe_layer(l))
            throw ConfigError("mask: layer " + std::to_string(l) + " is not a MoE layer");
        if (e < 0 || e >= config.n_experts)
            throw ConfigError("mask: expert id out of range");
        ++per_layer[l];
    }
    for (const auto& [l, n] : per_layer)
        if (config.n_experts - n < config.top_k)
            throw ConfigError("mask: layer " + std::to_string(l) +
                              " would have fewer than top_k selectable experts");
}

void arr_adjust(std::span<double> gate_logits, std::span<const double> phi_layer,
                double lambda, const std::set<int>& shared_ids) {
    if (gate_logits.size() != phi_layer.size())
        throw InputError("arr_adjust: logit/profile length mismatch");
    if (lambda < 0.0) throw InputError("arr_adjust: lambda must be >= 0");
    for (std::size_t e = 0; e < gate_logits.size(); ++e) {
        if (shared_ids.count(static_cast<int>(e))) continue;
        gate_logits[e] -= lambda * phi_layer[e];
    }
}

TransformResult transform_profile(const SensitivityProfile& profile,
                                  const ProfileTransform& t) {
    for (const auto& [l, v] : profile.phi)
        for (double x : v)
            if (!std::isfinite(x)) throw InputError("transform_profile: non-finite phi");

    TransformResult result;
    result.profile = profile;
    auto& phi = result.profile.phi;

    switch (t.kind) {
        case ProfileTransform::Kind::Identity:
            break;
        case ProfileTransform::Kind::Flatten: {
            const double bar = profile.mean_value();
            for (auto& [l, v] : phi) std::fill(v.begin(), v.end(), bar);
            break;
        }
        case ProfileTransform::Kind::Inverted: {
            const double top = profile.max_value();
            for (auto& [l, v] : phi)
                for (double& x : v) x = top - x;
            break;
        }
        case ProfileTransform::Kind::Power: {
            // Per-layer: renormalize to [0,1], exponentiate, rescale so the
            // layer max matches the original layer max.
            for (auto& [l, v] : phi) {
                const double lo = *std::min_element(v.begin(), v.end());
                const double hi = *std::max_element(v.begin(), v.end());
                if (hi <= lo) {
                    std::fill(v.begin(), v.end(), 0.0);
                    continue;
                }
                for (double& x : v) x = std::pow((x - lo) / (hi - lo), t.alpha) * hi;
            }
            break;
        }
        case ProfileTransform::Kind::TopK: {
            struct Entry {
                double value;
                int layer;
                int expert;
            };
            if (t.per_layer_topk) {
                for (auto& [l, v] : phi) {
                    std::vector<int> idx(v.size());
                    std::iota(idx.begin(), idx.end(), 0);
                    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
                        return v[static_cast<std::size_t>(a)] > v[static_cast<std::size_t>(b)];
                    });
                    const int keep = std::min<int>(t.n, static_cast<int>(v.size()));
                    Vec nv(v.size(), 0.0);
                    for (int i = 0; i < keep; ++i)
                        nv[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] =
                            v[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
                    v = std::move(nv);
                }
                break;
            }
            std::vector<Entry> entries;
            for (const auto& [l, v] : phi)
                for (std::size_t e = 0; e < v.size(); ++e)
                    entries.push_back({v[e], l, static_cast<int>(e)});
            if (t.n >= static_cast<int>(entries.size())) {
                result.truncated_to_all = true;
                break;
            }
            std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
                if (a.value != b.value) return a.value > b.value;
                if (a.layer != b.layer) return a.layer < b.layer;
                return a.expert < b.expert;
            });
            for (auto& [l, v] : phi) std::fill(v.begin(), v.end(), 0.0);
            for (int i = 0; i < t.n; ++i)
                phi[entries[static_cast<std::size_t>(i)].layer]
                   [static_cast<std::size_t>(entries[static_cast<std::size_t>(i)].expert)] =
                       entries[static_cast<std::size_t>(i)].value;
            break;
        }
        case ProfileTransform::Kind::Random: {
            Rng rng(t.seed);
            const double top = profile.max_value();
            for (auto& [l, v] : phi)
                for (double& x : v) x = rng.uniform(0.0, top);
            break;
        }
    }
    result.profile.provenance = profile.provenance + "|" + t.name();
    return result;
}

void RoutingIntervention::adjust_logits(int layer, std::span<double> gate_logits) const {
    if (arr_ && arr_->layers.count(layer)) {
        const auto it = arr_->profile.phi.find(layer);
        if (it == arr_->profile.phi.end())
            throw InputError("intervention: no profile for layer " + std::to_string(layer));
        arr_adjust(gate_logits, it->second, arr_->lambda);
    }
    for (const auto& [l, e] : mask_.masked)
        if (l == layer)
            gate_logits[static_cast<std::size_t>(e)] =
                -std::numeric_limits<double>::infinity();
}

RoutingIntervention mask_experts(const moe::Model& model, MaskSpec spec) {
    spec.validate(model.config);
    return RoutingIntervention(std::nullopt, std::move(spec));
}

LayerScore aals_probe(const moe::Model& model, const eval::EvalBundle& validation,
                      int layer, const SensitivityProfile& profile, double lambda_probe) {
    if (validation.minimal_pairs.empty() || validation.ppl_corpus.empty())
        throw InputError("aals_probe: validation split needs minimal pairs and a PPL corpus");
    InterventionSpec spec;
    spec.layers = {layer};
    spec.lambda = lambda_probe;
    spec.profile = profile;
    spec.validate(model.config);
    const RoutingIntervention hook(spec);

    const auto pref_base = eval::preference_score(model, validation.minimal_pairs);
    const auto pref_int = eval::preference_score(model, validation.minimal_pairs, &hook);
    const double ppl_base = model.perplexity(validation.ppl_corpus);
    const double ppl_int = model.perplexity(validation.ppl_corpus, &hook);

    LayerScore score;
    score.layer = layer;
    score.delta_bias = pref_base.preference - pref_int.preference;
    score.delta_ppl = ppl_int - ppl_base;
    score.ratio = score.delta_bias / (std::abs(score.delta_ppl) + kAalsEpsilon);
    return score;
}

AalsSelection aals_select(const std::vector<LayerScore>& scores, double quantile) {
    if (scores.empty()) throw InputError("aals_select: no layer scores");
    Vec ratios;
    for (const auto& s : scores) ratios.push_back(s.ratio);
    AalsSelection sel;
    sel.threshold = percentile(ratios, quantile);
    for (const auto& s : scores)
        if (s.ratio > sel.threshold) sel.layers.insert(s.layer);
    if (sel.layers.empty()) {
        // Strict rule emptied the set (e.g. all-ties); keep the max-R layer.
        const auto best = std::max_element(
            scores.begin(), scores.end(),
            [](const LayerScore& a, const LayerScore& b) { return a.ratio < b.ratio; });
        sel.layers.insert(best->layer);
        sel.fallback_used = true;
    }
    return sel;
}

ParetoResult pareto_select(const std::vector<double>& lambda_grid,
                           const std::vector<double>& preferences,
                           const std::vector<double>& ppls, double beta) {
    if (lambda_grid.empty()) throw ConfigError("pareto: empty lambda grid");
    if (preferences.size() != lambda_grid.size() || ppls.size() != lambda_grid.size())
        throw InputError("pareto: grid/evaluation length mismatch");
    if (!std::is_sorted(lambda_grid.begin(), lambda_grid.end()))
        throw ConfigError("pareto: lambda grid must be sorted ascending");
    const auto zero_it = std::find(lambda_grid.begin(), lambda_grid.end(), 0.0);
    if (zero_it == lambda_grid.end())
        throw ConfigError("pareto: lambda grid must contain 0");
    const auto zero_idx = static_cast<std::size_t>(zero_it - lambda_grid.begin());

    ParetoResult result;
    result.beta = beta;
    result.ppl_base = ppls[zero_idx];

    std::size_t best = zero_idx;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
        ParetoPoint pt;
        pt.lambda = lambda_grid[i];
        pt.preference = preferences[i];
        pt.ppl = ppls[i];
        pt.feasible = eval::ppl_budget_check(ppls[i], result.ppl_base, beta).feasible;
        result.grid.push_back(pt);
        if (!pt.feasible) continue;
        const double dist = std::abs(pt.preference - 0.5);
        if (dist < best_dist) {  // ties keep the smaller lambda
            best_dist = dist;
            best = i;
        }
    }
    result.lambda_star = lambda_grid[best];
    return result;
}

ParetoResult pareto_search(const moe::Model& model, const eval::EvalBundle& bundle,
                           const SensitivityProfile& profile, const std::set<int>& layers,
                           const std::vector<double>& lambda_grid, double beta) {
    if (lambda_grid.empty()) throw ConfigError("pareto_search: empty lambda grid");
    std::vector<double> prefs, ppls;
    for (double lambda : lambda_grid) {
        InterventionSpec spec;
        spec.layers = layers;
        spec.lambda = lambda;
        spec.profile = profile;
        spec.validate(model.config);
        const RoutingIntervention hook(spec);
        prefs.push_back(
            eval::preference_score(model, bundle.minimal_pairs, &hook).preference);
        ppls.push_back(model.perplexity(bundle.ppl_corpus, &hook));
    }
    return pareto_select(lambda_grid, prefs, ppls, beta);
}

std::vector<double> default_lambda_grid(double lambda_max) {
    std::vector<double> grid = {0.0, 0.1, 0.25, 0.5, 0.75, 1.0, 1.5,
                                2.0, 2.5, 3.0, 4.0, 5.0};
    if (lambda_max > grid.back()) grid.push_back(lambda_max);
    return grid;
}

namespace {

struct Endpoints {
    double preference;
    double utility;
    double ppl;
};

Endpoints evaluate_endpoints(const moe::Model& model, const eval::EvalBundle& bundle,
                             const moe::RouterHook* hook) {
    Endpoints e;
    e.preference = eval::preference_score(model, bundle.minimal_pairs, hook).preference;
    e.utility = eval::utility_accuracy(model, bundle.mc_items, hook).accuracy;
    e.ppl = model.perplexity(bundle.ppl_corpus, hook);
    return e;
}

// All (layer, expert) entries ordered by phi value, descending, ties toward
// lower (layer, expert).
std::vector<std::pair<int, int>> order_by_phi(const SensitivityProfile& profile) {
    struct Entry {
        double value;
        int layer;
        int expert;
    };
    std::vector<Entry> entries;
    for (const auto& [l, v] : profile.phi)
        for (std::size_t e = 0; e < v.size(); ++e)
            entries.push_back({v[e], l, static_cast<int>(e)});
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.value != b.value) return a.value > b.value;
        if (a.layer != b.layer) return a.layer < b.layer;
        return a.expert < b.expert;
    });
    std::vector<std::pair<int, int>> out;
    for (const auto& e : entries) out.emplace_back(e.layer, e.expert);
    return out;
}

}  // namespace

std::vector<ConditionRow> group_masking_experiment(const moe::Model& model,
                                                   const SensitivityProfile& profile,
                                                   int group_size, int n_random_seeds,
                                                   const eval::EvalBundle& bundle,
                                                   std::uint64_t seed) {
    if (group_size < 0) throw ConfigError("group_masking: group_size must be >= 0");
    const auto order = order_by_phi(profile);
    if (group_size > static_cast<int>(order.size()))
        throw ConfigError("group_masking: group_size exceeds expert count");

    const Endpoints base = evaluate_endpoints(model, bundle, nullptr);
    auto run_mask = [&](const std::set<std::pair<int, int>>& masked) {
        MaskSpec spec;
        spec.masked = masked;
        const auto hook = mask_experts(model, spec);
        return evaluate_endpoints(model, bundle, &hook);
    };

    std::vector<ConditionRow> rows;
    auto add_row = [&](const std::string& name, const Endpoints& e, int seeds) {
        ConditionRow r;
        r.condition = name;
        r.delta_preference = e.preference - base.preference;
        r.delta_utility = e.utility - base.utility;
        r.ppl_ratio = e.ppl / base.ppl;
        r.n_seeds = seeds;
        rows.push_back(r);
    };

    std::set<std::pair<int, int>> top(order.begin(), order.begin() + group_size);
    std::set<std::pair<int, int>> bottom(order.end() - group_size, order.end());
    add_row("top-" + std::to_string(group_size), run_mask(top), 1);
    add_row("bottom-" + std::to_string(group_size), run_mask(bottom), 1);

    Endpoints random_mean{0.0, 0.0, 0.0};
    Rng rng(seed);
    for (int s = 0; s < n_random_seeds; ++s) {
        std::vector<std::pair<int, int>> pool = order;
        // Fisher-Yates prefix shuffle.
        std::set<std::pair<int, int>> pick;
        for (int i = 0; i < group_size; ++i) {
            const auto j = i + static_cast<int>(rng.below(pool.size() - static_cast<std::size_t>(i)));
            std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
            pick.insert(pool[static_cast<std::size_t>(i)]);
        }
        const Endpoints e = run_mask(pick);
        random_mean.preference += e.preference / n_random_seeds;
        random_mean.utility += e.utility / n_random_seeds;
        random_mean.ppl += e.ppl / n_random_seeds;
    }
    if (n_random_seeds > 0)
        add_row("random-" + std::to_string(group_size), random_mean, n_random_seeds);
    return rows;
}

std::vector<ProfileTransform> default_ablation_conditions() {
    return {
        ProfileTransform::flatten(),
        ProfileTransform::random(0),
        ProfileTransform::inverted(),
        ProfileTransform::power(0.25),
        ProfileTransform::power(0.5),
        ProfileTransform::identity(),  // power alpha=1 is the FSP profile itself
        ProfileTransform::power(2.0),
        ProfileTransform::power(4.0),
        ProfileTransform::top_k(5),
        ProfileTransform::top_k(10),
        ProfileTransform::top_k(25),
        ProfileTransform::top_k(50),
        ProfileTransform::top_k(100),
    };
}

std::vector<ConditionRow> synthetic_ablation(const moe::Model& model,
                                             const SensitivityProfile& profile,
                                             const std::vector<ProfileTransform>& conditions,
                                             const eval::EvalBundle& bundle,
                                             double lambda, int n_random_seeds) {
    std::set<int> layers;
    for (const auto& [l, v] : profile.phi) layers.insert(l);
    const Endpoints base = evaluate_endpoints(model, bundle, nullptr);

    auto run_profile = [&](const SensitivityProfile& p) {
        InterventionSpec spec;
        spec.layers = layers;
        spec.lambda = lambda;
        spec.profile = p;
        spec.validate(model.config);
        const RoutingIntervention hook(spec);
        return evaluate_endpoints(model, bundle, &hook);
    };

    std::vector<ConditionRow> rows;
    for (const auto& cond : conditions) {
        ConditionRow row;
        row.condition = cond.name();
        row.lambda = lambda;
        Endpoints e{0.0, 0.0, 0.0};
        if (cond.kind == ProfileTransform::Kind::Random) {
            for (int s = 0; s < n_random_seeds; ++s) {
                ProfileTransform r = cond;
                r.seed = cond.seed + static_cast<std::uint64_t>(s);
                const Endpoints one = run_profile(transform_profile(profile, r).profile);
                e.preference += one.preference / n_random_seeds;
                e.utility += one.utility / n_random_seeds;
                e.ppl += one.ppl / n_random_seeds;
            }
            row.n_seeds = n_random_seeds;
        } else {
            e = run_profile(transform_profile(profile, cond).profile);
        }
        row.delta_preference = e.preference - base.preference;
        row.delta_utility = e.utility - base.utility;
        row.ppl_ratio = e.ppl / base.ppl;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace fare::intervene
