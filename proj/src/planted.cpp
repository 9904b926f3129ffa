#include "farelab/planted.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

namespace fare::plant {

using nlohmann::json;

namespace {

std::string le_key(int layer, int expert) {
    return std::to_string(layer) + "/" + std::to_string(expert);
}

Vec embedding_row(const moe::Model& m, int token) {
    const int d = m.config.d_model;
    const double* row = m.embedding.data() + static_cast<std::size_t>(token) * d;
    return Vec(row, row + d);
}

Vec normalized(Vec v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw ConfigError("plant: zero-norm direction");
    for (double& x : v) x /= norm;
    return v;
}

Vec mean_embedding_direction(const moe::Model& m, const std::vector<int>& tokens) {
    if (tokens.empty()) throw ConfigError("plant: no trigger tokens");
    Vec dir(static_cast<std::size_t>(m.config.d_model), 0.0);
    for (int t : tokens) {
        const Vec e = embedding_row(m, t);
        for (std::size_t i = 0; i < dir.size(); ++i) dir[i] += e[i];
    }
    return normalized(std::move(dir));
}

// Wire hidden unit `slot` of an expert so that inputs aligned with `trigger`
// emit `strength` along the output-head row of `answer`.
void install_push(moe::Model& m, int layer, int expert, int slot, const Vec& trigger_emb,
                  int answer, double strength) {
    const int d = m.config.d_model;
    const int h = m.config.d_expert_hidden;
    if (slot >= h) throw ConfigError("plant: expert hidden size too small for fact slots");
    auto& e = m.layers[static_cast<std::size_t>(layer)].experts[static_cast<std::size_t>(expert)];

    double trig_sq = 0.0;
    for (double x : trigger_emb) trig_sq += x * x;
    for (int i = 0; i < d; ++i)
        e.w1[static_cast<std::size_t>(slot) * d + static_cast<std::size_t>(i)] =
            trigger_emb[static_cast<std::size_t>(i)] / trig_sq;

    const double* head = m.output_head.data() + static_cast<std::size_t>(answer) * d;
    const Vec unembed(head, head + d);
    double un_sq = 0.0;
    for (double x : unembed) un_sq += x * x;
    for (int i = 0; i < d; ++i)
        e.w2[static_cast<std::size_t>(i) * h + static_cast<std::size_t>(slot)] =
            strength * unembed[static_cast<std::size_t>(i)] / un_sq;
}

}  // namespace

void PlantSpec::validate(const moe::ModelConfig& config) const {
    for (const auto& b : biased_experts) {
        if (!config.is_moe_layer(b.layer))
            throw ConfigError("plant: biased expert layer is not a MoE layer");
        if (b.expert < 0 || b.expert >= config.n_experts)
            throw ConfigError("plant: biased expert id out of range");
        if (b.delta <= 0.0) throw ConfigError("plant: delta must be > 0");
    }
    for (const auto& k : knowledge_experts) {
        if (!config.is_moe_layer(k.layer))
            throw ConfigError("plant: knowledge expert layer is not a MoE layer");
        if (k.expert < 0 || k.expert >= config.n_experts)
            throw ConfigError("plant: knowledge expert id out of range");
    }
    if (breadth < 1) throw ConfigError("plant: breadth must be >= 1");
    if (breadth > config.n_experts)
        throw ConfigError("plant: breadth exceeds expert count");
    if (entangled) {
        std::set<std::pair<int, int>> b_set, k_set;
        for (const auto& b : biased_experts) b_set.emplace(b.layer, b.expert);
        for (const auto& k : knowledge_experts) k_set.emplace(k.layer, k.expert);
        if (b_set != k_set)
            throw ConfigError("plant: entangled spec requires biased == knowledge experts");
    }
}

PlantedModel build_planted_model(const moe::ModelConfig& config, const PlantSpec& spec,
                                 const PlantContext& ctx) {
    config.validate();
    spec.validate(config);
    PlantedModel out;
    out.model = moe::build_model(config);
    moe::Model& m = out.model;

    if (spec.biased_experts.empty() && spec.knowledge_experts.empty()) return out;
    if (!ctx.vocab) throw ConfigError("plant: context vocabulary required");

    // ---- Output pushes (deterministic, no calibration) -------------------
    std::map<std::string, int> used_slots;
    for (const auto& k : spec.knowledge_experts) {
        for (const auto& f : k.facts) {
            const int slot = used_slots[le_key(k.layer, k.expert)]++;
            install_push(m, k.layer, k.expert, slot, embedding_row(m, f.question_token),
                         f.answer_token, spec.knowledge_strength);
            out.truth.fact_map[le_key(k.layer, k.expert)].emplace_back(f.question_token,
                                                                        f.answer_token);
        }
        out.truth.planted_knowledge[k.layer].push_back(k.expert);
    }
    // A biased entry covers `breadth` consecutive experts (wrapping), so the
    // same total bias can be concentrated in one expert or smeared across many.
    auto expanded_experts = [&](const BiasedExpert& b) {
        std::vector<int> experts;
        for (int j = 0; j < spec.breadth; ++j)
            experts.push_back((b.expert + j) % config.n_experts);
        return experts;
    };

    if (spec.stereo_push) {
        // Every expert carrying the bias also boosts the stereotype attribute
        // after its group's descriptor tokens, entangling bias with behavior.
        for (const auto& b : spec.biased_experts) {
            for (int expert : expanded_experts(b)) {
                for (const auto& d : ctx.descriptors) {
                    if (d.axis != b.axis || d.group != b.group) continue;
                    for (int tok : ctx.vocab->encode(d.surface_text)) {
                        const int slot = used_slots[le_key(b.layer, expert)]++;
                        install_push(m, b.layer, expert, slot, embedding_row(m, tok),
                                     spec.stereo_push->attribute_token,
                                     spec.stereo_push->strength);
                    }
                }
            }
        }
    }

    // ---- Router surgery with closed-loop scaling --------------------------
    struct RouterPlant {
        int layer;
        std::vector<int> experts;  // all experts sharing this plant's gain
        Vec direction;
        double gain;
        // bias plants verify an activation-rate shift; knowledge plants verify
        // dominant selection at their trigger positions
        bool is_bias;
        std::string group_key;  // bias only
        double delta = 0.0;     // bias only
        std::vector<int> trigger_tokens;
    };
    std::vector<RouterPlant> plants;

    for (const auto& b : spec.biased_experts) {
        std::vector<int> toks;
        for (const auto& d : ctx.descriptors) {
            if (d.axis != b.axis || d.group != b.group) continue;
            for (int t : ctx.vocab->encode(d.surface_text)) toks.push_back(t);
        }
        if (toks.empty())
            throw ConfigError("plant: no descriptors found for group " + b.group);
        RouterPlant p;
        p.layer = b.layer;
        p.experts = expanded_experts(b);
        p.direction = mean_embedding_direction(m, toks);
        p.gain = 2.0;
        p.is_bias = true;
        p.group_key = capture::group_key(b.axis, b.group);
        p.delta = b.delta;
        p.trigger_tokens = toks;
        for (int e : p.experts) out.truth.planted_biased[b.layer].push_back(e);
        plants.push_back(std::move(p));
    }
    for (const auto& k : spec.knowledge_experts) {
        if (k.facts.empty()) continue;
        std::vector<int> toks;
        for (const auto& f : k.facts) toks.push_back(f.question_token);
        RouterPlant p;
        p.layer = k.layer;
        p.experts = {k.expert};
        p.direction = mean_embedding_direction(m, toks);
        p.gain = 2.0;
        p.is_bias = false;
        p.trigger_tokens = toks;
        plants.push_back(std::move(p));
    }

    // Snapshot base router rows, then iterate gains until every plant meets
    // its empirical criterion (softmax competition couples them, so scaling
    // is joint).
    const int d = config.d_model;
    std::map<std::string, Vec> base_rows;
    for (const auto& p : plants)
        for (int expert : p.experts) {
            auto& lw = m.layers[static_cast<std::size_t>(p.layer)];
            const double* row = lw.router.data() + static_cast<std::size_t>(expert) * d;
            base_rows.emplace(le_key(p.layer, expert), Vec(row, row + d));
        }
    // Gains compose additively so an expert can carry several plants at once
    // (e.g. entangled bias + knowledge): reset every planted row to its base,
    // then accumulate each plant's contribution.
    auto apply_gains = [&]() {
        for (const auto& p : plants)
            for (int expert : p.experts) {
                auto& lw = m.layers[static_cast<std::size_t>(p.layer)];
                const Vec& base = base_rows.at(le_key(p.layer, expert));
                double* row = lw.router.data() + static_cast<std::size_t>(expert) * d;
                for (int i = 0; i < d; ++i) row[i] = base[static_cast<std::size_t>(i)];
            }
        for (const auto& p : plants)
            for (int expert : p.experts) {
                auto& lw = m.layers[static_cast<std::size_t>(p.layer)];
                double* row = lw.router.data() + static_cast<std::size_t>(expert) * d;
                for (int i = 0; i < d; ++i)
                    row[i] += p.gain * p.direction[static_cast<std::size_t>(i)];
            }
    };

    auto knowledge_satisfied = [&](const RouterPlant& p) {
        // Expert must carry at least half the gate weight at each trigger.
        for (int q : p.trigger_tokens) {
            const std::vector<int> seq = {q};
            const auto fw = m.forward(seq);
            for (const auto& rec : fw.routing_records) {
                if (rec.layer != p.layer || rec.pos != 0) continue;
                double w = 0.0;
                for (std::size_t j = 0; j < rec.selected.size(); ++j)
                    if (rec.selected[j] == p.experts.front()) w = rec.weights[j];
                if (w < 0.5) return false;
            }
        }
        return true;
    };

    const bool need_suite =
        std::any_of(plants.begin(), plants.end(), [](const auto& p) { return p.is_bias; });
    if (need_suite && (!ctx.suite || ctx.suite->demographic.empty()))
        throw ConfigError("plant: bias calibration requires a prompt suite");

    constexpr int kMaxRounds = 25;
    std::map<std::string, double> shifts;
    for (int round = 0; round < kMaxRounds; ++round) {
        apply_gains();
        bool all_ok = true;
        capture::ActivationStats stats;
        if (need_suite) stats = oracle_activation_rates(m, *ctx.suite);
        for (auto& p : plants) {
            bool ok;
            if (p.is_bias) {
                // The set as a whole must shift by delta; per-expert shifts
                // are recorded so the spread stays observable.
                double total_shift = 0.0;
                for (int expert : p.experts) {
                    const double rate_g = stats.group_rate.at(p.layer).at(
                        p.group_key)[static_cast<std::size_t>(expert)];
                    const double rate_base =
                        stats.baseline_rate.at(p.layer)[static_cast<std::size_t>(expert)];
                    const double shift = rate_g - rate_base;
                    shifts[le_key(p.layer, expert)] = shift;
                    total_shift += shift;
                }
                ok = total_shift >= p.delta;
            } else {
                ok = knowledge_satisfied(p);
            }
            if (!ok) {
                p.gain *= 1.6;
                all_ok = false;
            }
        }
        if (all_ok) {
            for (const auto& p : plants)
                for (int expert : p.experts)
                    out.truth.router_gain[le_key(p.layer, expert)] =
                        std::max(out.truth.router_gain[le_key(p.layer, expert)], p.gain);
            out.truth.measured_shift = shifts;
            return out;
        }
    }
    throw ConfigError("plant: calibration did not converge; spec is unsatisfiable "
                      "at this scale");
}

capture::ActivationStats oracle_activation_rates(const moe::Model& model,
                                                 const prompts::PromptSet& prompt_set,
                                                 capture::AggregationMode mode,
                                                 const moe::RouterHook* hook) {
    const auto all = prompt_set.all();
    if (all.empty()) throw InputError("oracle_activation_rates: empty prompt set");
    const int K = model.config.n_experts;

    struct Tally {
        Vec rate;
        Vec prob_mass;
        Vec selections;
        long n = 0;
        explicit Tally(int k)
            : rate(static_cast<std::size_t>(k), 0.0),
              prob_mass(static_cast<std::size_t>(k), 0.0),
              selections(static_cast<std::size_t>(k), 0.0) {}
        Tally() = default;
    };
    std::map<int, Tally> neutral, combined;
    std::map<int, std::map<std::string, Tally>> per_group;
    std::map<std::string, long> group_token_counts;
    long demo_token_total = 0;

    for (const auto* p : all) {
        const auto fw = model.forward(p->tokens, hook);
        const bool is_demo = p->condition == prompts::Condition::Demographic;
        const std::string key =
            is_demo ? capture::group_key(p->axis, p->group) : std::string();
        if (is_demo) {
            group_token_counts[key] += static_cast<long>(p->tokens.size());
            demo_token_total += static_cast<long>(p->tokens.size());
        }
        for (const auto& rec : fw.routing_records) {
            auto bump = [&](Tally& t) {
                if (t.rate.empty()) t = Tally(K);
                for (int e = 0; e < K; ++e)
                    t.prob_mass[static_cast<std::size_t>(e)] +=
                        rec.probs[static_cast<std::size_t>(e)];
                for (int e : rec.selected) t.selections[static_cast<std::size_t>(e)] += 1.0;
                if (mode == capture::AggregationMode::SelectionFrequency) {
                    for (int e : rec.selected) t.rate[static_cast<std::size_t>(e)] += 1.0;
                } else {
                    for (int e = 0; e < K; ++e)
                        t.rate[static_cast<std::size_t>(e)] +=
                            rec.probs[static_cast<std::size_t>(e)];
                }
                t.n += 1;
            };
            bump(combined[rec.layer]);
            if (is_demo)
                bump(per_group[rec.layer][key]);
            else
                bump(neutral[rec.layer]);
        }
    }

    capture::ActivationStats stats;
    stats.n_experts = K;
    stats.top_k = model.config.top_k;
    stats.mode = mode;
    for (auto& [l, t] : neutral) {
        Vec rate(static_cast<std::size_t>(K)), dist(static_cast<std::size_t>(K));
        for (int e = 0; e < K; ++e) {
            rate[static_cast<std::size_t>(e)] =
                t.rate[static_cast<std::size_t>(e)] / static_cast<double>(t.n);
            dist[static_cast<std::size_t>(e)] =
                t.prob_mass[static_cast<std::size_t>(e)] / static_cast<double>(t.n);
        }
        stats.baseline_rate[l] = std::move(rate);
        stats.mean_dist_neutral[l] = std::move(dist);
    }
    for (auto& [l, groups] : per_group) {
        for (auto& [key, t] : groups) {
            Vec rate(static_cast<std::size_t>(K)), dist(static_cast<std::size_t>(K));
            for (int e = 0; e < K; ++e) {
                rate[static_cast<std::size_t>(e)] =
                    t.rate[static_cast<std::size_t>(e)] / static_cast<double>(t.n);
                dist[static_cast<std::size_t>(e)] =
                    t.prob_mass[static_cast<std::size_t>(e)] / static_cast<double>(t.n);
            }
            stats.group_rate[l][key] = std::move(rate);
            stats.mean_dist_group[l][key] = std::move(dist);
        }
    }
    for (auto& [l, t] : combined) {
        Vec f(static_cast<std::size_t>(K));
        double total = 0.0;
        for (double s : t.selections) total += s;
        for (int e = 0; e < K; ++e)
            f[static_cast<std::size_t>(e)] = t.selections[static_cast<std::size_t>(e)] / total;
        stats.routing_frequency[l] = std::move(f);
    }
    for (const auto& [key, n] : group_token_counts)
        stats.p_group[key] =
            static_cast<double>(n) / static_cast<double>(demo_token_total);
    return stats;
}

std::string GroundTruth::to_json() const {
    json j;
    auto layer_map = [](const std::map<int, std::vector<int>>& m) {
        json out = json::object();
        for (const auto& [l, experts] : m) out[std::to_string(l)] = experts;
        return out;
    };
    j["planted_biased"] = layer_map(planted_biased);
    j["planted_knowledge"] = layer_map(planted_knowledge);
    j["measured_shift"] = measured_shift;
    j["router_gain"] = router_gain;
    json fm = json::object();
    for (const auto& [key, facts] : fact_map) {
        json arr = json::array();
        for (const auto& [q, a] : facts) arr.push_back({{"question", q}, {"answer", a}});
        fm[key] = arr;
    }
    j["fact_map"] = fm;
    return j.dump(2);
}

}  // namespace fare::plant
