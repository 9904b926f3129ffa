#pragma once

#include <map>
#include <string>
#include <vector>

#include "farelab/model.hpp"
#include "farelab/prompts.hpp"

namespace fare::capture {

// "axis/group" composite key, sortable and stable across runs.
using GroupKey = std::string;

inline GroupKey group_key(const std::string& axis, const std::string& group) {
    return axis + "/" + group;
}

struct LogEntry {
    int prompt_id = 0;
    prompts::Condition condition = prompts::Condition::Neutral;
    std::string axis;
    std::string group;
    moe::RoutingRecord record;
};

struct ManifestEntry {
    int prompt_id = 0;
    std::string text;
    prompts::Condition condition = prompts::Condition::Neutral;
    std::string axis;
    std::string group;
    int token_count = 0;
};

struct RoutingLog {
    int n_experts = 0;
    int top_k = 0;
    std::vector<ManifestEntry> manifest;
    std::vector<LogEntry> entries;

    void validate() const;
};

enum class AggregationMode { SelectionFrequency, ProbabilityMass };

AggregationMode aggregation_mode_from_string(const std::string& s);
std::string to_string(AggregationMode m);

struct ActivationStats {
    int n_experts = 0;
    int top_k = 0;
    AggregationMode mode = AggregationMode::SelectionFrequency;

    // Per layer: baseline activation rate P(e) from neutral prompts only.
    std::map<int, Vec> baseline_rate;
    // Per (layer, group): conditional rate P(e|g).
    std::map<int, std::map<GroupKey, Vec>> group_rate;
    // Group marginals P(g) over demographic prompt tokens.
    std::map<GroupKey, double> p_group;
    // Per layer: mean routing probability distributions (always
    // probability-mass, used for divergence metrics).
    std::map<int, Vec> mean_dist_neutral;
    std::map<int, std::map<GroupKey, Vec>> mean_dist_group;
    // Per layer: routing frequency f over all conditions (sums to 1).
    std::map<int, Vec> routing_frequency;

    std::vector<int> layer_ids() const;
    std::vector<GroupKey> group_keys() const;
};

RoutingLog capture_run(const moe::Model& model, const prompts::PromptSet& prompt_set,
                       const moe::RouterHook* hook = nullptr);

ActivationStats aggregate(const RoutingLog& log,
                          AggregationMode mode = AggregationMode::SelectionFrequency);

// JSONL (header line + one record per line) and a compact binary encoding.
void serialize_log_jsonl(const RoutingLog& log, const std::string& path,
                         const std::string& config_hash = "");
RoutingLog deserialize_log_jsonl(const std::string& path);

void serialize_log_binary(const RoutingLog& log, const std::string& path);
RoutingLog deserialize_log_binary(const std::string& path);

bool logs_equal(const RoutingLog& a, const RoutingLog& b, double tol = 0.0);

}  // namespace fare::capture
