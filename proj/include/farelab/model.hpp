#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "farelab/common.hpp"

namespace fare::moe {

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 0;
    int n_layers = 0;
    std::set<int> moe_layers;
    int n_experts = 0;       // routed experts per MoE layer (K)
    int top_k = 0;           // k
    int n_shared = 0;        // always-active shared experts per MoE layer
    int d_expert_hidden = 0;
    std::uint64_t seed = 0;

    void validate() const;
    bool is_moe_layer(int l) const { return moe_layers.count(l) > 0; }
    int n_moe_layers() const { return static_cast<int>(moe_layers.size()); }
};

// Toy-scale presets mirroring well-known expert/top-k/shared shapes.
// Known names: "olmoe-like" (64/8/0), "mixtral-like" (8/2/0),
// "deepseek-like" (64/6/2).
ModelConfig preset_config(const std::string& name, int vocab_size, std::uint64_t seed);

// One routing decision: (MoE layer, token position).
// `raw_logits` are the untouched router outputs; `logits` are what top-k
// actually saw (identical when no intervention is active).
struct RoutingRecord {
    int layer = 0;
    int pos = 0;
    Vec raw_logits;
    Vec logits;
    Vec probs;                   // softmax of `logits`
    std::vector<int> selected;   // size k, ascending
    Vec weights;                 // renormalized gate weights over `selected`
};

struct ForwardOutput {
    // next_token_log_probs[t] is the log distribution over the token at t+1.
    std::vector<Vec> next_token_log_probs;
    std::vector<RoutingRecord> routing_records;
};

// Hook applied to router logits before softmax/top-k. Shared-expert pathways
// never pass through this hook.
struct RouterHook {
    virtual ~RouterHook() = default;
    virtual void adjust_logits(int layer, std::span<double> gate_logits) const = 0;
};

struct ExpertWeights {
    Vec w1;  // d_hidden x d_model, row-major
    Vec w2;  // d_model x d_hidden, row-major
};

struct LayerWeights {
    Vec wq, wk, wv, wo;  // each d_model x d_model
    ExpertWeights dense;                  // FFN for non-MoE layers
    Vec router;                           // K x d_model (MoE layers only)
    std::vector<ExpertWeights> experts;   // K routed experts
    std::vector<ExpertWeights> shared;    // n_shared always-active experts
};

class Model {
  public:
    ModelConfig config;
    Vec embedding;  // vocab_size x d_model
    std::vector<LayerWeights> layers;
    Vec output_head;  // vocab_size x d_model

    ForwardOutput forward(std::span<const int> tokens,
                          const RouterHook* hook = nullptr) const;

    double sequence_log_likelihood(std::span<const int> tokens,
                                   const RouterHook* hook = nullptr) const;

    double perplexity(const std::vector<std::vector<int>>& corpus,
                      const RouterHook* hook = nullptr) const;

    std::vector<int> greedy_decode(std::span<const int> prompt, int max_new,
                                   const RouterHook* hook = nullptr) const;

    // Hidden state entering each layer's FFN/MoE block, useful for probes.
    // Returned as positions x d_model for the given layer.
    std::vector<Vec> hidden_states_at(std::span<const int> tokens, int layer) const;

    std::uint64_t weight_checksum() const;

    void save(const std::string& path) const;
    static Model load(const std::string& path);
};

Model build_model(const ModelConfig& config);

}  // namespace fare::moe
