#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "farelab/capture.hpp"
#include "farelab/model.hpp"
#include "farelab/prompts.hpp"

namespace fare::plant {

struct Fact {
    int question_token = -1;
    int answer_token = -1;
};

struct BiasedExpert {
    int layer = 0;
    int expert = 0;
    std::string axis;
    std::string group;
    double delta = 0.05;  // required empirical activation-rate shift
};

struct KnowledgeExpert {
    int layer = 0;
    int expert = 0;
    std::vector<Fact> facts;
};

// Optional coupling between biased experts and stereotype continuations:
// each biased expert additionally boosts `attribute_token` after its group's
// descriptor, which makes routing penalties move minimal-pair preference.
struct StereoPush {
    int attribute_token = -1;
    double strength = 6.0;
};

struct PlantSpec {
    std::vector<BiasedExpert> biased_experts;
    std::vector<KnowledgeExpert> knowledge_experts;
    bool entangled = false;  // biased and knowledge sets must coincide
    // Each biased entry covers this many consecutive experts (wrapping); the
    // delta requirement applies to the set's summed activation-rate shift.
    int breadth = 1;
    std::optional<StereoPush> stereo_push;
    double knowledge_strength = 8.0;

    void validate(const moe::ModelConfig& config) const;
};

// Calibration material: the plant is scaled against real forward passes.
struct PlantContext {
    const Vocab* vocab = nullptr;
    const prompts::PromptSet* suite = nullptr;
    std::vector<prompts::Descriptor> descriptors;
};

struct GroundTruth {
    std::map<int, std::vector<int>> planted_biased;     // layer -> experts
    std::map<int, std::vector<int>> planted_knowledge;  // layer -> experts
    std::map<std::string, double> measured_shift;       // "layer/expert" -> shift
    std::map<std::string, double> router_gain;          // calibration coefficients
    // expert -> facts routed through it, as "layer/expert" -> (q, a) pairs.
    std::map<std::string, std::vector<std::pair<int, int>>> fact_map;

    std::string to_json() const;
};

struct PlantedModel {
    moe::Model model;
    GroundTruth truth;
};

PlantedModel build_planted_model(const moe::ModelConfig& config, const PlantSpec& spec,
                                 const PlantContext& ctx);

// Independent re-derivation of conditional activation rates by direct forward
// counting. Shares no aggregation code with capture::aggregate.
capture::ActivationStats oracle_activation_rates(
    const moe::Model& model, const prompts::PromptSet& prompt_set,
    capture::AggregationMode mode = capture::AggregationMode::SelectionFrequency,
    const moe::RouterHook* hook = nullptr);

}  // namespace fare::plant
