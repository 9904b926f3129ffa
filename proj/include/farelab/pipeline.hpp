#pragma once

#include <optional>
#include <string>
#include <vector>

#include "farelab/capture.hpp"
#include "farelab/intervention.hpp"
#include "farelab/model.hpp"
#include "farelab/planted.hpp"
#include "farelab/profiling.hpp"
#include "farelab/prompts.hpp"

namespace fare::pipe {

// Plant description as it appears in a config file: token ids are not known
// until the vocabulary is built, so facts and stereotype attributes are given
// by count and word here and resolved in build_workspace.
struct KnowledgeDesc {
    int layer = 0;
    int expert = 0;
    int n_facts = 1;
};

struct StereoDesc {
    std::string attribute_word;
    double strength = 6.0;
};

struct PlantDesc {
    std::vector<plant::BiasedExpert> biased;
    std::vector<KnowledgeDesc> knowledge;
    bool entangled = false;
    int breadth = 1;
    std::optional<StereoDesc> stereo;
    double knowledge_strength = 8.0;

    bool empty() const { return biased.empty() && knowledge.empty(); }
};

// Experiment configuration, loaded from a JSON file. Every artifact a run
// produces embeds the hash of this config (output section excluded, so the
// same experiment written to two directories stays comparable).
struct RunConfig {
    // -- model section ----------------------------------------------------
    std::string preset;      // "", or one of the preset names
    moe::ModelConfig model;  // explicit shape; vocab_size always derived
    PlantDesc plant;         // empty = unplanted model

    // -- prompts section --------------------------------------------------
    int n_templates = 6;
    int n_professions = 8;
    std::vector<std::string> axes = {"gender"};
    std::string attribute_word;  // appended stereotype word for minimal pairs

    // -- pipeline section -------------------------------------------------
    profile::MetricWeights weights;
    profile::GroupCollapse collapse = profile::GroupCollapse::Mean;
    capture::AggregationMode aggregation = capture::AggregationMode::SelectionFrequency;
    bool standard_pmi = false;
    std::vector<double> lambda_grid;
    double beta = 1.0;
    double quantile = 0.75;
    int n_perm = 10000;
    int n_boot = 1000;
    std::uint64_t stats_seed = 0;
    int mask_group_size = 10;
    int n_random_seeds = 5;
    double ablation_lambda = 1.0;

    // -- output section (excluded from the config hash) -------------------
    std::string out_dir = "out";

    std::string config_hash;  // filled by from_json

    static RunConfig from_json_text(const std::string& text);
    static RunConfig load(const std::string& path);
};

// Deterministic experiment material derived from the config alone.
struct Workspace {
    Vocab vocab;
    std::vector<prompts::Descriptor> descriptors;
    prompts::PromptSet suite;
    moe::ModelConfig model_config;  // vocab_size resolved
    plant::PlantSpec plant;         // token ids resolved
    std::string attribute_word;
};

Workspace build_workspace(const RunConfig& config);

// Pipeline stages, in dependency order. Each reads its predecessors'
// artifacts from config.out_dir and writes its own. Missing inputs raise
// ProtocolError naming the stage to run first.
void cmd_generate(const RunConfig& config);
void cmd_extract(const RunConfig& config);
void cmd_profile(const RunConfig& config);
void cmd_select(const RunConfig& config);
void cmd_intervene(const RunConfig& config);
void cmd_evaluate(const RunConfig& config);
void cmd_ablate(const RunConfig& config);
void cmd_mask(const RunConfig& config);
void cmd_report(const RunConfig& config);
void cmd_run_all(const RunConfig& config);

inline const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {
        "generate", "extract", "profile", "select",  "intervene",
        "evaluate", "ablate",  "mask",    "report", "run-all"};
    return names;
}

void run_stage(const RunConfig& config, const std::string& stage);

// Renders the layer-sensitivity bar chart and the lambda-sweep line chart
// from report.json into self-contained SVG files. Missing report sections
// skip the affected plot with a warning on stderr.
void render_plots(const std::string& report_path, const std::string& plot_dir);

}  // namespace fare::pipe
