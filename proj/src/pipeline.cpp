#include "farelab/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "farelab/evaluation.hpp"
#include "farelab/stats.hpp"

namespace fare::pipe {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Built-in prompt material. The config selects how much of each pool to use;
// the pools themselves are fixed so the same config always yields the same
// vocabulary and suite.

const std::vector<prompts::Template>& template_pool() {
    static const std::vector<prompts::Template> pool = {
        {{"the", "{prof}", "is", "here", "today"}, 1},
        {{"the", "{prof}", "was", "at", "work"}, 1},
        {{"a", "{prof}", "was", "seen", "early"}, 1},
        {{"the", "{prof}", "is", "busy", "again"}, 1},
        {{"a", "{prof}", "is", "calm", "today"}, 1},
        {{"the", "{prof}", "was", "quiet", "late"}, 1},
        {{"a", "{prof}", "was", "here", "early"}, 1},
        {{"the", "{prof}", "is", "brave", "at", "work"}, 1},
    };
    return pool;
}

const std::vector<std::string>& profession_pool() {
    static const std::vector<std::string> pool = {
        "doctor", "nurse",  "teacher", "pilot", "farmer", "writer",
        "singer", "guard",  "clerk",   "coach", "judge",  "chef"};
    return pool;
}

// Two single-word groups per axis.
const std::map<std::string, std::pair<std::string, std::string>>& axis_groups() {
    static const std::map<std::string, std::pair<std::string, std::string>> groups = {
        {"gender", {"female", "male"}},
        {"race", {"alphan", "betan"}},
        {"religion", {"sunist", "moonist"}},
        {"nationality", {"northern", "southern"}},
        {"age", {"young", "old"}},
        {"sexuality", {"gay", "straight"}},
        {"disability", {"disabled", "abled"}},
        {"socioeconomic", {"rich", "poor"}},
        {"political", {"leftist", "rightist"}},
    };
    return groups;
}

// ---------------------------------------------------------------------------
// JSON access with field-level error messages.

[[noreturn]] void bad_field(const std::string& path, const std::string& what) {
    throw ConfigError("config: " + path + " " + what);
}

const json& require_obj(const json& j, const std::string& key, const std::string& path) {
    if (!j.contains(key)) bad_field(path + key, "is required");
    if (!j.at(key).is_object()) bad_field(path + key, "must be an object");
    return j.at(key);
}

void check_keys(const json& j, const std::string& path,
                const std::set<std::string>& allowed) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key))
            throw ConfigError("config: unknown key '" + key + "' in " + path);
    }
}

int get_int(const json& j, const std::string& key, const std::string& path,
            int fallback, bool required = false) {
    if (!j.contains(key)) {
        if (required) bad_field(path + key, "is required");
        return fallback;
    }
    if (!j.at(key).is_number_integer()) bad_field(path + key, "must be an integer");
    return j.at(key).get<int>();
}

double get_num(const json& j, const std::string& key, const std::string& path,
               double fallback, bool required = false) {
    if (!j.contains(key)) {
        if (required) bad_field(path + key, "is required");
        return fallback;
    }
    if (!j.at(key).is_number()) bad_field(path + key, "must be a number");
    return j.at(key).get<double>();
}

std::string get_str(const json& j, const std::string& key, const std::string& path,
                    const std::string& fallback, bool required = false) {
    if (!j.contains(key)) {
        if (required) bad_field(path + key, "is required");
        return fallback;
    }
    if (!j.at(key).is_string()) bad_field(path + key, "must be a string");
    return j.at(key).get<std::string>();
}

bool get_bool(const json& j, const std::string& key, const std::string& path,
              bool fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_boolean()) bad_field(path + key, "must be a boolean");
    return j.at(key).get<bool>();
}

// ---------------------------------------------------------------------------
// Artifact bookkeeping.

struct Paths {
    fs::path dir;

    fs::path model() const { return dir / "model.bin"; }
    fs::path model_meta() const { return dir / "model_meta.json"; }
    fs::path ground_truth() const { return dir / "ground_truth.json"; }
    fs::path prompts_file() const { return dir / "prompts.json"; }
    fs::path minimal_pairs() const { return dir / "minimal_pairs.jsonl"; }
    fs::path mc_items() const { return dir / "mc_items.jsonl"; }
    fs::path routing_log() const { return dir / "routing_log.jsonl"; }
    fs::path metrics_csv() const { return dir / "metrics.csv"; }
    fs::path layer_metrics_csv() const { return dir / "layer_metrics.csv"; }
    fs::path profile() const { return dir / "profile.json"; }
    fs::path layer_scores() const { return dir / "layer_scores.json"; }
    fs::path pareto() const { return dir / "pareto.json"; }
    fs::path eval_report() const { return dir / "eval_report.json"; }
    fs::path ablation() const { return dir / "ablation.json"; }
    fs::path ablation_csv() const { return dir / "ablation.csv"; }
    fs::path masking() const { return dir / "masking.json"; }
    fs::path report() const { return dir / "report.json"; }
    fs::path manifest() const { return dir / "run_manifest.json"; }
    fs::path plots() const { return dir / "plots"; }
};

Paths paths_for(const RunConfig& config) { return Paths{fs::path(config.out_dir)}; }

void require_artifact(const fs::path& p, const std::string& producer) {
    if (!fs::exists(p))
        throw ProtocolError("missing artifact '" + p.filename().string() +
                            "': run the '" + producer + "' stage first");
}

void write_text(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open '" + p.string() + "' for writing");
    out << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw InputError("cannot open '" + p.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("'" + p.string() + "': " + e.what());
    }
}

// Reads an artifact and checks that it was produced by this configuration.
json read_artifact(const fs::path& p, const std::string& producer,
                   const std::string& config_hash) {
    require_artifact(p, producer);
    json j = read_json(p);
    const std::string found = j.value("config_hash", "");
    if (found != config_hash)
        throw ProtocolError("artifact '" + p.filename().string() +
                            "' was produced by config " + found +
                            " but the current config hashes to " + config_hash);
    return j;
}

// ---------------------------------------------------------------------------
// Serialization helpers for pipeline structs.

json weights_to_json(const profile::MetricWeights& w) {
    return json{{"ard", w.w_ard}, {"jsd", w.w_jsd}, {"pmi", w.w_pmi}, {"ent", w.w_ent}};
}

json phi_to_json(const std::map<int, Vec>& phi) {
    json out = json::object();
    for (const auto& [layer, values] : phi) out[std::to_string(layer)] = values;
    return out;
}

profile::SensitivityProfile profile_from_json(const json& j) {
    profile::SensitivityProfile prof;
    for (const auto& [key, values] : j.at("phi").items())
        prof.phi[std::stoi(key)] = values.get<Vec>();
    const auto& w = j.at("weights");
    prof.weights = {w.at("ard").get<double>(), w.at("jsd").get<double>(),
                    w.at("pmi").get<double>(), w.at("ent").get<double>()};
    prof.collapse = j.at("collapse").get<std::string>() == "max"
                        ? profile::GroupCollapse::Max
                        : profile::GroupCollapse::Mean;
    prof.provenance = j.value("provenance", "fsp");
    return prof;
}

json rows_to_json(const std::vector<intervene::ConditionRow>& rows) {
    json out = json::array();
    for (const auto& r : rows)
        out.push_back({{"condition", r.condition},
                       {"lambda", r.lambda},
                       {"delta_preference", r.delta_preference},
                       {"delta_utility", r.delta_utility},
                       {"ppl_ratio", r.ppl_ratio},
                       {"n_seeds", r.n_seeds}});
    return out;
}

std::string rows_to_csv(const std::vector<intervene::ConditionRow>& rows) {
    std::string out = "condition,lambda,delta_preference,delta_utility,ppl_ratio,n_seeds\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g,%d\n",
                      r.condition.c_str(), r.lambda, r.delta_preference,
                      r.delta_utility, r.ppl_ratio, r.n_seeds);
        out += buf;
    }
    return out;
}

std::string checksum_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// ---------------------------------------------------------------------------
// Evaluation material derived from the workspace.

std::vector<prompts::MinimalPair> build_minimal_pairs(const RunConfig& config,
                                                      const Workspace& ws) {
    std::vector<prompts::MinimalPair> pairs;
    const int attr =
        config.attribute_word.empty() ? -1 : ws.vocab.id(config.attribute_word);
    for (const auto& axis : config.axes) {
        const auto& [stereo_group, anti_group] = axis_groups().at(axis);
        const int stereo_tok = ws.vocab.id(stereo_group);
        const int anti_tok = ws.vocab.id(anti_group);
        for (const auto& p : ws.suite.demographic) {
            if (p.axis != axis || p.group != stereo_group) continue;
            prompts::MinimalPair pair;
            pair.axis = axis;
            pair.stereo = p.tokens;
            pair.anti = p.tokens;
            std::size_t desc_at = 0;
            for (std::size_t i = 0; i < pair.anti.size(); ++i)
                if (pair.anti[i] == stereo_tok) {
                    pair.anti[i] = anti_tok;
                    desc_at = i;
                    break;
                }
            // The attribute goes right after the descriptor, where a
            // stereotype association shows up as next-token probability.
            if (attr >= 0) {
                pair.stereo.insert(pair.stereo.begin() + desc_at + 1, attr);
                pair.anti.insert(pair.anti.begin() + desc_at + 1, attr);
            }
            pair.stereo_text = ws.vocab.decode(pair.stereo);
            pair.anti_text = ws.vocab.decode(pair.anti);
            pairs.push_back(std::move(pair));
        }
    }
    return pairs;
}

std::vector<prompts::MCItem> build_mc_items(const Workspace& ws) {
    std::vector<prompts::MCItem> items;
    // Planted facts make natural retrieval items with the other answers as
    // distractors.
    std::vector<std::pair<int, int>> facts;
    for (const auto& k : ws.plant.knowledge_experts)
        for (const auto& f : k.facts) facts.emplace_back(f.question_token, f.answer_token);
    if (!facts.empty()) {
        const std::vector<int> fillers = {ws.vocab.id("late"), ws.vocab.id("again")};
        for (std::size_t i = 0; i < facts.size(); ++i) {
            prompts::MCItem item;
            item.context = {facts[i].first};
            item.correct = {facts[i].second};
            item.tag = "fact-" + std::to_string(i);
            for (std::size_t d = 1; d <= 2; ++d) {
                if (facts.size() > 2)
                    item.distractors.push_back({facts[(i + d) % facts.size()].second});
                else
                    item.distractors.push_back({fillers[d - 1]});
            }
            items.push_back(std::move(item));
        }
        return items;
    }
    // Otherwise: last-word cloze items over the neutral suite.
    const std::vector<std::string> candidates = {"late", "again", "today", "work", "here"};
    for (const auto& p : ws.suite.neutral) {
        prompts::MCItem item;
        item.context.assign(p.tokens.begin(), p.tokens.end() - 1);
        item.correct = {p.tokens.back()};
        item.tag = "cloze-" + std::to_string(p.id);
        for (const auto& w : candidates) {
            if (item.distractors.size() == 2) break;
            const int t = ws.vocab.id(w);
            if (t != p.tokens.back()) item.distractors.push_back({t});
        }
        items.push_back(std::move(item));
    }
    return items;
}

std::vector<std::vector<int>> build_ppl_corpus(const Workspace& ws) {
    std::vector<std::vector<int>> corpus;
    for (const auto& p : ws.suite.neutral) corpus.push_back(p.tokens);
    return corpus;
}

eval::EvalBundle load_bundle(const RunConfig& config, const Workspace& ws) {
    const auto p = paths_for(config);
    require_artifact(p.minimal_pairs(), "generate");
    require_artifact(p.mc_items(), "generate");
    eval::EvalBundle bundle;
    bundle.minimal_pairs = prompts::ingest_minimal_pairs(p.minimal_pairs().string(), ws.vocab);
    bundle.mc_items = prompts::ingest_mc_items(p.mc_items().string(), ws.vocab);
    bundle.ppl_corpus = build_ppl_corpus(ws);
    return bundle;
}

moe::Model load_model(const RunConfig& config) {
    const auto p = paths_for(config);
    require_artifact(p.model(), "generate");
    read_artifact(p.model_meta(), "generate", config.config_hash);
    return moe::Model::load(p.model().string());
}

std::string utc_timestamp() {
    const std::time_t now =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration.

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    check_keys(j, "the top level", {"model", "plant", "prompts", "pipeline", "output"});

    RunConfig c;

    // -- model ------------------------------------------------------------
    const json& jm = require_obj(j, "model", "");
    check_keys(jm, "section 'model'",
               {"preset", "seed", "d_model", "n_layers", "moe_layers", "n_experts",
                "top_k", "n_shared", "d_expert_hidden"});
    c.preset = get_str(jm, "preset", "model.", "");
    c.model.seed = static_cast<std::uint64_t>(
        get_int(jm, "seed", "model.", 0, /*required=*/true));
    if (!c.preset.empty()) {
        for (const char* k : {"d_model", "n_layers", "moe_layers", "n_experts", "top_k",
                              "n_shared", "d_expert_hidden"})
            if (jm.contains(k))
                bad_field(std::string("model.") + k,
                          "cannot be combined with model.preset");
    } else {
        c.model.d_model = get_int(jm, "d_model", "model.", 0, true);
        c.model.n_layers = get_int(jm, "n_layers", "model.", 0, true);
        if (!jm.contains("moe_layers") || !jm.at("moe_layers").is_array())
            bad_field("model.moe_layers", "must be an array of layer indices");
        for (const auto& v : jm.at("moe_layers")) {
            if (!v.is_number_integer())
                bad_field("model.moe_layers", "must contain only integers");
            c.model.moe_layers.insert(v.get<int>());
        }
        c.model.n_experts = get_int(jm, "n_experts", "model.", 0, true);
        c.model.top_k = get_int(jm, "top_k", "model.", 0, true);
        c.model.n_shared = get_int(jm, "n_shared", "model.", 0);
        c.model.d_expert_hidden = get_int(jm, "d_expert_hidden", "model.", 0, true);
    }

    // -- plant ------------------------------------------------------------
    if (j.contains("plant")) {
        const json& jp = require_obj(j, "plant", "");
        check_keys(jp, "section 'plant'",
                   {"biased_experts", "knowledge_experts", "entangled", "breadth",
                    "stereo_push", "knowledge_strength"});
        if (jp.contains("biased_experts")) {
            if (!jp.at("biased_experts").is_array())
                bad_field("plant.biased_experts", "must be an array");
            for (const auto& b : jp.at("biased_experts")) {
                const std::string path = "plant.biased_experts[].";
                plant::BiasedExpert e;
                e.layer = get_int(b, "layer", path, 0, true);
                e.expert = get_int(b, "expert", path, 0, true);
                e.axis = get_str(b, "axis", path, "", true);
                e.group = get_str(b, "group", path, "", true);
                e.delta = get_num(b, "delta", path, 0.05);
                c.plant.biased.push_back(std::move(e));
            }
        }
        if (jp.contains("knowledge_experts")) {
            if (!jp.at("knowledge_experts").is_array())
                bad_field("plant.knowledge_experts", "must be an array");
            for (const auto& k : jp.at("knowledge_experts")) {
                const std::string path = "plant.knowledge_experts[].";
                KnowledgeDesc d;
                d.layer = get_int(k, "layer", path, 0, true);
                d.expert = get_int(k, "expert", path, 0, true);
                d.n_facts = get_int(k, "n_facts", path, 1);
                if (d.n_facts < 1) bad_field(path + "n_facts", "must be at least 1");
                c.plant.knowledge.push_back(d);
            }
        }
        c.plant.entangled = get_bool(jp, "entangled", "plant.", false);
        c.plant.breadth = get_int(jp, "breadth", "plant.", 1);
        c.plant.knowledge_strength = get_num(jp, "knowledge_strength", "plant.", 8.0);
        if (jp.contains("stereo_push")) {
            const json& js = require_obj(jp, "stereo_push", "plant.");
            StereoDesc s;
            s.attribute_word =
                get_str(js, "attribute_word", "plant.stereo_push.", "", true);
            s.strength = get_num(js, "strength", "plant.stereo_push.", 6.0);
            c.plant.stereo = std::move(s);
        }
    }

    // -- prompts ----------------------------------------------------------
    if (j.contains("prompts")) {
        const json& jr = require_obj(j, "prompts", "");
        check_keys(jr, "section 'prompts'",
                   {"n_templates", "n_professions", "axes", "attribute_word"});
        c.n_templates = get_int(jr, "n_templates", "prompts.", c.n_templates);
        c.n_professions = get_int(jr, "n_professions", "prompts.", c.n_professions);
        if (jr.contains("axes")) {
            if (!jr.at("axes").is_array())
                bad_field("prompts.axes", "must be an array of axis names");
            c.axes.clear();
            for (const auto& a : jr.at("axes")) {
                if (!a.is_string()) bad_field("prompts.axes", "must contain strings");
                c.axes.push_back(a.get<std::string>());
            }
        }
        c.attribute_word = get_str(jr, "attribute_word", "prompts.", "");
    }

    // -- pipeline ---------------------------------------------------------
    if (j.contains("pipeline")) {
        const json& jq = require_obj(j, "pipeline", "");
        check_keys(jq, "section 'pipeline'",
                   {"weights", "collapse", "aggregation", "standard_pmi", "lambda_grid",
                    "beta", "quantile", "n_perm", "n_boot", "stats_seed",
                    "mask_group_size", "n_random_seeds", "ablation_lambda"});
        if (jq.contains("weights")) {
            const json& jw = require_obj(jq, "weights", "pipeline.");
            check_keys(jw, "section 'pipeline.weights'", {"ard", "jsd", "pmi", "ent"});
            c.weights.w_ard = get_num(jw, "ard", "pipeline.weights.", c.weights.w_ard);
            c.weights.w_jsd = get_num(jw, "jsd", "pipeline.weights.", c.weights.w_jsd);
            c.weights.w_pmi = get_num(jw, "pmi", "pipeline.weights.", c.weights.w_pmi);
            c.weights.w_ent = get_num(jw, "ent", "pipeline.weights.", c.weights.w_ent);
        }
        const std::string collapse = get_str(jq, "collapse", "pipeline.", "mean");
        if (collapse == "mean")
            c.collapse = profile::GroupCollapse::Mean;
        else if (collapse == "max")
            c.collapse = profile::GroupCollapse::Max;
        else
            bad_field("pipeline.collapse", "must be 'mean' or 'max'");
        c.aggregation = capture::aggregation_mode_from_string(
            get_str(jq, "aggregation", "pipeline.", "selection-frequency"));
        c.standard_pmi = get_bool(jq, "standard_pmi", "pipeline.", false);
        if (jq.contains("lambda_grid")) {
            if (!jq.at("lambda_grid").is_array())
                bad_field("pipeline.lambda_grid", "must be an array of numbers");
            for (const auto& v : jq.at("lambda_grid")) {
                if (!v.is_number())
                    bad_field("pipeline.lambda_grid", "must contain only numbers");
                c.lambda_grid.push_back(v.get<double>());
            }
        }
        c.beta = get_num(jq, "beta", "pipeline.", c.beta);
        c.quantile = get_num(jq, "quantile", "pipeline.", c.quantile);
        c.n_perm = get_int(jq, "n_perm", "pipeline.", c.n_perm);
        c.n_boot = get_int(jq, "n_boot", "pipeline.", c.n_boot);
        c.stats_seed =
            static_cast<std::uint64_t>(get_int(jq, "stats_seed", "pipeline.", 0));
        c.mask_group_size = get_int(jq, "mask_group_size", "pipeline.", c.mask_group_size);
        c.n_random_seeds = get_int(jq, "n_random_seeds", "pipeline.", c.n_random_seeds);
        c.ablation_lambda = get_num(jq, "ablation_lambda", "pipeline.", c.ablation_lambda);
        if (c.quantile < 0.0 || c.quantile > 1.0)
            bad_field("pipeline.quantile", "must be in [0, 1]");
        if (c.beta < 0.0) bad_field("pipeline.beta", "must be non-negative");
        if (c.n_perm < 1) bad_field("pipeline.n_perm", "must be positive");
        if (c.n_boot < 1) bad_field("pipeline.n_boot", "must be positive");
        if (c.n_random_seeds < 0)
            bad_field("pipeline.n_random_seeds", "must be non-negative");
    }
    c.weights.validate();

    // -- output (excluded from the hash) ----------------------------------
    if (j.contains("output")) {
        const json& jo = require_obj(j, "output", "");
        check_keys(jo, "section 'output'", {"dir"});
        c.out_dir = get_str(jo, "dir", "output.", c.out_dir);
    }

    json hashed = j;
    hashed.erase("output");
    c.config_hash = fnv1a_hex(hashed.dump());
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json_text(buf.str());
}

// ---------------------------------------------------------------------------
// Workspace.

Workspace build_workspace(const RunConfig& config) {
    const auto& tpool = template_pool();
    const auto& ppool = profession_pool();
    if (config.n_templates < 1 ||
        config.n_templates > static_cast<int>(tpool.size()))
        throw ConfigError("config: prompts.n_templates must be in [1, " +
                          std::to_string(tpool.size()) + "]");
    if (config.n_professions < 1 ||
        config.n_professions > static_cast<int>(ppool.size()))
        throw ConfigError("config: prompts.n_professions must be in [1, " +
                          std::to_string(ppool.size()) + "]");
    if (config.axes.empty()) throw ConfigError("config: prompts.axes must be non-empty");

    Workspace ws;
    ws.attribute_word = config.attribute_word;

    const std::vector<prompts::Template> templates(
        tpool.begin(), tpool.begin() + config.n_templates);
    const std::vector<std::string> professions(
        ppool.begin(), ppool.begin() + config.n_professions);
    for (const auto& axis : config.axes) {
        auto it = axis_groups().find(axis);
        if (it == axis_groups().end())
            throw ConfigError("config: prompts.axes contains unknown axis '" + axis + "'");
        ws.descriptors.push_back({axis, it->second.first, it->second.first});
        ws.descriptors.push_back({axis, it->second.second, it->second.second});
    }

    // Vocabulary: template words, professions, descriptors, the stereotype
    // attribute, then synthetic fact tokens — in that fixed order.
    for (const auto& t : templates)
        for (const auto& w : t.words)
            if (w != "{prof}") ws.vocab.add(w);
    for (const auto& p : professions) ws.vocab.add(p);
    for (const auto& d : ws.descriptors) ws.vocab.add(d.surface_text);
    if (!config.attribute_word.empty()) ws.vocab.add(config.attribute_word);
    if (config.plant.stereo) ws.vocab.add(config.plant.stereo->attribute_word);
    // Cloze distractor words must exist even with a one-template suite.
    for (const char* w : {"late", "again", "today", "work", "here"}) ws.vocab.add(w);
    int total_facts = 0;
    for (const auto& k : config.plant.knowledge) total_facts += k.n_facts;
    for (int i = 0; i < total_facts; ++i) ws.vocab.add("q" + std::to_string(i));
    for (int i = 0; i < total_facts; ++i) ws.vocab.add("a" + std::to_string(i));

    ws.suite = prompts::generate_suite(templates, professions, ws.descriptors, ws.vocab);

    // Model shape.
    if (!config.preset.empty()) {
        ws.model_config =
            moe::preset_config(config.preset, ws.vocab.size(), config.model.seed);
    } else {
        ws.model_config = config.model;
        ws.model_config.vocab_size = ws.vocab.size();
    }
    ws.model_config.validate();

    // Resolve the plant against the vocabulary.
    ws.plant.biased_experts = config.plant.biased;
    for (const auto& b : ws.plant.biased_experts) {
        const bool present =
            std::any_of(ws.descriptors.begin(), ws.descriptors.end(),
                        [&](const prompts::Descriptor& d) {
                            return d.axis == b.axis && d.group == b.group;
                        });
        if (!present)
            throw ConfigError("config: plant targets group '" + b.axis + "/" + b.group +
                              "' which the prompt suite does not cover");
    }
    int fact_id = 0;
    for (const auto& k : config.plant.knowledge) {
        plant::KnowledgeExpert ke;
        ke.layer = k.layer;
        ke.expert = k.expert;
        for (int f = 0; f < k.n_facts; ++f, ++fact_id)
            ke.facts.push_back({ws.vocab.id("q" + std::to_string(fact_id)),
                                ws.vocab.id("a" + std::to_string(fact_id))});
        ws.plant.knowledge_experts.push_back(std::move(ke));
    }
    ws.plant.entangled = config.plant.entangled;
    ws.plant.breadth = config.plant.breadth;
    ws.plant.knowledge_strength = config.plant.knowledge_strength;
    if (config.plant.stereo)
        ws.plant.stereo_push = plant::StereoPush{
            ws.vocab.id(config.plant.stereo->attribute_word), config.plant.stereo->strength};
    return ws;
}

// ---------------------------------------------------------------------------
// Stages.

void cmd_generate(const RunConfig& config) {
    const auto p = paths_for(config);
    fs::create_directories(p.dir);
    const Workspace ws = build_workspace(config);

    plant::PlantContext ctx{&ws.vocab, &ws.suite, ws.descriptors};
    const auto planted = plant::build_planted_model(ws.model_config, ws.plant, ctx);
    planted.model.save(p.model().string());

    json meta = {
        {"schema", "farelab-model-meta-v1"},
        {"config_hash", config.config_hash},
        {"preset", config.preset},
        {"weight_checksum", checksum_hex(planted.model.weight_checksum())},
        {"model",
         {{"vocab_size", ws.model_config.vocab_size},
          {"d_model", ws.model_config.d_model},
          {"n_layers", ws.model_config.n_layers},
          {"moe_layers", std::vector<int>(ws.model_config.moe_layers.begin(),
                                          ws.model_config.moe_layers.end())},
          {"n_experts", ws.model_config.n_experts},
          {"top_k", ws.model_config.top_k},
          {"n_shared", ws.model_config.n_shared},
          {"d_expert_hidden", ws.model_config.d_expert_hidden},
          {"seed", ws.model_config.seed}}},
    };
    write_json(p.model_meta(), meta);

    json truth = json::parse(planted.truth.to_json());
    truth["schema"] = "farelab-ground-truth-v1";
    truth["config_hash"] = config.config_hash;
    write_json(p.ground_truth(), truth);

    json plist = json::array();
    for (const auto* pr : ws.suite.all())
        plist.push_back({{"id", pr->id},
                         {"condition",
                          pr->condition == prompts::Condition::Neutral ? "neutral"
                                                                       : "demographic"},
                         {"axis", pr->axis},
                         {"group", pr->group},
                         {"text", pr->text},
                         {"paired_neutral_id", pr->paired_neutral_id}});
    write_json(p.prompts_file(), json{{"schema", "farelab-prompts-v1"},
                                      {"config_hash", config.config_hash},
                                      {"prompts", plist}});

    prompts::write_minimal_pairs(p.minimal_pairs().string(),
                                 build_minimal_pairs(config, ws), config.config_hash);
    prompts::write_mc_items(p.mc_items().string(), build_mc_items(ws), ws.vocab,
                            config.config_hash);
}

void cmd_extract(const RunConfig& config) {
    const auto p = paths_for(config);
    const Workspace ws = build_workspace(config);
    const auto model = load_model(config);
    const auto log = capture::capture_run(model, ws.suite);
    capture::serialize_log_jsonl(log, p.routing_log().string(), config.config_hash);
}

void cmd_profile(const RunConfig& config) {
    const auto p = paths_for(config);
    require_artifact(p.routing_log(), "extract");
    const auto log = capture::deserialize_log_jsonl(p.routing_log().string());
    const auto stats = capture::aggregate(log, config.aggregation);
    const auto metrics = profile::compute_metrics(stats, config.standard_pmi);
    const auto prof = profile::fsp_score(metrics, config.weights, config.collapse);
    const auto desc = profile::descriptive_stats(stats, prof);

    // Expert-level metric table.
    std::string csv = "layer,group,expert,ard,pmi\n";
    char buf[256];
    for (const auto& [layer, groups] : metrics.ard)
        for (const auto& [key, ard] : groups) {
            const auto& pmi = metrics.pmi.at(layer).at(key);
            for (std::size_t e = 0; e < ard.size(); ++e) {
                std::snprintf(buf, sizeof(buf), "%d,%s,%zu,%.17g,%.17g\n", layer,
                              key.c_str(), e, ard[e], pmi[e]);
                csv += buf;
            }
        }
    write_text(p.metrics_csv(), csv);

    std::string lcsv = "layer,group,jsd,entropy_gap\n";
    for (const auto& [layer, groups] : metrics.jsd)
        for (const auto& [key, v] : groups) {
            std::snprintf(buf, sizeof(buf), "%d,%s,%.17g,%.17g\n", layer, key.c_str(), v,
                          metrics.entropy_gap.at(layer).at(key));
            lcsv += buf;
        }
    write_text(p.layer_metrics_csv(), lcsv);

    json gini = json::object();
    for (const auto& [layer, g] : desc.gini_per_layer) gini[std::to_string(layer)] = g;
    write_json(p.profile(),
               json{{"schema", "farelab-profile-v1"},
                    {"config_hash", config.config_hash},
                    {"aggregation", capture::to_string(config.aggregation)},
                    {"standard_pmi", config.standard_pmi},
                    {"weights", weights_to_json(config.weights)},
                    {"collapse",
                     config.collapse == profile::GroupCollapse::Max ? "max" : "mean"},
                    {"provenance", prof.provenance},
                    {"phi", phi_to_json(prof.phi)},
                    {"descriptive",
                     {{"gini_per_layer", gini},
                      {"gini_pooled", desc.gini_pooled},
                      {"top10_share", desc.top10_share},
                      {"top10_truncated", desc.top10_truncated},
                      {"spearman_phi_freq", desc.spearman_phi_freq}}}});
}

void cmd_select(const RunConfig& config) {
    const auto p = paths_for(config);
    const auto prof = profile_from_json(
        read_artifact(p.profile(), "profile", config.config_hash));
    const Workspace ws = build_workspace(config);
    const auto model = load_model(config);
    const auto bundle = load_bundle(config, ws);

    std::vector<intervene::LayerScore> scores;
    for (int layer : model.config.moe_layers)
        scores.push_back(intervene::aals_probe(model, bundle, layer, prof));
    const auto selection = intervene::aals_select(scores, config.quantile);

    json jscores = json::array();
    for (const auto& s : scores)
        jscores.push_back({{"layer", s.layer},
                           {"delta_bias", s.delta_bias},
                           {"delta_ppl", s.delta_ppl},
                           {"ratio", s.ratio}});
    write_json(p.layer_scores(),
               json{{"schema", "farelab-layer-scores-v1"},
                    {"config_hash", config.config_hash},
                    {"quantile", config.quantile},
                    {"scores", jscores},
                    {"selected",
                     std::vector<int>(selection.layers.begin(), selection.layers.end())},
                    {"fallback_used", selection.fallback_used},
                    {"threshold", selection.threshold}});
}

void cmd_intervene(const RunConfig& config) {
    const auto p = paths_for(config);
    const auto prof = profile_from_json(
        read_artifact(p.profile(), "profile", config.config_hash));
    const auto jsel = read_artifact(p.layer_scores(), "select", config.config_hash);
    const auto selected = jsel.at("selected").get<std::vector<int>>();
    const Workspace ws = build_workspace(config);
    const auto model = load_model(config);
    const auto bundle = load_bundle(config, ws);

    const auto grid = config.lambda_grid.empty() ? intervene::default_lambda_grid()
                                                 : config.lambda_grid;
    const auto result = intervene::pareto_search(
        model, bundle, prof, std::set<int>(selected.begin(), selected.end()), grid,
        config.beta);

    json jgrid = json::array();
    for (const auto& pt : result.grid)
        jgrid.push_back({{"lambda", pt.lambda},
                         {"preference", pt.preference},
                         {"ppl", pt.ppl},
                         {"feasible", pt.feasible}});
    write_json(p.pareto(), json{{"schema", "farelab-pareto-v1"},
                                {"config_hash", config.config_hash},
                                {"beta", result.beta},
                                {"ppl_base", result.ppl_base},
                                {"lambda_star", result.lambda_star},
                                {"grid", jgrid}});
}

void cmd_evaluate(const RunConfig& config) {
    const auto p = paths_for(config);
    const auto prof = profile_from_json(
        read_artifact(p.profile(), "profile", config.config_hash));
    const auto jsel = read_artifact(p.layer_scores(), "select", config.config_hash);
    const auto jpar = read_artifact(p.pareto(), "intervene", config.config_hash);
    const auto selected = jsel.at("selected").get<std::vector<int>>();
    const double lambda_star = jpar.at("lambda_star").get<double>();
    const Workspace ws = build_workspace(config);
    const auto model = load_model(config);
    const auto bundle = load_bundle(config, ws);

    intervene::InterventionSpec spec;
    spec.layers = std::set<int>(selected.begin(), selected.end());
    spec.lambda = lambda_star;
    spec.profile = prof;
    spec.validate(model.config);
    const intervene::RoutingIntervention hook(spec);

    auto evaluate_side = [&](const moe::RouterHook* h) {
        const auto pref = eval::preference_score(model, bundle.minimal_pairs, h);
        const auto util = eval::utility_accuracy(model, bundle.mc_items, h);
        const double ppl = model.perplexity(bundle.ppl_corpus, h);
        const auto test = stats::paired_permutation_test(
            pref.per_pair_diffs, config.n_perm, config.stats_seed);
        const auto ci = stats::bootstrap_ci(pref.per_pair_diffs, config.n_boot, 0.95,
                                            config.stats_seed);
        return json{{"preference", pref.preference},
                    {"n_pairs", pref.n_pairs},
                    {"n_ties", pref.n_ties},
                    {"utility", util.accuracy},
                    {"ppl", ppl},
                    {"mean_pair_diff", test.statistic},
                    {"p_value", test.p_value},
                    {"p_exact", test.exact},
                    {"ci", {ci.low, ci.high}}};
    };
    json base = evaluate_side(nullptr);
    json treated = evaluate_side(&hook);

    const auto budget = eval::ppl_budget_check(
        treated.at("ppl").get<double>(), base.at("ppl").get<double>(), config.beta);

    // Per-axis permutation p-values on the baseline bias, BH-corrected.
    std::map<std::string, Vec> by_axis;
    {
        const auto pref = eval::preference_score(model, bundle.minimal_pairs);
        for (std::size_t i = 0; i < bundle.minimal_pairs.size(); ++i)
            by_axis[bundle.minimal_pairs[i].axis].push_back(pref.per_pair_diffs[i]);
    }
    std::vector<std::string> axes;
    Vec axis_p;
    for (const auto& [axis, diffs] : by_axis) {
        axes.push_back(axis);
        axis_p.push_back(stats::paired_permutation_test(diffs, config.n_perm,
                                                        config.stats_seed)
                             .p_value);
    }
    const auto bh = stats::bh_correct(axis_p, 0.05);
    json jaxes = json::array();
    for (std::size_t i = 0; i < axes.size(); ++i)
        jaxes.push_back({{"axis", axes[i]},
                         {"n_pairs", by_axis.at(axes[i]).size()},
                         {"p_value", axis_p[i]},
                         {"p_adjusted", bh.adjusted_p[i]},
                         {"reject", static_cast<bool>(bh.reject[i])}});

    write_json(p.eval_report(),
               json{{"schema", "farelab-eval-report-v1"},
                    {"config_hash", config.config_hash},
                    {"lambda_star", lambda_star},
                    {"layers", selected},
                    {"baseline", base},
                    {"intervened", treated},
                    {"budget",
                     {{"feasible", budget.feasible},
                      {"ratio", budget.ratio},
                      {"beta", config.beta}}},
                    {"per_axis", jaxes}});
}

void cmd_ablate(const RunConfig& config) {
    const auto p = paths_for(config);
    const auto prof = profile_from_json(
        read_artifact(p.profile(), "profile", config.config_hash));
    const Workspace ws = build_workspace(config);
    const auto model = load_model(config);
    const auto bundle = load_bundle(config, ws);

    const auto rows = intervene::synthetic_ablation(
        model, prof, intervene::default_ablation_conditions(), bundle,
        config.ablation_lambda, config.n_random_seeds);
    write_json(p.ablation(), json{{"schema", "farelab-ablation-v1"},
                                  {"config_hash", config.config_hash},
                                  {"lambda", config.ablation_lambda},
                                  {"rows", rows_to_json(rows)}});
    write_text(p.ablation_csv(), rows_to_csv(rows));
}

void cmd_mask(const RunConfig& config) {
    const auto p = paths_for(config);
    const auto prof = profile_from_json(
        read_artifact(p.profile(), "profile", config.config_hash));
    const Workspace ws = build_workspace(config);
    const auto model = load_model(config);
    const auto bundle = load_bundle(config, ws);

    const auto rows = intervene::group_masking_experiment(
        model, prof, config.mask_group_size, config.n_random_seeds, bundle);
    write_json(p.masking(), json{{"schema", "farelab-masking-v1"},
                                 {"config_hash", config.config_hash},
                                 {"group_size", config.mask_group_size},
                                 {"rows", rows_to_json(rows)}});
}

void cmd_report(const RunConfig& config) {
    const auto p = paths_for(config);
    json report = {{"schema", "farelab-report-v1"}, {"config_hash", config.config_hash}};
    report["model"] = read_artifact(p.model_meta(), "generate", config.config_hash);
    report["ground_truth"] =
        read_artifact(p.ground_truth(), "generate", config.config_hash);
    report["profile"] = read_artifact(p.profile(), "profile", config.config_hash);
    report["layer_scores"] =
        read_artifact(p.layer_scores(), "select", config.config_hash);
    report["pareto"] = read_artifact(p.pareto(), "intervene", config.config_hash);
    report["evaluation"] =
        read_artifact(p.eval_report(), "evaluate", config.config_hash);
    report["ablation"] = read_artifact(p.ablation(), "ablate", config.config_hash);
    report["masking"] = read_artifact(p.masking(), "mask", config.config_hash);
    write_json(p.report(), report);

    render_plots(p.report().string(), p.plots().string());

    json artifacts = json::array();
    for (const auto& entry : fs::directory_iterator(p.dir))
        if (entry.is_regular_file() &&
            entry.path().filename() != "run_manifest.json")
            artifacts.push_back(entry.path().filename().string());
    std::sort(artifacts.begin(), artifacts.end());
    write_json(p.manifest(), json{{"schema", "farelab-run-manifest-v1"},
                                  {"config_hash", config.config_hash},
                                  {"created_utc", utc_timestamp()},
                                  {"artifacts", artifacts}});
}

void cmd_run_all(const RunConfig& config) {
    cmd_generate(config);
    cmd_extract(config);
    cmd_profile(config);
    cmd_select(config);
    cmd_intervene(config);
    cmd_evaluate(config);
    cmd_ablate(config);
    cmd_mask(config);
    cmd_report(config);
}

void run_stage(const RunConfig& config, const std::string& stage) {
    if (stage == "generate") return cmd_generate(config);
    if (stage == "extract") return cmd_extract(config);
    if (stage == "profile") return cmd_profile(config);
    if (stage == "select") return cmd_select(config);
    if (stage == "intervene") return cmd_intervene(config);
    if (stage == "evaluate") return cmd_evaluate(config);
    if (stage == "ablate") return cmd_ablate(config);
    if (stage == "mask") return cmd_mask(config);
    if (stage == "report") return cmd_report(config);
    if (stage == "run-all") return cmd_run_all(config);
    throw ConfigError("unknown stage '" + stage + "'");
}

// ---------------------------------------------------------------------------
// Plots. Hand-rolled SVG keeps the artifacts self-contained and byte-stable.

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

constexpr double kW = 640.0, kH = 400.0;
constexpr double kLeft = 70.0, kRight = 600.0, kTop = 40.0, kBottom = 340.0;

std::string svg_open(const std::string& title) {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kW) +
                    "\" height=\"" + fmt(kH) + "\" viewBox=\"0 0 " + fmt(kW) + " " +
                    fmt(kH) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + fmt(kW / 2) +
         "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"16\">" +
         title + "</text>\n";
    return s;
}

std::string svg_axes() {
    return "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kBottom) + "\" x2=\"" +
           fmt(kRight) + "\" y2=\"" + fmt(kBottom) +
           "\" stroke=\"black\" stroke-width=\"1\"/>\n" + "<line x1=\"" + fmt(kLeft) +
           "\" y1=\"" + fmt(kTop) + "\" x2=\"" + fmt(kLeft) + "\" y2=\"" + fmt(kBottom) +
           "\" stroke=\"black\" stroke-width=\"1\"/>\n";
}

std::string svg_label(double x, double y, const std::string& text,
                      const std::string& anchor = "middle", int size = 11) {
    return "<text x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" text-anchor=\"" + anchor +
           "\" font-family=\"sans-serif\" font-size=\"" + std::to_string(size) + "\">" +
           text + "</text>\n";
}

void render_layer_chart(const json& report, const fs::path& out) {
    const auto& scores = report.at("layer_scores").at("scores");
    std::vector<int> layers;
    Vec ratios;
    for (const auto& s : scores) {
        layers.push_back(s.at("layer").get<int>());
        ratios.push_back(s.at("ratio").get<double>());
    }
    double lo = 0.0, hi = 0.0;
    for (double r : ratios) {
        lo = std::min(lo, r);
        hi = std::max(hi, r);
    }
    if (hi == lo) hi = lo + 1.0;
    const auto y_of = [&](double v) {
        return kBottom - (v - lo) / (hi - lo) * (kBottom - kTop);
    };

    std::string s = svg_open("Layer sensitivity: bias reduction per unit perplexity");
    s += svg_axes();
    const double zero_y = y_of(0.0);
    s += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(zero_y) + "\" x2=\"" +
         fmt(kRight) + "\" y2=\"" + fmt(zero_y) +
         "\" stroke=\"#999\" stroke-dasharray=\"4 3\" stroke-width=\"1\"/>\n";
    const double n = static_cast<double>(layers.size());
    const double slot = (kRight - kLeft) / n;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const double x = kLeft + (static_cast<double>(i) + 0.2) * slot;
        const double w = slot * 0.6;
        const double y = y_of(std::max(ratios[i], 0.0));
        const double h = std::abs(y_of(ratios[i]) - zero_y);
        s += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(std::min(y, zero_y)) +
             "\" width=\"" + fmt(w) + "\" height=\"" + fmt(std::max(h, 0.5)) +
             "\" fill=\"#4878cf\"/>\n";
        s += svg_label(x + w / 2, kBottom + 18, "L" + std::to_string(layers[i]));
    }
    s += svg_label(kLeft - 8, y_of(hi) + 4, fmt(hi), "end");
    s += svg_label(kLeft - 8, y_of(lo) + 4, fmt(lo), "end");
    s += svg_label((kLeft + kRight) / 2, kBottom + 40, "layer");
    s += "</svg>\n";
    write_text(out, s);
}

void render_lambda_sweep(const json& report, const fs::path& out) {
    const auto& grid = report.at("pareto").at("grid");
    std::vector<double> lambdas, prefs, ppls;
    for (const auto& pt : grid) {
        lambdas.push_back(pt.at("lambda").get<double>());
        prefs.push_back(pt.at("preference").get<double>());
        ppls.push_back(pt.at("ppl").get<double>());
    }
    // One tick per configured grid value, evenly spaced so the axis covers
    // exactly the sweep that was run.
    const double n = static_cast<double>(lambdas.size());
    const auto x_of = [&](std::size_t i) {
        return n == 1 ? (kLeft + kRight) / 2
                      : kLeft + static_cast<double>(i) / (n - 1) * (kRight - kLeft);
    };
    const auto span_of = [](const std::vector<double>& v) {
        double lo = v[0], hi = v[0];
        for (double x : v) {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
        }
        if (hi == lo) hi = lo + 1e-9;
        return std::pair<double, double>{lo, hi};
    };
    const auto [plo, phi_hi] = span_of(prefs);
    const auto [qlo, qhi] = span_of(ppls);
    const auto y_pref = [&, plo = plo, phi_hi = phi_hi](double v) {
        return kBottom - (v - plo) / (phi_hi - plo) * (kBottom - kTop);
    };
    const auto y_ppl = [&, qlo = qlo, qhi = qhi](double v) {
        return kBottom - (v - qlo) / (qhi - qlo) * (kBottom - kTop);
    };

    std::string s = svg_open("Preference and perplexity across the penalty sweep");
    s += svg_axes();
    auto polyline = [&](const std::vector<double>& ys, auto&& y_of,
                        const std::string& color) {
        std::string pts;
        for (std::size_t i = 0; i < ys.size(); ++i)
            pts += fmt(x_of(i)) + "," + fmt(y_of(ys[i])) + " ";
        return "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color +
               "\" stroke-width=\"2\"/>\n";
    };
    s += polyline(prefs, y_pref, "#4878cf");
    s += polyline(ppls, y_ppl, "#d1605e");
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        s += "<line x1=\"" + fmt(x_of(i)) + "\" y1=\"" + fmt(kBottom) + "\" x2=\"" +
             fmt(x_of(i)) + "\" y2=\"" + fmt(kBottom + 5) + "\" stroke=\"black\"/>\n";
        s += svg_label(x_of(i), kBottom + 18, fmt(lambdas[i]));
    }
    s += svg_label(kLeft - 8, y_pref(phi_hi) + 4, fmt(phi_hi), "end");
    s += svg_label(kLeft - 8, y_pref(plo) + 4, fmt(plo), "end");
    s += svg_label((kLeft + kRight) / 2, kBottom + 40, "routing penalty strength");
    s += svg_label(kLeft + 10, kTop + 4, "preference (blue), perplexity (red)", "start");
    const double lambda_star = report.at("pareto").at("lambda_star").get<double>();
    s += svg_label(kRight, kTop + 4, "selected penalty: " + fmt(lambda_star), "end");
    s += "</svg>\n";
    write_text(out, s);
}

}  // namespace

void render_plots(const std::string& report_path, const std::string& plot_dir) {
    const json report = read_json(report_path);
    fs::create_directories(plot_dir);
    if (report.contains("layer_scores") &&
        !report.at("layer_scores").at("scores").empty()) {
        render_layer_chart(report, fs::path(plot_dir) / "layer_sensitivity.svg");
    } else {
        std::fprintf(stderr,
                     "warning: report has no layer scores; skipping layer chart\n");
    }
    if (report.contains("pareto") && !report.at("pareto").at("grid").empty()) {
        render_lambda_sweep(report, fs::path(plot_dir) / "lambda_sweep.svg");
    } else {
        std::fprintf(stderr,
                     "warning: report has no penalty sweep; rendering layer chart only\n");
    }
}

}  // namespace fare::pipe
