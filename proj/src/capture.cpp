#include "farelab/capture.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

namespace fare::capture {

using nlohmann::json;

AggregationMode aggregation_mode_from_string(const std::string& s) {
    if (s == "selection-frequency") return AggregationMode::SelectionFrequency;
    if (s == "probability-mass") return AggregationMode::ProbabilityMass;
    throw ConfigError("unknown aggregation mode: " + s);
}

std::string to_string(AggregationMode m) {
    return m == AggregationMode::SelectionFrequency ? "selection-frequency"
                                                    : "probability-mass";
}

void RoutingLog::validate() const {
    std::set<int> manifest_ids;
    for (const auto& m : manifest) manifest_ids.insert(m.prompt_id);
    for (const auto& e : entries)
        if (!manifest_ids.count(e.prompt_id))
            throw ProtocolError("routing log entry references prompt id " +
                                std::to_string(e.prompt_id) + " missing from manifest");
}

RoutingLog capture_run(const moe::Model& model, const prompts::PromptSet& prompt_set,
                       const moe::RouterHook* hook) {
    const auto all = prompt_set.all();
    if (all.empty()) throw InputError("capture_run: empty prompt set");
    RoutingLog log;
    log.n_experts = model.config.n_experts;
    log.top_k = model.config.top_k;
    for (const auto* p : all) {
        ManifestEntry m;
        m.prompt_id = p->id;
        m.text = p->text;
        m.condition = p->condition;
        m.axis = p->axis;
        m.group = p->group;
        m.token_count = static_cast<int>(p->tokens.size());
        log.manifest.push_back(std::move(m));

        moe::ForwardOutput out;
        try {
            out = model.forward(p->tokens, hook);
        } catch (const FareError& e) {
            throw InputError("capture_run: prompt " + std::to_string(p->id) + ": " +
                             e.what());
        }
        for (auto& rec : out.routing_records) {
            LogEntry entry;
            entry.prompt_id = p->id;
            entry.condition = p->condition;
            entry.axis = p->axis;
            entry.group = p->group;
            entry.record = std::move(rec);
            log.entries.push_back(std::move(entry));
        }
    }
    return log;
}

std::vector<int> ActivationStats::layer_ids() const {
    std::vector<int> out;
    for (const auto& [l, _] : baseline_rate) out.push_back(l);
    return out;
}

std::vector<GroupKey> ActivationStats::group_keys() const {
    std::vector<GroupKey> out;
    for (const auto& [g, _] : p_group) out.push_back(g);
    return out;
}

ActivationStats aggregate(const RoutingLog& log, AggregationMode mode) {
    log.validate();
    bool has_neutral = false, has_demo = false;
    for (const auto& e : log.entries) {
        if (e.condition == prompts::Condition::Neutral) has_neutral = true;
        if (e.condition == prompts::Condition::Demographic) has_demo = true;
    }
    if (!has_neutral)
        throw ProtocolError("aggregate: log has no neutral baseline condition");
    if (!has_demo)
        throw ProtocolError("aggregate: log has no demographic condition");

    const int K = log.n_experts;
    ActivationStats stats;
    stats.n_experts = K;
    stats.top_k = log.top_k;
    stats.mode = mode;

    struct Accum {
        Vec rate;        // mode-dependent numerator
        Vec prob_mass;   // probability-mass numerator (for mean distributions)
        Vec selections;  // selection counts (for routing frequency)
        long n = 0;      // token events
    };
    std::map<int, Accum> neutral_acc;
    std::map<int, std::map<GroupKey, Accum>> group_acc;
    std::map<int, Accum> all_acc;
    std::map<GroupKey, long> group_tokens;
    long demo_tokens = 0;

    auto fold = [&](Accum& a, const moe::RoutingRecord& r) {
        if (a.rate.empty()) {
            a.rate.assign(static_cast<std::size_t>(K), 0.0);
            a.prob_mass.assign(static_cast<std::size_t>(K), 0.0);
            a.selections.assign(static_cast<std::size_t>(K), 0.0);
        }
        for (int e = 0; e < K; ++e)
            a.prob_mass[static_cast<std::size_t>(e)] += r.probs[static_cast<std::size_t>(e)];
        for (int e : r.selected) a.selections[static_cast<std::size_t>(e)] += 1.0;
        if (mode == AggregationMode::SelectionFrequency) {
            for (int e : r.selected) a.rate[static_cast<std::size_t>(e)] += 1.0;
        } else {
            for (int e = 0; e < K; ++e)
                a.rate[static_cast<std::size_t>(e)] += r.probs[static_cast<std::size_t>(e)];
        }
        a.n += 1;
    };

    for (const auto& e : log.entries) {
        const int l = e.record.layer;
        fold(all_acc[l], e.record);
        if (e.condition == prompts::Condition::Neutral) {
            fold(neutral_acc[l], e.record);
        } else {
            const auto key = group_key(e.axis, e.group);
            fold(group_acc[l][key], e.record);
        }
    }

    // Every demographic group announced in the manifest must have routed
    // tokens, otherwise its rates would be undefined.
    for (const auto& m : log.manifest) {
        if (m.condition != prompts::Condition::Demographic) continue;
        const auto key = group_key(m.axis, m.group);
        bool found = false;
        for (const auto& [l, groups] : group_acc)
            if (groups.count(key)) found = true;
        if (!found)
            throw ProtocolError("aggregate: group with zero routed tokens: " + key);
    }

    // Group marginals are counted over prompt tokens, one layer's worth of
    // events per token; use the first MoE layer's counts.
    const int first_layer = group_acc.empty() ? -1 : group_acc.begin()->first;
    if (first_layer >= 0) {
        for (const auto& [key, acc] : group_acc.at(first_layer)) {
            group_tokens[key] = acc.n;
            demo_tokens += acc.n;
        }
    }
    for (const auto& [key, n] : group_tokens)
        stats.p_group[key] = static_cast<double>(n) / static_cast<double>(demo_tokens);

    for (auto& [l, acc] : neutral_acc) {
        Vec rate(static_cast<std::size_t>(K)), dist(static_cast<std::size_t>(K));
        for (int e = 0; e < K; ++e) {
            rate[static_cast<std::size_t>(e)] =
                acc.rate[static_cast<std::size_t>(e)] / static_cast<double>(acc.n);
            dist[static_cast<std::size_t>(e)] =
                acc.prob_mass[static_cast<std::size_t>(e)] / static_cast<double>(acc.n);
        }
        stats.baseline_rate[l] = std::move(rate);
        stats.mean_dist_neutral[l] = std::move(dist);
    }
    for (auto& [l, groups] : group_acc) {
        for (auto& [key, acc] : groups) {
            if (acc.n == 0) throw ProtocolError("aggregate: group with zero tokens: " + key);
            Vec rate(static_cast<std::size_t>(K)), dist(static_cast<std::size_t>(K));
            for (int e = 0; e < K; ++e) {
                rate[static_cast<std::size_t>(e)] =
                    acc.rate[static_cast<std::size_t>(e)] / static_cast<double>(acc.n);
                dist[static_cast<std::size_t>(e)] =
                    acc.prob_mass[static_cast<std::size_t>(e)] / static_cast<double>(acc.n);
            }
            stats.group_rate[l][key] = std::move(rate);
            stats.mean_dist_group[l][key] = std::move(dist);
        }
    }
    for (auto& [l, acc] : all_acc) {
        Vec f(static_cast<std::size_t>(K));
        double total = 0.0;
        for (double s : acc.selections) total += s;
        for (int e = 0; e < K; ++e)
            f[static_cast<std::size_t>(e)] = acc.selections[static_cast<std::size_t>(e)] / total;
        stats.routing_frequency[l] = std::move(f);
    }
    return stats;
}

namespace {

json record_to_json(const LogEntry& e) {
    json j;
    j["prompt_id"] = e.prompt_id;
    j["condition"] = e.condition == prompts::Condition::Neutral ? "neutral" : "demographic";
    j["axis"] = e.axis;
    j["group"] = e.group;
    j["layer"] = e.record.layer;
    j["pos"] = e.record.pos;
    j["logits"] = e.record.logits;
    j["probs"] = e.record.probs;
    j["selected"] = e.record.selected;
    j["weights"] = e.record.weights;
    if (e.record.raw_logits != e.record.logits) j["raw_logits"] = e.record.raw_logits;
    return j;
}

LogEntry record_from_json(const json& j) {
    LogEntry e;
    e.prompt_id = j.at("prompt_id").get<int>();
    const auto cond = j.at("condition").get<std::string>();
    if (cond == "neutral")
        e.condition = prompts::Condition::Neutral;
    else if (cond == "demographic")
        e.condition = prompts::Condition::Demographic;
    else
        throw ParseError("unknown condition label: " + cond);
    e.axis = j.at("axis").get<std::string>();
    e.group = j.at("group").get<std::string>();
    e.record.layer = j.at("layer").get<int>();
    e.record.pos = j.at("pos").get<int>();
    e.record.logits = j.at("logits").get<Vec>();
    e.record.probs = j.at("probs").get<Vec>();
    e.record.selected = j.at("selected").get<std::vector<int>>();
    e.record.weights = j.at("weights").get<Vec>();
    e.record.raw_logits =
        j.contains("raw_logits") ? j.at("raw_logits").get<Vec>() : e.record.logits;
    return e;
}

constexpr char kLogSchema[] = "farelab-routing-log-v1";
constexpr char kBinMagic[] = "FARELAB-RTLOG-v1";

}  // namespace

void serialize_log_jsonl(const RoutingLog& log, const std::string& path,
                         const std::string& config_hash) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write routing log: " + path);
    json manifest = json::array();
    for (const auto& m : log.manifest) {
        manifest.push_back(
            {{"prompt_id", m.prompt_id},
             {"text", m.text},
             {"condition", m.condition == prompts::Condition::Neutral ? "neutral"
                                                                      : "demographic"},
             {"axis", m.axis},
             {"group", m.group},
             {"token_count", m.token_count}});
    }
    json header = {{"schema", kLogSchema},
                   {"config_hash", config_hash},
                   {"n_experts", log.n_experts},
                   {"top_k", log.top_k},
                   {"manifest", manifest}};
    out << header.dump() << '\n';
    for (const auto& e : log.entries) out << record_to_json(e).dump() << '\n';
}

RoutingLog deserialize_log_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open routing log: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty routing log file");
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw ParseError(path + " line 1: " + e.what());
    }
    if (header.value("schema", "") != kLogSchema)
        throw ParseError(path + ": schema version mismatch (expected " +
                         std::string(kLogSchema) + ")");
    RoutingLog log;
    log.n_experts = header.at("n_experts").get<int>();
    log.top_k = header.at("top_k").get<int>();
    for (const auto& m : header.at("manifest")) {
        ManifestEntry e;
        e.prompt_id = m.at("prompt_id").get<int>();
        e.text = m.at("text").get<std::string>();
        e.condition = m.at("condition").get<std::string>() == "neutral"
                          ? prompts::Condition::Neutral
                          : prompts::Condition::Demographic;
        e.axis = m.at("axis").get<std::string>();
        e.group = m.at("group").get<std::string>();
        e.token_count = m.at("token_count").get<int>();
        log.manifest.push_back(std::move(e));
    }
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            log.entries.push_back(record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw ParseError(path + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    log.validate();
    return log;
}

namespace {

void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_str(std::ofstream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void write_vec(std::ofstream& out, const Vec& v) {
    write_u64(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}
std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw ParseError("binary routing log: truncated");
    return v;
}
std::string read_str(std::ifstream& in) {
    std::string s(read_u64(in), '\0');
    in.read(s.data(), static_cast<std::streamsize>(s.size()));
    if (!in) throw ParseError("binary routing log: truncated string");
    return s;
}
Vec read_vec(std::ifstream& in) {
    Vec v(read_u64(in));
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw ParseError("binary routing log: truncated vector");
    return v;
}

}  // namespace

void serialize_log_binary(const RoutingLog& log, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write routing log: " + path);
    out.write(kBinMagic, sizeof(kBinMagic) - 1);
    write_u64(out, static_cast<std::uint64_t>(log.n_experts));
    write_u64(out, static_cast<std::uint64_t>(log.top_k));
    write_u64(out, log.manifest.size());
    for (const auto& m : log.manifest) {
        write_u64(out, static_cast<std::uint64_t>(m.prompt_id));
        write_str(out, m.text);
        write_u64(out, m.condition == prompts::Condition::Neutral ? 0 : 1);
        write_str(out, m.axis);
        write_str(out, m.group);
        write_u64(out, static_cast<std::uint64_t>(m.token_count));
    }
    write_u64(out, log.entries.size());
    for (const auto& e : log.entries) {
        write_u64(out, static_cast<std::uint64_t>(e.prompt_id));
        write_u64(out, e.condition == prompts::Condition::Neutral ? 0 : 1);
        write_str(out, e.axis);
        write_str(out, e.group);
        write_u64(out, static_cast<std::uint64_t>(e.record.layer));
        write_u64(out, static_cast<std::uint64_t>(e.record.pos));
        write_vec(out, e.record.raw_logits);
        write_vec(out, e.record.logits);
        write_vec(out, e.record.probs);
        write_u64(out, e.record.selected.size());
        for (int s : e.record.selected) write_u64(out, static_cast<std::uint64_t>(s));
        write_vec(out, e.record.weights);
    }
}

RoutingLog deserialize_log_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open routing log: " + path);
    char magic[sizeof(kBinMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kBinMagic, sizeof(magic)) != 0)
        throw ParseError(path + ": bad magic (expected FARELAB-RTLOG-v1)");
    RoutingLog log;
    log.n_experts = static_cast<int>(read_u64(in));
    log.top_k = static_cast<int>(read_u64(in));
    const auto n_manifest = read_u64(in);
    for (std::uint64_t i = 0; i < n_manifest; ++i) {
        ManifestEntry m;
        m.prompt_id = static_cast<int>(read_u64(in));
        m.text = read_str(in);
        m.condition = read_u64(in) == 0 ? prompts::Condition::Neutral
                                        : prompts::Condition::Demographic;
        m.axis = read_str(in);
        m.group = read_str(in);
        m.token_count = static_cast<int>(read_u64(in));
        log.manifest.push_back(std::move(m));
    }
    const auto n_entries = read_u64(in);
    for (std::uint64_t i = 0; i < n_entries; ++i) {
        LogEntry e;
        e.prompt_id = static_cast<int>(read_u64(in));
        e.condition = read_u64(in) == 0 ? prompts::Condition::Neutral
                                        : prompts::Condition::Demographic;
        e.axis = read_str(in);
        e.group = read_str(in);
        e.record.layer = static_cast<int>(read_u64(in));
        e.record.pos = static_cast<int>(read_u64(in));
        e.record.raw_logits = read_vec(in);
        e.record.logits = read_vec(in);
        e.record.probs = read_vec(in);
        const auto n_sel = read_u64(in);
        for (std::uint64_t s = 0; s < n_sel; ++s)
            e.record.selected.push_back(static_cast<int>(read_u64(in)));
        e.record.weights = read_vec(in);
        log.entries.push_back(std::move(e));
    }
    log.validate();
    return log;
}

bool logs_equal(const RoutingLog& a, const RoutingLog& b, double tol) {
    if (a.n_experts != b.n_experts || a.top_k != b.top_k) return false;
    if (a.manifest.size() != b.manifest.size() || a.entries.size() != b.entries.size())
        return false;
    for (std::size_t i = 0; i < a.manifest.size(); ++i) {
        const auto& x = a.manifest[i];
        const auto& y = b.manifest[i];
        if (x.prompt_id != y.prompt_id || x.text != y.text || x.condition != y.condition ||
            x.axis != y.axis || x.group != y.group || x.token_count != y.token_count)
            return false;
    }
    auto vec_eq = [tol](const Vec& x, const Vec& y) {
        if (x.size() != y.size()) return false;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (std::abs(x[i] - y[i]) > tol) return false;
        return true;
    };
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        const auto& x = a.entries[i];
        const auto& y = b.entries[i];
        if (x.prompt_id != y.prompt_id || x.condition != y.condition || x.axis != y.axis ||
            x.group != y.group)
            return false;
        if (x.record.layer != y.record.layer || x.record.pos != y.record.pos) return false;
        if (x.record.selected != y.record.selected) return false;
        if (!vec_eq(x.record.raw_logits, y.record.raw_logits) ||
            !vec_eq(x.record.logits, y.record.logits) ||
            !vec_eq(x.record.probs, y.record.probs) ||
            !vec_eq(x.record.weights, y.record.weights))
            return false;
    }
    return true;
}

}  // namespace fare::capture
