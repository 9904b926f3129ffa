#include "farelab/prompts.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fare::prompts {

using nlohmann::json;

bool is_known_axis(const std::string& axis) {
    for (const char* a : kAxes)
        if (axis == a) return true;
    return false;
}

std::vector<const Prompt*> PromptSet::all() const {
    std::vector<const Prompt*> out;
    out.reserve(neutral.size() + demographic.size());
    for (const auto& p : neutral) out.push_back(&p);
    for (const auto& p : demographic) out.push_back(&p);
    return out;
}

const Prompt& PromptSet::by_id(int id) const {
    for (const auto& p : neutral)
        if (p.id == id) return p;
    for (const auto& p : demographic)
        if (p.id == id) return p;
    throw InputError("prompt id not found: " + std::to_string(id));
}

namespace {

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

std::vector<std::string> instantiate(const Template& t, const std::string& profession) {
    std::vector<std::string> words;
    for (const auto& w : t.words)
        if (w == "{prof}")
            words.push_back(profession);
        else
            words.push_back(w);
    return words;
}

}  // namespace

PromptSet generate_suite(const std::vector<Template>& templates,
                         const std::vector<std::string>& professions,
                         const std::vector<Descriptor>& descriptors,
                         const Vocab& vocab) {
    if (templates.empty() || professions.empty() || descriptors.empty())
        throw InputError("generate_suite: empty templates, professions, or descriptors");
    for (const auto& d : descriptors) {
        if (!is_known_axis(d.axis)) throw InputError("unknown axis: " + d.axis);
        if (d.surface_text.empty()) throw InputError("descriptor with empty surface text");
        for (const auto& w : split_words(d.surface_text))
            if (!vocab.contains(w))
                throw InputError("descriptor word not in vocab: " + w);
    }
    for (const auto& p : professions)
        if (!vocab.contains(p)) throw InputError("profession not in vocab: " + p);

    PromptSet set;
    int next_id = 0;
    for (std::size_t ti = 0; ti < templates.size(); ++ti) {
        const Template& t = templates[ti];
        if (t.desc_slot < 0 || t.desc_slot > static_cast<int>(t.words.size()))
            throw InputError("template descriptor slot out of range");
        for (std::size_t pi = 0; pi < professions.size(); ++pi) {
            auto base_words = instantiate(t, professions[pi]);
            Prompt neutral;
            neutral.id = next_id++;
            neutral.condition = Condition::Neutral;
            neutral.text = join_words(base_words);
            neutral.tokens = vocab.encode(neutral.text);
            neutral.template_index = static_cast<int>(ti);
            neutral.profession_index = static_cast<int>(pi);
            set.neutral.push_back(neutral);

            for (const auto& d : descriptors) {
                auto words = base_words;
                const auto desc_words = split_words(d.surface_text);
                words.insert(words.begin() + t.desc_slot, desc_words.begin(),
                             desc_words.end());
                Prompt demo;
                demo.id = next_id++;
                demo.condition = Condition::Demographic;
                demo.axis = d.axis;
                demo.group = d.group;
                demo.text = join_words(words);
                demo.tokens = vocab.encode(demo.text);
                demo.paired_neutral_id = neutral.id;
                demo.template_index = static_cast<int>(ti);
                demo.profession_index = static_cast<int>(pi);
                set.demographic.push_back(demo);
            }
        }
    }
    return set;
}

std::vector<MinimalPair> ingest_minimal_pairs(const std::string& path, const Vocab& vocab) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open minimal-pair file: " + path);
    std::vector<MinimalPair> out;
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("minimal pairs row " + std::to_string(row) + ": " + e.what());
        }
        if (j.contains("schema")) continue;  // header line
        if (!j.contains("stereo") || !j.contains("anti"))
            throw ParseError("minimal pairs row " + std::to_string(row) +
                             ": missing stereo/anti field");
        MinimalPair p;
        p.stereo_text = j.at("stereo").get<std::string>();
        p.anti_text = j.at("anti").get<std::string>();
        p.axis = j.value("axis", "");
        if (p.stereo_text.empty() || p.anti_text.empty())
            throw ParseError("minimal pairs row " + std::to_string(row) +
                             ": empty sentence");
        p.stereo = vocab.encode(p.stereo_text);
        p.anti = vocab.encode(p.anti_text);
        out.push_back(std::move(p));
    }
    return out;
}

void write_minimal_pairs(const std::string& path, const std::vector<MinimalPair>& pairs,
                         const std::string& config_hash) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write minimal-pair file: " + path);
    json header = {{"schema", "farelab-minimal-pairs-v1"}, {"config_hash", config_hash}};
    out << header.dump() << '\n';
    for (const auto& p : pairs) {
        json j = {{"stereo", p.stereo_text}, {"anti", p.anti_text}, {"axis", p.axis}};
        out << j.dump() << '\n';
    }
}

std::vector<MCItem> ingest_mc_items(const std::string& path, const Vocab& vocab) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open MC item file: " + path);
    std::vector<MCItem> out;
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("MC items row " + std::to_string(row) + ": " + e.what());
        }
        if (j.contains("schema")) continue;
        MCItem item;
        try {
            item.context = vocab.encode(j.at("context").get<std::string>());
            item.correct = vocab.encode(j.at("correct").get<std::string>());
            for (const auto& d : j.at("distractors"))
                item.distractors.push_back(vocab.encode(d.get<std::string>()));
            item.tag = j.value("tag", "");
        } catch (const json::exception& e) {
            throw ParseError("MC items row " + std::to_string(row) + ": " + e.what());
        }
        if (item.distractors.empty())
            throw ParseError("MC items row " + std::to_string(row) + ": no distractors");
        for (const auto& d : item.distractors)
            if (d == item.correct)
                throw ParseError("MC items row " + std::to_string(row) +
                                 ": distractor equals correct continuation");
        out.push_back(std::move(item));
    }
    return out;
}

void write_mc_items(const std::string& path, const std::vector<MCItem>& items,
                    const Vocab& vocab, const std::string& config_hash) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write MC item file: " + path);
    json header = {{"schema", "farelab-mc-items-v1"}, {"config_hash", config_hash}};
    out << header.dump() << '\n';
    for (const auto& item : items) {
        json j;
        j["context"] = vocab.decode(item.context);
        j["correct"] = vocab.decode(item.correct);
        json distractors = json::array();
        for (const auto& d : item.distractors) distractors.push_back(vocab.decode(d));
        j["distractors"] = distractors;
        j["tag"] = item.tag;
        out << j.dump() << '\n';
    }
}

std::vector<MinimalPair> length_matched_subset(const std::vector<MinimalPair>& pairs) {
    std::vector<MinimalPair> out;
    for (const auto& p : pairs)
        if (p.stereo.size() == p.anti.size()) out.push_back(p);
    return out;
}

}  // namespace fare::prompts
