#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "farelab/common.hpp"
#include "farelab/vocab.hpp"

namespace fare::prompts {

inline constexpr std::array<const char*, 9> kAxes = {
    "gender",     "race",       "religion",
    "nationality", "age",        "sexuality",
    "disability", "socioeconomic", "political"};

bool is_known_axis(const std::string& axis);

struct Descriptor {
    std::string axis;
    std::string group;
    std::string surface_text;  // one or more whitespace-separated words
};

// A neutral template with a profession slot and a descriptor insertion point.
// `words` contains the literal word "{prof}" at the profession slot;
// `desc_slot` is the word index where a descriptor is inserted to form the
// demographic variant.
struct Template {
    std::vector<std::string> words;
    int desc_slot = 0;
};

enum class Condition { Neutral, Demographic };

struct Prompt {
    int id = 0;
    Condition condition = Condition::Neutral;
    std::string axis;   // empty for neutral
    std::string group;  // empty for neutral
    std::string text;
    std::vector<int> tokens;
    int paired_neutral_id = -1;  // -1 for neutral prompts
    int template_index = -1;
    int profession_index = -1;
};

struct PromptSet {
    std::vector<Prompt> neutral;
    std::vector<Prompt> demographic;

    std::vector<const Prompt*> all() const;
    const Prompt& by_id(int id) const;
};

struct MinimalPair {
    std::vector<int> stereo;
    std::vector<int> anti;
    std::string axis;
    std::string stereo_text;
    std::string anti_text;
};

struct MCItem {
    std::vector<int> context;
    std::vector<int> correct;
    std::vector<std::vector<int>> distractors;
    std::string tag;  // provenance label, e.g. planted fact id
};

PromptSet generate_suite(const std::vector<Template>& templates,
                         const std::vector<std::string>& professions,
                         const std::vector<Descriptor>& descriptors,
                         const Vocab& vocab);

// JSONL with fields stereo, anti, axis.
std::vector<MinimalPair> ingest_minimal_pairs(const std::string& path, const Vocab& vocab);
void write_minimal_pairs(const std::string& path, const std::vector<MinimalPair>& pairs,
                         const std::string& config_hash);

// JSONL with fields context, correct, distractors[].
std::vector<MCItem> ingest_mc_items(const std::string& path, const Vocab& vocab);
void write_mc_items(const std::string& path, const std::vector<MCItem>& items,
                    const Vocab& vocab, const std::string& config_hash);

std::vector<MinimalPair> length_matched_subset(const std::vector<MinimalPair>& pairs);

}  // namespace fare::prompts
