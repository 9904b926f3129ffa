#pragma once

#include <vector>

#include "farelab/model.hpp"
#include "farelab/prompts.hpp"

namespace fare::eval {

struct PreferenceResult {
    double preference = 0.5;  // (wins + 0.5*ties) / n_pairs
    Vec per_pair_diffs;       // LL_stereo - LL_anti
    int n_pairs = 0;
    int n_ties = 0;
};

struct UtilityResult {
    double accuracy = 0.0;
    std::vector<bool> per_item_correct;
};

struct EvalBundle {
    std::vector<prompts::MinimalPair> minimal_pairs;
    std::vector<prompts::MCItem> mc_items;
    std::vector<std::vector<int>> ppl_corpus;
    bool length_matched_only = false;
};

struct BudgetCheck {
    bool feasible = true;
    double ratio = 1.0;
};

// Full-sentence log-likelihood comparison; set `length_normalized` for the
// per-token variant.
PreferenceResult preference_score(const moe::Model& model,
                                  const std::vector<prompts::MinimalPair>& pairs,
                                  const moe::RouterHook* hook = nullptr,
                                  bool length_normalized = false);

// Correct iff the correct continuation has strictly the highest
// length-normalized log-likelihood; ties count as incorrect.
UtilityResult utility_accuracy(const moe::Model& model,
                               const std::vector<prompts::MCItem>& items,
                               const moe::RouterHook* hook = nullptr);

BudgetCheck ppl_budget_check(double ppl, double ppl_base, double beta);

}  // namespace fare::eval
