#include "farelab/evaluation.hpp"

#include <limits>

namespace fare::eval {

PreferenceResult preference_score(const moe::Model& model,
                                  const std::vector<prompts::MinimalPair>& pairs,
                                  const moe::RouterHook* hook, bool length_normalized) {
    if (pairs.empty()) throw InputError("preference_score: no pairs");
    PreferenceResult result;
    result.n_pairs = static_cast<int>(pairs.size());
    double wins = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        double ll_s, ll_a;
        try {
            ll_s = model.sequence_log_likelihood(pairs[i].stereo, hook);
            ll_a = model.sequence_log_likelihood(pairs[i].anti, hook);
        } catch (const FareError& e) {
            throw InputError("preference_score: pair " + std::to_string(i) + ": " +
                             e.what());
        }
        if (length_normalized) {
            ll_s /= static_cast<double>(pairs[i].stereo.size() - 1);
            ll_a /= static_cast<double>(pairs[i].anti.size() - 1);
        }
        result.per_pair_diffs.push_back(ll_s - ll_a);
        if (ll_s > ll_a) {
            wins += 1.0;
        } else if (ll_s == ll_a) {
            wins += 0.5;
            ++result.n_ties;
        }
    }
    result.preference = wins / static_cast<double>(result.n_pairs);
    return result;
}

namespace {

double continuation_ll(const moe::Model& model, const std::vector<int>& context,
                       const std::vector<int>& continuation, const moe::RouterHook* hook) {
    std::vector<int> seq = context;
    seq.insert(seq.end(), continuation.begin(), continuation.end());
    const auto out = model.forward(seq, hook);
    double ll = 0.0;
    for (std::size_t t = context.size(); t < seq.size(); ++t)
        ll += out.next_token_log_probs[t - 1][static_cast<std::size_t>(seq[t])];
    return ll / static_cast<double>(continuation.size());
}

}  // namespace

UtilityResult utility_accuracy(const moe::Model& model,
                               const std::vector<prompts::MCItem>& items,
                               const moe::RouterHook* hook) {
    if (items.empty()) throw InputError("utility_accuracy: no items");
    UtilityResult result;
    int n_correct = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& item = items[i];
        double best_distractor = -std::numeric_limits<double>::infinity();
        double correct_ll;
        try {
            correct_ll = continuation_ll(model, item.context, item.correct, hook);
            for (const auto& d : item.distractors)
                best_distractor =
                    std::max(best_distractor, continuation_ll(model, item.context, d, hook));
        } catch (const FareError& e) {
            throw InputError("utility_accuracy: item " + std::to_string(i) + ": " +
                             e.what());
        }
        const bool correct = correct_ll > best_distractor;  // ties are incorrect
        result.per_item_correct.push_back(correct);
        if (correct) ++n_correct;
    }
    result.accuracy = static_cast<double>(n_correct) / static_cast<double>(items.size());
    return result;
}

BudgetCheck ppl_budget_check(double ppl, double ppl_base, double beta) {
    if (ppl < 1.0 || ppl_base < 1.0)
        throw InputError("ppl_budget_check: perplexities must be >= 1");
    if (beta < 0.0) throw InputError("ppl_budget_check: beta must be >= 0");
    BudgetCheck check;
    check.ratio = ppl / ppl_base;
    check.feasible = ppl <= (1.0 + beta) * ppl_base;
    return check;
}

}  // namespace fare::eval
