#include <doctest.h>

#include "farelab/evaluation.hpp"
#include "test_util.hpp"

using namespace fare;
using namespace fare::testutil;

namespace {

// Zeroed model plus one live coordinate: every token embeds to e1 (scaled),
// and the head's first column carries a fixed logit vector that favors token
// 0 over token 1 at every position.
moe::Model favoring_model(const moe::ModelConfig& cfg) {
    auto m = zeroed_model(cfg);
    for (int tok = 0; tok < cfg.vocab_size; ++tok)
        m.embedding[static_cast<std::size_t>(tok) * cfg.d_model] = 1.0;
    m.output_head[0] = 2.0;                                       // token 0
    m.output_head[static_cast<std::size_t>(cfg.d_model)] = -1.0;  // token 1
    return m;
}

}  // namespace

TEST_CASE("preference_score: uniform model scores every pair as a tie") {
    const auto v = small_vocab();
    const auto m = zeroed_model(small_config(v));
    std::vector<prompts::MinimalPair> pairs = {
        {v.encode("the female doctor is kind"), v.encode("the male doctor is kind"),
         "gender", "", ""},
        {v.encode("the male nurse is calm"), v.encode("the female nurse is calm"),
         "gender", "", ""},
    };
    const auto r = eval::preference_score(m, pairs);
    CHECK(r.preference == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r.n_ties == 2);
    CHECK(r.n_pairs == 2);
    for (double d : r.per_pair_diffs) CHECK(d == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("preference_score: known winner and symmetric reversal") {
    const auto v = small_vocab();
    const auto m = favoring_model(small_config(v));
    // Token 0 ("the") outscores token 1 ("a") as a continuation everywhere.
    std::vector<prompts::MinimalPair> pairs = {
        {{2, 0}, {2, 1}, "gender", "", ""},
        {{2, 1}, {2, 0}, "gender", "", ""},
    };
    auto r = eval::preference_score(m, pairs);
    CHECK(r.per_pair_diffs[0] > 0.0);
    CHECK(r.per_pair_diffs[1] == doctest::Approx(-r.per_pair_diffs[0]).epsilon(1e-12));
    CHECK(r.preference == doctest::Approx(0.5).epsilon(1e-15));  // one win, one loss
    CHECK(r.n_ties == 0);

    pairs.pop_back();
    r = eval::preference_score(m, pairs);
    CHECK(r.preference == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("preference_score: diffs match direct sequence log-likelihoods") {
    const auto v = small_vocab();
    const auto m = moe::build_model(small_config(v));
    const std::vector<prompts::MinimalPair> pairs = {
        {v.encode("the female doctor is kind"), v.encode("the doctor is kind"),
         "gender", "", ""},
    };
    const auto r = eval::preference_score(m, pairs);
    const double expect = m.sequence_log_likelihood(pairs[0].stereo) -
                          m.sequence_log_likelihood(pairs[0].anti);
    CHECK(r.per_pair_diffs[0] == doctest::Approx(expect).epsilon(1e-12));

    const auto rn = eval::preference_score(m, pairs, nullptr, /*length_normalized=*/true);
    const double expect_norm =
        m.sequence_log_likelihood(pairs[0].stereo) /
            static_cast<double>(pairs[0].stereo.size() - 1) -
        m.sequence_log_likelihood(pairs[0].anti) /
            static_cast<double>(pairs[0].anti.size() - 1);
    CHECK(rn.per_pair_diffs[0] == doctest::Approx(expect_norm).epsilon(1e-12));

    CHECK_THROWS_AS(eval::preference_score(m, {}), InputError);
}

TEST_CASE("utility_accuracy: known correct/incorrect items; ties lose") {
    const auto v = small_vocab();
    const auto cfg = small_config(v);
    const auto m = favoring_model(cfg);
    std::vector<prompts::MCItem> items = {
        {{2}, {0}, {{1}, {3}}, "good"},   // correct: token 0 beats 1 and 3
        {{2}, {1}, {{0}}, "bad"},         // correct continuation is dominated
    };
    const auto r = eval::utility_accuracy(m, items);
    REQUIRE(r.per_item_correct.size() == 2);
    CHECK(r.per_item_correct[0]);
    CHECK_FALSE(r.per_item_correct[1]);
    CHECK(r.accuracy == doctest::Approx(0.5).epsilon(1e-15));

    // Uniform model: everything ties, and ties are scored incorrect.
    const auto uniform = eval::utility_accuracy(zeroed_model(cfg), items);
    CHECK(uniform.accuracy == doctest::Approx(0.0).epsilon(1e-15));

    CHECK_THROWS_AS(eval::utility_accuracy(m, {}), InputError);
}

TEST_CASE("utility_accuracy: continuation scoring is length-normalized") {
    const auto v = small_vocab();
    const auto m = favoring_model(small_config(v));
    // Multi-token correct answer {0,0} still beats one-token distractor {1}
    // because comparisons are per-token averages.
    std::vector<prompts::MCItem> items = {{{2}, {0, 0}, {{1}}, "multi"}};
    CHECK(eval::utility_accuracy(m, items).accuracy == doctest::Approx(1.0));
}

TEST_CASE("perplexity budget: boundary is inclusive") {
    auto c = eval::ppl_budget_check(3.92, 2.0, 1.0);
    CHECK(c.feasible);
    CHECK(c.ratio == doctest::Approx(1.96).epsilon(1e-12));

    CHECK(eval::ppl_budget_check(4.0, 2.0, 1.0).feasible);          // exactly (1+beta)
    CHECK_FALSE(eval::ppl_budget_check(4.0001, 2.0, 1.0).feasible);
    CHECK(eval::ppl_budget_check(2.0, 2.0, 0.0).feasible);

    CHECK_THROWS_AS(eval::ppl_budget_check(0.5, 2.0, 1.0), InputError);
    CHECK_THROWS_AS(eval::ppl_budget_check(2.0, 2.0, -0.1), InputError);
}
