#include <doctest.h>

#include <cmath>

#include "farelab/capture.hpp"
#include "farelab/intervention.hpp"
#include "farelab/profiling.hpp"
#include "test_util.hpp"

using namespace fare;
using namespace fare::testutil;
using namespace fare::intervene;

namespace {

// Capture the small model on the small suite and score it: a real profile
// over MoE layers 1 and 2.
struct SmallSetup {
    Vocab vocab = small_vocab();
    moe::Model model;
    prompts::PromptSet suite;
    SensitivityProfile profile;
    eval::EvalBundle bundle;

    SmallSetup() : model(moe::build_model(small_config(vocab))), suite(small_suite(vocab)) {
        const auto log = capture::capture_run(model, suite);
        const auto stats = capture::aggregate(log);
        profile = profile::fsp_score(profile::compute_metrics(stats),
                                     profile::MetricWeights{});
        for (const auto& p : suite.demographic) {
            if (p.group != "female") continue;
            const auto& base = suite.by_id(p.paired_neutral_id);
            auto anti = p.tokens;
            anti[1] = vocab.id("male");
            bundle.minimal_pairs.push_back({p.tokens, anti, "gender", p.text, ""});
            bundle.ppl_corpus.push_back(base.tokens);
        }
        std::vector<int> ctx = vocab.encode("the doctor is");
        bundle.mc_items.push_back(
            {ctx, {vocab.id("here")}, {{vocab.id("late")}, {vocab.id("again")}}, "t"});
    }
};

}  // namespace

TEST_CASE("arr_adjust: frozen penalty arithmetic and shared exemption") {
    Vec z = {1.0, 0.0};
    arr_adjust(z, Vec{1.0, 0.0}, 1.0);
    CHECK(z[0] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(z[1] == doctest::Approx(0.0).epsilon(1e-15));
    const auto probs = softmax(z);
    CHECK(probs[0] == doctest::Approx(0.5).epsilon(1e-15));

    Vec z2 = {1.0, 1.0};
    arr_adjust(z2, Vec{2.0, 2.0}, 0.5, /*shared_ids=*/{0});
    CHECK(z2[0] == doctest::Approx(1.0).epsilon(1e-15));  // exempt
    CHECK(z2[1] == doctest::Approx(0.0).epsilon(1e-15));

    Vec z3 = {1.0};
    CHECK_THROWS_AS(arr_adjust(z3, Vec{1.0, 2.0}, 1.0), InputError);
    CHECK_THROWS_AS(arr_adjust(z3, Vec{1.0}, -1.0), InputError);
}

namespace {

SensitivityProfile two_layer_profile() {
    SensitivityProfile p;
    p.phi[0] = {1.0, 3.0};
    p.phi[1] = {5.0, 2.0};
    return p;
}

}  // namespace

TEST_CASE("transform_profile: frozen behavior of every transform") {
    const auto base = two_layer_profile();

    const auto ident = transform_profile(base, ProfileTransform::identity());
    CHECK(ident.profile.phi == base.phi);

    // Flatten: global mean (1+3+5+2)/4 = 2.75 everywhere.
    const auto flat = transform_profile(base, ProfileTransform::flatten());
    for (const auto& [l, v] : flat.profile.phi)
        for (double x : v) CHECK(x == doctest::Approx(2.75).epsilon(1e-15));

    // Inverted: max 5 minus each value.
    const auto inv = transform_profile(base, ProfileTransform::inverted());
    CHECK(inv.profile.phi.at(0) == Vec{4.0, 2.0});
    CHECK(inv.profile.phi.at(1) == Vec{0.0, 3.0});

    // Power alpha=2, layer (1,3,5): minmax (0,0.5,1), squared, rescaled by 5.
    SensitivityProfile p3;
    p3.phi[0] = {1.0, 3.0, 5.0};
    const auto pow2 = transform_profile(p3, ProfileTransform::power(2.0));
    CHECK(pow2.profile.phi.at(0)[0] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(pow2.profile.phi.at(0)[1] == doctest::Approx(1.25).epsilon(1e-12));
    CHECK(pow2.profile.phi.at(0)[2] == doctest::Approx(5.0).epsilon(1e-12));

    // Constant layer collapses to zero under Power.
    SensitivityProfile flat_layer;
    flat_layer.phi[0] = {2.0, 2.0};
    CHECK(transform_profile(flat_layer, ProfileTransform::power(2.0)).profile.phi.at(0) ==
          Vec{0.0, 0.0});

    // Global top-2 keeps the 5 and the 3.
    const auto top2 = transform_profile(base, ProfileTransform::top_k(2));
    CHECK(top2.profile.phi.at(0) == Vec{0.0, 3.0});
    CHECK(top2.profile.phi.at(1) == Vec{5.0, 0.0});
    CHECK_FALSE(top2.truncated_to_all);

    // Per-layer top-1 keeps each layer's own max.
    const auto top1pl = transform_profile(base, ProfileTransform::top_k(1, true));
    CHECK(top1pl.profile.phi.at(0) == Vec{0.0, 3.0});
    CHECK(top1pl.profile.phi.at(1) == Vec{5.0, 0.0});

    // n >= total entries: keep everything, flag it.
    const auto topall = transform_profile(base, ProfileTransform::top_k(10));
    CHECK(topall.truncated_to_all);
    CHECK(topall.profile.phi == base.phi);

    // Random: range-respecting and deterministic in the seed.
    const auto r1 = transform_profile(base, ProfileTransform::random(3));
    const auto r2 = transform_profile(base, ProfileTransform::random(3));
    const auto r3 = transform_profile(base, ProfileTransform::random(4));
    CHECK(r1.profile.phi == r2.profile.phi);
    CHECK(r1.profile.phi != r3.profile.phi);
    for (const auto& [l, v] : r1.profile.phi)
        for (double x : v) {
            CHECK(x >= 0.0);
            CHECK(x <= 5.0);
        }

    SensitivityProfile bad;
    bad.phi[0] = {std::nan("")};
    CHECK_THROWS_AS(transform_profile(bad, ProfileTransform::identity()), InputError);
    CHECK_THROWS_AS(ProfileTransform::power(0.0), ConfigError);
    CHECK_THROWS_AS(ProfileTransform::top_k(0), ConfigError);
}

TEST_CASE("transform names are stable condition labels") {
    CHECK(ProfileTransform::identity().name() == "fsp");
    CHECK(ProfileTransform::flatten().name() == "flatten");
    CHECK(ProfileTransform::inverted().name() == "inverted");
    CHECK(ProfileTransform::power(0.5).name() == "power-0.5");
    CHECK(ProfileTransform::top_k(25).name() == "top-25");
    CHECK(ProfileTransform::random(1).name() == "random");
}

TEST_CASE("intervention and mask specs validate against the model") {
    const auto v = small_vocab();
    const auto cfg = small_config(v);  // MoE layers {1,2}, 8 experts, top-2

    InterventionSpec spec;
    spec.layers = {0};  // dense layer
    spec.lambda = 1.0;
    spec.profile.phi[0] = Vec(8, 0.0);
    CHECK_THROWS_AS(spec.validate(cfg), ConfigError);

    spec.layers = {1};
    spec.profile.phi.clear();
    CHECK_THROWS_AS(spec.validate(cfg), ConfigError);  // no entries for layer

    spec.profile.phi[1] = Vec(5, 0.0);
    CHECK_THROWS_AS(spec.validate(cfg), ConfigError);  // wrong length

    spec.profile.phi[1] = Vec(8, 0.0);
    spec.lambda = -0.5;
    CHECK_THROWS_AS(spec.validate(cfg), ConfigError);
    spec.lambda = 0.0;
    CHECK_NOTHROW(spec.validate(cfg));

    MaskSpec mask;
    for (int e = 0; e < 7; ++e) mask.masked.insert({1, e});
    CHECK_THROWS_AS(mask.validate(cfg), ConfigError);  // < top_k selectable
    mask.masked = {{0, 1}};
    CHECK_THROWS_AS(mask.validate(cfg), ConfigError);  // dense layer
    mask.masked = {{1, 99}};
    CHECK_THROWS_AS(mask.validate(cfg), ConfigError);
    mask.masked = {{1, 0}, {1, 1}, {2, 3}};
    CHECK_NOTHROW(mask.validate(cfg));
}

TEST_CASE("lambda = 0 intervention is an exact no-op") {
    SmallSetup s;
    InterventionSpec spec;
    spec.layers = {1, 2};
    spec.lambda = 0.0;
    spec.profile = s.profile;
    const RoutingIntervention hook(spec);
    for (const auto* p : s.suite.all()) {
        const auto base = s.model.forward(p->tokens);
        const auto with = s.model.forward(p->tokens, &hook);
        for (std::size_t t = 0; t < base.next_token_log_probs.size(); ++t)
            for (std::size_t i = 0; i < base.next_token_log_probs[t].size(); ++i)
                CHECK(std::abs(base.next_token_log_probs[t][i] -
                               with.next_token_log_probs[t][i]) < 1e-9);
        for (std::size_t r = 0; r < base.routing_records.size(); ++r)
            CHECK(base.routing_records[r].selected == with.routing_records[r].selected);
    }
}

TEST_CASE("heavy penalty on one expert drives its selection rate to zero") {
    SmallSetup s;
    const auto base_log = capture::capture_run(s.model, s.suite);
    const auto base_stats = capture::aggregate(base_log);

    // Pick the most-selected expert of layer 1.
    const auto& freq = base_stats.routing_frequency.at(1);
    int target = 0;
    for (int e = 1; e < 8; ++e)
        if (freq[static_cast<std::size_t>(e)] > freq[static_cast<std::size_t>(target)])
            target = e;
    CHECK(freq[static_cast<std::size_t>(target)] > 0.0);

    InterventionSpec spec;
    spec.layers = {1};
    spec.lambda = 1000.0;
    spec.profile.phi[1] = Vec(8, 0.0);
    spec.profile.phi[1][static_cast<std::size_t>(target)] = 1.0;
    const RoutingIntervention hook(spec);

    const auto stats = capture::aggregate(capture::capture_run(s.model, s.suite, &hook));
    CHECK(stats.routing_frequency.at(1)[static_cast<std::size_t>(target)] ==
          doctest::Approx(0.0).epsilon(1e-15));
    // Raw logits stay untouched in the record; adjusted logits differ.
    const auto log = capture::capture_run(s.model, s.suite, &hook);
    bool saw_divergence = false;
    for (const auto& e : log.entries)
        if (e.record.layer == 1 && e.record.raw_logits != e.record.logits)
            saw_divergence = true;
    CHECK(saw_divergence);
}

TEST_CASE("masked experts are never selected; other layers untouched") {
    SmallSetup s;
    MaskSpec spec;
    spec.masked = {{1, 0}, {1, 3}};
    const auto hook = mask_experts(s.model, spec);
    const auto log = capture::capture_run(s.model, s.suite, &hook);
    for (const auto& e : log.entries) {
        if (e.record.layer != 1) continue;
        for (int sel : e.record.selected) {
            CHECK(sel != 0);
            CHECK(sel != 3);
        }
        for (double w : e.record.weights) CHECK(std::isfinite(w));
    }
    const auto base = capture::capture_run(s.model, s.suite);
    const auto stats_masked = capture::aggregate(log);
    const auto stats_base = capture::aggregate(base);
    // Layer-1 routing moved; its mask does not leak into layer 2's hook, and
    // layer 2's shift (if any) comes only from upstream hidden-state changes.
    CHECK(stats_masked.routing_frequency.at(1)[0] == doctest::Approx(0.0));
    CHECK(stats_base.routing_frequency.at(1)[0] > 0.0);
}

TEST_CASE("ARR composes with masking in one hook") {
    SmallSetup s;
    InterventionSpec arr;
    arr.layers = {1, 2};
    arr.lambda = 1.0;
    arr.profile = s.profile;
    MaskSpec mask;
    mask.masked = {{2, 1}};
    const RoutingIntervention hook(arr, mask);
    const auto log = capture::capture_run(s.model, s.suite, &hook);
    for (const auto& e : log.entries)
        if (e.record.layer == 2)
            for (int sel : e.record.selected) CHECK(sel != 1);
}

TEST_CASE("aals_select: frozen quantile rule") {
    std::vector<LayerScore> scores;
    for (int l = 0; l < 4; ++l) {
        LayerScore s;
        s.layer = l;
        s.ratio = static_cast<double>(l + 1);  // (1,2,3,4)
        scores.push_back(s);
    }
    const auto sel = aals_select(scores);
    CHECK(sel.threshold == doctest::Approx(3.25).epsilon(1e-12));
    CHECK(sel.layers == std::set<int>{3});  // only R=4 > 3.25
    CHECK_FALSE(sel.fallback_used);
}

TEST_CASE("aals_select: all-ties falls back to the max-R layer, flagged") {
    std::vector<LayerScore> scores;
    for (int l = 0; l < 4; ++l) {
        LayerScore s;
        s.layer = l;
        s.ratio = 2.0;
        scores.push_back(s);
    }
    const auto sel = aals_select(scores);
    CHECK(sel.fallback_used);
    CHECK(sel.layers.size() == 1);
    CHECK_THROWS_AS(aals_select({}), InputError);
}

TEST_CASE("aals_probe: ratio field matches its definition") {
    SmallSetup s;
    const auto score = aals_probe(s.model, s.bundle, 1, s.profile);
    CHECK(score.layer == 1);
    CHECK(std::isfinite(score.ratio));
    CHECK(score.ratio ==
          doctest::Approx(score.delta_bias / (std::abs(score.delta_ppl) + kAalsEpsilon))
              .epsilon(1e-12));

    eval::EvalBundle empty;
    CHECK_THROWS_AS(aals_probe(s.model, empty, 1, s.profile), InputError);
}

TEST_CASE("pareto_select: frozen selection cases") {
    // All feasible: closest-to-0.5 preference wins.
    auto r = pareto_select({0.0, 1.0, 2.0}, {0.9, 0.6, 0.5}, {2.0, 2.2, 3.0}, 1.0);
    CHECK(r.lambda_star == doctest::Approx(2.0));
    CHECK(r.ppl_base == doctest::Approx(2.0));
    REQUIRE(r.grid.size() == 3);
    CHECK(r.grid[2].feasible);

    // Boundary: ratio 1.96 is feasible at beta = 1.0.
    r = pareto_select({0.0, 1.0}, {0.8, 0.5}, {2.0, 3.92}, 1.0);
    CHECK(r.lambda_star == doctest::Approx(1.0));
    CHECK(r.grid[1].feasible);

    // The same curve breaches the budget when the endpoint costs too much.
    r = pareto_select({0.0, 1.0}, {0.8, 0.5}, {2.0, 4.2}, 1.0);
    CHECK(r.lambda_star == doctest::Approx(0.0));
    CHECK_FALSE(r.grid[1].feasible);

    // Exact distance tie keeps the smaller lambda.
    r = pareto_select({0.0, 1.0}, {0.6, 0.4}, {2.0, 2.0}, 1.0);
    CHECK(r.lambda_star == doctest::Approx(0.0));

    CHECK_THROWS_AS(pareto_select({}, {}, {}, 1.0), ConfigError);
    CHECK_THROWS_AS(pareto_select({1.0, 0.0}, {0.5, 0.5}, {2.0, 2.0}, 1.0), ConfigError);
    CHECK_THROWS_AS(pareto_select({0.5, 1.0}, {0.5, 0.5}, {2.0, 2.0}, 1.0), ConfigError);
    CHECK_THROWS_AS(pareto_select({0.0, 1.0}, {0.5}, {2.0, 2.0}, 1.0), InputError);
}

TEST_CASE("default lambda grid is sorted, starts at zero, honors lambda_max") {
    const auto grid = default_lambda_grid();
    CHECK(grid.front() == 0.0);
    CHECK(std::is_sorted(grid.begin(), grid.end()));
    CHECK(grid.back() == doctest::Approx(8.0));
    CHECK(default_lambda_grid(3.0).back() == doctest::Approx(5.0));
}

TEST_CASE("pareto_search on the small model returns a coherent frontier") {
    SmallSetup s;
    const auto r = pareto_search(s.model, s.bundle, s.profile, {1, 2},
                                 {0.0, 0.5, 1.0}, 1.0);
    REQUIRE(r.grid.size() == 3);
    CHECK(r.grid[0].lambda == 0.0);
    CHECK(r.grid[0].feasible);  // lambda=0 is its own baseline
    CHECK(r.grid[0].ppl == doctest::Approx(r.ppl_base).epsilon(1e-12));
    bool star_on_grid = false;
    for (const auto& pt : r.grid)
        if (pt.lambda == r.lambda_star) star_on_grid = pt.feasible;
    CHECK(star_on_grid);
}

TEST_CASE("group masking experiment: row structure and zero-size no-op") {
    SmallSetup s;
    const auto rows = group_masking_experiment(s.model, s.profile, 2, 2, s.bundle);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].condition == "top-2");
    CHECK(rows[1].condition == "bottom-2");
    CHECK(rows[2].condition == "random-2");
    CHECK(rows[2].n_seeds == 2);
    for (const auto& r : rows) CHECK(r.ppl_ratio > 0.0);

    const auto none = group_masking_experiment(s.model, s.profile, 0, 0, s.bundle);
    for (const auto& r : none) {
        CHECK(r.delta_preference == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(r.ppl_ratio == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(group_masking_experiment(s.model, s.profile, 1000, 1, s.bundle),
                    ConfigError);
}

TEST_CASE("default ablation conditions: 13 uniquely named rows") {
    const auto conds = default_ablation_conditions();
    CHECK(conds.size() == 13);
    std::set<std::string> names;
    for (const auto& c : conds) names.insert(c.name());
    CHECK(names.size() == 13);
    CHECK(names.count("fsp") == 1);
    CHECK(names.count("flatten") == 1);
}

TEST_CASE("synthetic ablation: flatten is a routing no-op") {
    SmallSetup s;
    const auto rows = synthetic_ablation(
        s.model, s.profile,
        {ProfileTransform::flatten(), ProfileTransform::identity(),
         ProfileTransform::random(0)},
        s.bundle, 1.0, 2);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].condition == "flatten");
    // A constant penalty shifts every gate logit equally: nothing changes.
    CHECK(rows[0].delta_preference == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(rows[0].ppl_ratio == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(rows[1].condition == "fsp");
    CHECK(rows[2].condition == "random");
    CHECK(rows[2].n_seeds == 2);
}
