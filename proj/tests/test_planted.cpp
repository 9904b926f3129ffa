#include <doctest.h>

#include <cmath>

#include <json.hpp>

#include "farelab/evaluation.hpp"
#include "farelab/intervention.hpp"
#include "farelab/planted.hpp"
#include "test_util.hpp"

using namespace fare;
using namespace fare::testutil;
using namespace fare::plant;

TEST_CASE("plant spec validation") {
    const auto v = small_vocab();
    const auto cfg = small_config(v);

    PlantSpec spec;
    spec.biased_experts = {{0, 1, "gender", "female", 0.05}};  // dense layer
    CHECK_THROWS_AS(spec.validate(cfg), ConfigError);

    spec.biased_experts = {{1, 99, "gender", "female", 0.05}};
    CHECK_THROWS_AS(spec.validate(cfg), ConfigError);

    spec.biased_experts = {{1, 1, "gender", "female", 0.0}};
    CHECK_THROWS_AS(spec.validate(cfg), ConfigError);

    spec.biased_experts = {{1, 1, "gender", "female", 0.05}};
    spec.breadth = 0;
    CHECK_THROWS_AS(spec.validate(cfg), ConfigError);
    spec.breadth = 1;
    CHECK_NOTHROW(spec.validate(cfg));

    spec.entangled = true;  // knowledge set is empty but biased set is not
    CHECK_THROWS_AS(spec.validate(cfg), ConfigError);
    spec.knowledge_experts = {{1, 1, {{0, 1}}}};
    CHECK_NOTHROW(spec.validate(cfg));
}

TEST_CASE("empty plant spec returns the unmodified base model") {
    const auto v = small_vocab();
    const auto cfg = small_config(v);
    const auto planted = build_planted_model(cfg, PlantSpec{}, PlantContext{});
    CHECK(planted.model.weight_checksum() == moe::build_model(cfg).weight_checksum());
    CHECK(planted.truth.planted_biased.empty());
}

TEST_CASE("bias plant: calibrated activation-rate shift is reached") {
    const auto v = small_vocab();
    const auto cfg = small_config(v);
    const auto suite = small_suite(v);
    PlantSpec spec;
    spec.biased_experts = {{1, 2, "gender", "female", 0.05}};
    PlantContext ctx{&v, &suite, gender_descriptors()};

    const auto planted = build_planted_model(cfg, spec, ctx);
    CHECK(planted.truth.planted_biased.at(1) == std::vector<int>{2});
    CHECK(planted.truth.router_gain.at("1/2") > 0.0);
    CHECK(planted.truth.measured_shift.at("1/2") >= 0.05);

    // Re-measure through the independent capture/aggregate path.
    const auto stats =
        capture::aggregate(capture::capture_run(planted.model, suite));
    const double shift = stats.group_rate.at(1).at("gender/female")[2] -
                         stats.baseline_rate.at(1)[2];
    CHECK(shift >= 0.05);
    CHECK(shift == doctest::Approx(planted.truth.measured_shift.at("1/2")).epsilon(1e-12));

    // Rebuild is deterministic.
    const auto again = build_planted_model(cfg, spec, ctx);
    CHECK(again.model.weight_checksum() == planted.model.weight_checksum());
}

TEST_CASE("bias plant: breadth spreads one bias over consecutive experts") {
    const auto v = small_vocab();
    const auto cfg = small_config(v);
    const auto suite = small_suite(v);
    PlantSpec spec;
    spec.biased_experts = {{1, 6, "gender", "female", 0.05}};
    spec.breadth = 3;  // experts 6, 7, 0 via wrap-around
    PlantContext ctx{&v, &suite, gender_descriptors()};

    const auto planted = build_planted_model(cfg, spec, ctx);
    CHECK(planted.truth.planted_biased.at(1) == std::vector<int>{6, 7, 0});
    double total = 0.0;
    for (const char* key : {"1/6", "1/7", "1/0"}) {
        CHECK(planted.truth.router_gain.at(key) > 0.0);
        total += planted.truth.measured_shift.at(key);
    }
    CHECK(total >= 0.05);  // the delta requirement applies to the set
}

TEST_CASE("bias plant: unsatisfiable shift fails loudly instead of quietly") {
    const auto v = small_vocab();
    const auto cfg = small_config(v);
    const auto suite = small_suite(v);
    PlantSpec spec;
    spec.biased_experts = {{1, 2, "gender", "female", 5.0}};  // rate shift > 1 impossible
    PlantContext ctx{&v, &suite, gender_descriptors()};
    CHECK_THROWS_AS(build_planted_model(cfg, spec, ctx), ConfigError);
}

TEST_CASE("bias plant without a calibration suite is rejected") {
    const auto v = small_vocab();
    PlantSpec spec;
    spec.biased_experts = {{1, 2, "gender", "female", 0.05}};
    PlantContext ctx{&v, nullptr, gender_descriptors()};
    CHECK_THROWS_AS(build_planted_model(small_config(v), spec, ctx), ConfigError);
}

TEST_CASE("knowledge plant: facts are retrievable and expert-critical") {
    const auto v = small_vocab();
    const auto cfg = small_config(v);
    const auto suite = small_suite(v);
    PlantSpec spec;
    KnowledgeExpert k;
    k.layer = 2;
    k.expert = 5;
    for (int f = 0; f < 4; ++f)
        k.facts.push_back({v.id("q" + std::to_string(f)), v.id("a" + std::to_string(f))});
    spec.knowledge_experts = {k};
    PlantContext ctx{&v, &suite, gender_descriptors()};

    const auto planted = build_planted_model(cfg, spec, ctx);
    CHECK(planted.truth.planted_knowledge.at(2) == std::vector<int>{5});
    CHECK(planted.truth.fact_map.at("2/5").size() == 4);

    // Each question token greedily decodes to its planted answer.
    std::vector<prompts::MCItem> items;
    for (const auto& [q, a] : planted.truth.fact_map.at("2/5")) {
        const auto fw = planted.model.forward(std::vector<int>{q});
        const auto& dist = fw.next_token_log_probs.back();
        int best = 0;
        for (int t = 1; t < cfg.vocab_size; ++t)
            if (dist[static_cast<std::size_t>(t)] > dist[static_cast<std::size_t>(best)])
                best = t;
        CHECK(best == a);
        items.push_back({{q}, {a}, {{v.id("a20")}, {v.id("a21")}}, "fact"});
    }
    CHECK(eval::utility_accuracy(planted.model, items).accuracy ==
          doctest::Approx(1.0).epsilon(1e-15));

    // Masking the carrier expert guts retrieval: every answer loses at least
    // a nat of log-probability.
    intervene::MaskSpec mask;
    mask.masked = {{2, 5}};
    const auto hook = intervene::mask_experts(planted.model, mask);
    for (const auto& [q, a] : planted.truth.fact_map.at("2/5")) {
        const auto with = planted.model.forward(std::vector<int>{q});
        const auto without = planted.model.forward(std::vector<int>{q}, &hook);
        CHECK(with.next_token_log_probs.back()[static_cast<std::size_t>(a)] -
                  without.next_token_log_probs.back()[static_cast<std::size_t>(a)] >
              1.0);
    }
}

TEST_CASE("stereo push: penalizing the planted expert moves preference most") {
    const auto v = small_vocab();
    const auto cfg = small_config(v);
    const auto suite = small_suite(v);
    PlantSpec spec;
    spec.biased_experts = {{1, 2, "gender", "female", 0.05}};
    spec.stereo_push = StereoPush{v.id("kind"), 6.0};
    PlantContext ctx{&v, &suite, gender_descriptors()};
    const auto planted = build_planted_model(cfg, spec, ctx);

    // Minimal pairs: female vs male variant of each demographic prompt.
    std::vector<prompts::MinimalPair> pairs;
    for (const auto& p : suite.demographic) {
        if (p.group != "female") continue;
        auto anti = p.tokens;
        anti[1] = v.id("male");
        pairs.push_back({p.tokens, anti, "gender", "", ""});
    }
    REQUIRE(!pairs.empty());
    const double pref_base = eval::preference_score(planted.model, pairs).preference;

    auto pref_with_penalty = [&](int expert) {
        intervene::InterventionSpec arr;
        arr.layers = {1};
        arr.lambda = 5.0;
        arr.profile.phi[1] = Vec(8, 0.0);
        arr.profile.phi[1][static_cast<std::size_t>(expert)] = 1.0;
        const intervene::RoutingIntervention hook(arr);
        return eval::preference_score(planted.model, pairs, &hook).preference;
    };

    const double moved_planted = std::abs(pref_with_penalty(2) - pref_base);
    // Average movement from penalizing each non-planted expert instead.
    double moved_other = 0.0;
    for (int e : {0, 4, 7}) moved_other += std::abs(pref_with_penalty(e) - pref_base) / 3.0;
    CHECK(moved_planted > moved_other);
}

TEST_CASE("aggregate matches the independent counting oracle to 1e-12") {
    const auto v = small_vocab();
    const auto suite = small_suite(v);
    for (const auto mode : {capture::AggregationMode::SelectionFrequency,
                            capture::AggregationMode::ProbabilityMass}) {
        for (std::uint64_t seed : {1ull, 2ull}) {
            const auto m = moe::build_model(small_config(v, 8, 2, 0, seed));
            const auto ours = capture::aggregate(capture::capture_run(m, suite), mode);
            const auto oracle = plant::oracle_activation_rates(m, suite, mode);

            auto close = [](const Vec& a, const Vec& b) {
                REQUIRE(a.size() == b.size());
                for (std::size_t i = 0; i < a.size(); ++i)
                    CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
            };
            for (const auto& [l, rate] : ours.baseline_rate)
                close(rate, oracle.baseline_rate.at(l));
            for (const auto& [l, groups] : ours.group_rate)
                for (const auto& [key, rate] : groups)
                    close(rate, oracle.group_rate.at(l).at(key));
            for (const auto& [l, d] : ours.mean_dist_neutral)
                close(d, oracle.mean_dist_neutral.at(l));
            for (const auto& [l, f] : ours.routing_frequency)
                close(f, oracle.routing_frequency.at(l));
            for (const auto& [key, p] : ours.p_group)
                CHECK(p == doctest::Approx(oracle.p_group.at(key)).epsilon(1e-12));
        }
    }
}

TEST_CASE("ground truth serializes to well-formed JSON") {
    GroundTruth truth;
    truth.planted_biased[1] = {2, 3};
    truth.measured_shift["1/2"] = 0.07;
    truth.fact_map["2/5"] = {{10, 11}};
    const auto parsed = nlohmann::json::parse(truth.to_json());
    CHECK(parsed.at("planted_biased").at("1").size() == 2);
    CHECK(parsed.at("measured_shift").at("1/2").get<double>() ==
          doctest::Approx(0.07));
    CHECK(parsed.at("fact_map").at("2/5")[0].at("answer").get<int>() == 11);
}
