#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "farelab/intervention.hpp"
#include "farelab/model.hpp"
#include "test_util.hpp"

using namespace fare;
using namespace fare::testutil;

TEST_CASE("build_model is deterministic in (config, seed)") {
    const auto v = small_vocab();
    const auto cfg = small_config(v);
    const auto m1 = moe::build_model(cfg);
    const auto m2 = moe::build_model(cfg);
    CHECK(m1.weight_checksum() == m2.weight_checksum());

    auto cfg2 = cfg;
    cfg2.seed = 43;
    CHECK(moe::build_model(cfg2).weight_checksum() != m1.weight_checksum());
}

TEST_CASE("invalid configs are rejected") {
    const auto v = small_vocab();
    auto cfg = small_config(v);
    cfg.top_k = cfg.n_experts + 1;
    CHECK_THROWS_AS(moe::build_model(cfg), ConfigError);

    cfg = small_config(v);
    cfg.moe_layers = {99};
    CHECK_THROWS_AS(moe::build_model(cfg), ConfigError);

    cfg = small_config(v);
    cfg.n_shared = -1;
    CHECK_THROWS_AS(moe::build_model(cfg), ConfigError);
}

TEST_CASE("mixtral-like preset matches the published shape") {
    const auto cfg = moe::preset_config("mixtral-like", 100, 1);
    CHECK(cfg.n_experts == 8);
    CHECK(cfg.top_k == 2);
    CHECK(cfg.n_shared == 0);
}

TEST_CASE("forward output distributions are normalized, one record per slot") {
    const auto v = small_vocab();
    const auto m = moe::build_model(small_config(v));
    const std::vector<int> toks = v.encode("the doctor is here today");
    const auto out = m.forward(toks);
    CHECK(out.routing_records.size() == toks.size() * m.config.moe_layers.size());
    for (const auto& lp : out.next_token_log_probs) {
        double sum = 0.0;
        for (double x : lp) sum += std::exp(x);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    for (const auto& rec : out.routing_records) {
        double psum = 0.0;
        for (double p : rec.probs) psum += p;
        CHECK(psum == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(rec.selected.size() == static_cast<std::size_t>(m.config.top_k));
        double wsum = 0.0;
        for (double w : rec.weights) wsum += w;
        CHECK(wsum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("unknown token ids are input errors") {
    const auto v = small_vocab();
    const auto m = moe::build_model(small_config(v));
    const std::vector<int> bad = {0, v.size() + 5};
    CHECK_THROWS_AS(m.forward(bad), InputError);
    CHECK_THROWS_AS(m.forward(std::vector<int>{}), InputError);
}

TEST_CASE("top_k == n_experts selects every expert") {
    const auto v = small_vocab();
    const auto m = moe::build_model(small_config(v, 4, 4));
    const auto out = m.forward(v.encode("the nurse was at work"));
    for (const auto& rec : out.routing_records) {
        REQUIRE(rec.selected.size() == 4);
        for (int e = 0; e < 4; ++e) CHECK(rec.selected[static_cast<std::size_t>(e)] == e);
    }
}

TEST_CASE("gate logit shift invariance") {
    // Adding a constant to all logits of a layer must not move the output.
    struct ShiftHook : moe::RouterHook {
        void adjust_logits(int, std::span<double> z) const override {
            for (double& x : z) x += 3.25;
        }
    } hook;
    const auto v = small_vocab();
    const auto m = moe::build_model(small_config(v));
    const auto toks = v.encode("a teacher was seen early");
    const auto base = m.forward(toks);
    const auto shifted = m.forward(toks, &hook);
    for (std::size_t t = 0; t < base.next_token_log_probs.size(); ++t)
        for (std::size_t i = 0; i < base.next_token_log_probs[t].size(); ++i)
            CHECK(base.next_token_log_probs[t][i] ==
                  doctest::Approx(shifted.next_token_log_probs[t][i]).epsilon(1e-9));
    for (std::size_t r = 0; r < base.routing_records.size(); ++r) {
        CHECK(base.routing_records[r].selected == shifted.routing_records[r].selected);
        for (std::size_t i = 0; i < base.routing_records[r].probs.size(); ++i)
            CHECK(base.routing_records[r].probs[i] ==
                  doctest::Approx(shifted.routing_records[r].probs[i]).epsilon(1e-9));
    }
}

TEST_CASE("sequence log-likelihood matches per-prefix re-scoring oracle") {
    const auto v = small_vocab();
    const auto m = moe::build_model(small_config(v));
    const auto toks = v.encode("the farmer was at work today");
    const double ll = m.sequence_log_likelihood(toks);
    CHECK(ll <= 0.0);

    double oracle = 0.0;
    for (std::size_t n = 2; n <= toks.size(); ++n) {
        const std::vector<int> prefix(toks.begin(), toks.begin() + static_cast<long>(n));
        const auto out = m.forward(prefix);
        oracle += out.next_token_log_probs[n - 2][static_cast<std::size_t>(toks[n - 1])];
    }
    CHECK(ll == doctest::Approx(oracle).epsilon(1e-9));

    CHECK(m.sequence_log_likelihood(toks) == ll);
    CHECK_THROWS_AS(m.sequence_log_likelihood(std::vector<int>{1}), InputError);
}

TEST_CASE("uniform-output model: LL and PPL take their analytic values") {
    const auto v = small_vocab();
    auto cfg = small_config(v);
    auto m = zeroed_model(cfg);
    const auto toks = v.encode("the doctor is here today");
    const double ll = m.sequence_log_likelihood(toks);
    const double expected = -(static_cast<double>(toks.size()) - 1.0) *
                            std::log(static_cast<double>(cfg.vocab_size));
    CHECK(ll == doctest::Approx(expected).epsilon(1e-9));
    CHECK(m.perplexity({toks}) ==
          doctest::Approx(static_cast<double>(cfg.vocab_size)).epsilon(1e-9));
}

TEST_CASE("perplexity on a hand-built nonuniform model") {
    // All transforms zero except the embedding's first coordinate and the
    // head's first column. The hidden state at position t is emb + pe(t),
    // so logits_t = base * (1 + pe(t)[0]) with pe(t)[0] known in closed form.
    const auto v = small_vocab();
    auto cfg = small_config(v);
    auto m = zeroed_model(cfg);
    Vec base(static_cast<std::size_t>(cfg.vocab_size), 0.0);
    base[0] = 1.0;
    base[1] = -0.5;
    for (int tok = 0; tok < cfg.vocab_size; ++tok)
        m.embedding[static_cast<std::size_t>(tok) * cfg.d_model] = 1.0;
    for (int tok = 0; tok < cfg.vocab_size; ++tok)
        m.output_head[static_cast<std::size_t>(tok) * cfg.d_model] =
            base[static_cast<std::size_t>(tok)];

    const auto pe0 = [&](int pos) {
        return 0.3 / std::sqrt(static_cast<double>(cfg.d_model) / 2.0) *
               std::sin(static_cast<double>(pos));
    };
    const std::vector<int> seq = {3, 0, 1};  // predicts tokens 0 then 1
    double nll = 0.0;
    for (int t = 0; t < 2; ++t) {
        Vec logits = base;
        for (double& x : logits) x *= 1.0 + pe0(t);
        nll -= log_softmax(logits)[static_cast<std::size_t>(seq[static_cast<std::size_t>(t) + 1])];
    }
    const double expected_ppl = std::exp(nll / 2.0);
    CHECK(m.perplexity({seq}) == doctest::Approx(expected_ppl).epsilon(1e-9));
    CHECK_THROWS_AS(m.perplexity({}), InputError);
}

TEST_CASE("greedy decode is deterministic and matches one-step argmax") {
    const auto v = small_vocab();
    const auto m = moe::build_model(small_config(v));
    const auto prompt = v.encode("the nurse was");
    CHECK(m.greedy_decode(prompt, 0) == prompt);
    const auto a = m.greedy_decode(prompt, 4);
    const auto b = m.greedy_decode(prompt, 4);
    CHECK(a == b);

    const auto out = m.forward(prompt);
    const auto& dist = out.next_token_log_probs.back();
    int best = 0;
    for (int t = 1; t < v.size(); ++t)
        if (dist[static_cast<std::size_t>(t)] > dist[static_cast<std::size_t>(best)]) best = t;
    CHECK(m.greedy_decode(prompt, 1).back() == best);
}

TEST_CASE("constant routing penalty is a no-op (with shared experts present)") {
    const auto v = small_vocab();
    const auto m = moe::build_model(small_config(v, 8, 2, 2));
    const auto toks = v.encode("the pilot is here today");

    profile::SensitivityProfile prof;
    for (int l : m.config.moe_layers)
        prof.phi[l] = Vec(static_cast<std::size_t>(m.config.n_experts), 1.0);
    intervene::InterventionSpec spec;
    spec.layers = m.config.moe_layers;
    spec.lambda = 50.0;
    spec.profile = prof;
    const intervene::RoutingIntervention hook(spec);

    // Constant profile => softmax shift invariance => identical outputs.
    const auto base = m.forward(toks);
    const auto pen = m.forward(toks, &hook);
    for (std::size_t t = 0; t < base.next_token_log_probs.size(); ++t)
        for (std::size_t i = 0; i < base.next_token_log_probs[t].size(); ++i)
            CHECK(base.next_token_log_probs[t][i] ==
                  doctest::Approx(pen.next_token_log_probs[t][i]).epsilon(1e-9));
}

TEST_CASE("model save/load round-trips bit-exactly") {
    const auto v = small_vocab();
    const auto m = moe::build_model(small_config(v));
    const auto path = std::filesystem::temp_directory_path() / "farelab_model_test.bin";
    m.save(path.string());
    const auto loaded = moe::Model::load(path.string());
    CHECK(loaded.weight_checksum() == m.weight_checksum());
    CHECK(loaded.config.n_experts == m.config.n_experts);

    // Corrupt magic.
    {
        std::FILE* f = std::fopen(path.string().c_str(), "r+b");
        REQUIRE(f);
        std::fputc('X', f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(moe::Model::load(path.string()), ParseError);
    std::filesystem::remove(path);
}
