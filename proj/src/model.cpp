#include "farelab/model.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace fare::moe {

using nlohmann::json;

namespace {

constexpr char kModelMagic[] = "FARELAB-MODEL-v1\n";

// Initialization scales, chosen to keep hidden-state norms O(1) through a
// handful of residual blocks.
double embed_sigma(int d) { return 1.0 / std::sqrt(static_cast<double>(d)); }
double attn_sigma(int d) { return 1.0 / std::sqrt(static_cast<double>(d)); }
double attn_out_sigma(int d) { return 0.5 / std::sqrt(static_cast<double>(d)); }
double router_sigma(int d) { return 1.5 / std::sqrt(static_cast<double>(d)); }
double mlp_in_sigma(int d) { return 1.0 / std::sqrt(static_cast<double>(d)); }
double mlp_out_sigma(int h) { return 0.5 / std::sqrt(static_cast<double>(h)); }
double head_sigma(int d) { return 1.0 / std::sqrt(static_cast<double>(d)); }

Vec random_matrix(Rng& rng, int rows, int cols, double sigma) {
    Vec m(static_cast<std::size_t>(rows) * cols);
    for (double& v : m) v = sigma * rng.normal();
    return m;
}

// y = M x, M is rows x cols row-major.
void matvec(std::span<const double> m, std::span<const double> x, std::span<double> y) {
    const std::size_t cols = x.size();
    for (std::size_t r = 0; r < y.size(); ++r) {
        const double* row = m.data() + r * cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
}

Vec expert_forward(const ExpertWeights& e, std::span<const double> x, int d_hidden) {
    Vec h(static_cast<std::size_t>(d_hidden));
    matvec(e.w1, x, h);
    for (double& v : h) v = v > 0.0 ? v : 0.0;  // ReLU
    Vec out(x.size());
    matvec(e.w2, h, out);
    return out;
}

// Sinusoidal positional encoding, scaled to a small fraction of the typical
// embedding norm so token identity dominates the hidden state.
Vec positional_encoding(int pos, int d) {
    Vec pe(static_cast<std::size_t>(d));
    const double scale = 0.3 / std::sqrt(static_cast<double>(d) / 2.0);
    for (int i = 0; i < d; ++i) {
        const double freq =
            std::pow(10000.0, -2.0 * static_cast<double>(i / 2) / static_cast<double>(d));
        const double angle = static_cast<double>(pos) * freq;
        pe[static_cast<std::size_t>(i)] = scale * ((i % 2 == 0) ? std::sin(angle)
                                                                : std::cos(angle));
    }
    return pe;
}

template <typename Fn>
void for_each_tensor(const Model& m, Fn&& fn) {
    fn(m.embedding);
    for (const auto& l : m.layers) {
        fn(l.wq);
        fn(l.wk);
        fn(l.wv);
        fn(l.wo);
        fn(l.dense.w1);
        fn(l.dense.w2);
        fn(l.router);
        for (const auto& e : l.experts) {
            fn(e.w1);
            fn(e.w2);
        }
        for (const auto& e : l.shared) {
            fn(e.w1);
            fn(e.w2);
        }
    }
    fn(m.output_head);
}

template <typename Fn>
void for_each_tensor_mut(Model& m, Fn&& fn) {
    fn(m.embedding);
    for (auto& l : m.layers) {
        fn(l.wq);
        fn(l.wk);
        fn(l.wv);
        fn(l.wo);
        fn(l.dense.w1);
        fn(l.dense.w2);
        fn(l.router);
        for (auto& e : l.experts) {
            fn(e.w1);
            fn(e.w2);
        }
        for (auto& e : l.shared) {
            fn(e.w1);
            fn(e.w2);
        }
    }
    fn(m.output_head);
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 1) throw ConfigError("config: vocab_size must be >= 1");
    if (d_model < 1) throw ConfigError("config: d_model must be >= 1");
    if (n_layers < 1) throw ConfigError("config: n_layers must be >= 1");
    if (n_experts < 1) throw ConfigError("config: n_experts must be >= 1");
    if (d_expert_hidden < 1) throw ConfigError("config: d_expert_hidden must be >= 1");
    if (top_k < 1 || top_k > n_experts)
        throw ConfigError("config: top_k must satisfy 1 <= top_k <= n_experts");
    if (n_shared < 0) throw ConfigError("config: n_shared must be >= 0");
    for (int l : moe_layers)
        if (l < 0 || l >= n_layers)
            throw ConfigError("config: moe layer index out of [0, n_layers)");
}

ModelConfig preset_config(const std::string& name, int vocab_size, std::uint64_t seed) {
    ModelConfig c;
    c.vocab_size = vocab_size;
    c.d_model = 48;
    c.n_layers = 4;
    c.moe_layers = {0, 1, 2, 3};
    c.d_expert_hidden = 48;
    c.seed = seed;
    if (name == "olmoe-like") {
        c.n_experts = 64;
        c.top_k = 8;
        c.n_shared = 0;
    } else if (name == "mixtral-like") {
        c.n_experts = 8;
        c.top_k = 2;
        c.n_shared = 0;
    } else if (name == "deepseek-like") {
        c.n_experts = 64;
        c.top_k = 6;
        c.n_shared = 2;
    } else {
        throw ConfigError("unknown model preset: " + name);
    }
    c.validate();
    return c;
}

Model build_model(const ModelConfig& config) {
    config.validate();
    Model m;
    m.config = config;
    Rng rng(config.seed);
    const int d = config.d_model;
    const int h = config.d_expert_hidden;

    m.embedding = random_matrix(rng, config.vocab_size, d, embed_sigma(d));
    m.layers.resize(static_cast<std::size_t>(config.n_layers));
    for (int l = 0; l < config.n_layers; ++l) {
        auto& lw = m.layers[static_cast<std::size_t>(l)];
        lw.wq = random_matrix(rng, d, d, attn_sigma(d));
        lw.wk = random_matrix(rng, d, d, attn_sigma(d));
        lw.wv = random_matrix(rng, d, d, attn_sigma(d));
        lw.wo = random_matrix(rng, d, d, attn_out_sigma(d));
        if (config.is_moe_layer(l)) {
            lw.router = random_matrix(rng, config.n_experts, d, router_sigma(d));
            lw.experts.resize(static_cast<std::size_t>(config.n_experts));
            for (auto& e : lw.experts) {
                e.w1 = random_matrix(rng, h, d, mlp_in_sigma(d));
                e.w2 = random_matrix(rng, d, h, mlp_out_sigma(h));
            }
            lw.shared.resize(static_cast<std::size_t>(config.n_shared));
            for (auto& e : lw.shared) {
                e.w1 = random_matrix(rng, h, d, mlp_in_sigma(d));
                e.w2 = random_matrix(rng, d, h, mlp_out_sigma(h));
            }
        } else {
            lw.dense.w1 = random_matrix(rng, h, d, mlp_in_sigma(d));
            lw.dense.w2 = random_matrix(rng, d, h, mlp_out_sigma(h));
        }
    }
    m.output_head = random_matrix(rng, config.vocab_size, d, head_sigma(d));
    return m;
}

namespace {

struct ForwardState {
    std::vector<Vec> x;  // positions x d_model
};

void check_tokens(const ModelConfig& config, std::span<const int> tokens) {
    if (tokens.empty()) throw InputError("forward: empty token sequence");
    for (int t : tokens)
        if (t < 0 || t >= config.vocab_size)
            throw InputError("forward: token id out of range: " + std::to_string(t));
}

void run_attention(const LayerWeights& lw, std::vector<Vec>& x, int d) {
    const std::size_t n = x.size();
    std::vector<Vec> q(n), k(n), v(n);
    for (std::size_t t = 0; t < n; ++t) {
        q[t].resize(static_cast<std::size_t>(d));
        k[t].resize(static_cast<std::size_t>(d));
        v[t].resize(static_cast<std::size_t>(d));
        matvec(lw.wq, x[t], q[t]);
        matvec(lw.wk, x[t], k[t]);
        matvec(lw.wv, x[t], v[t]);
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t t = 0; t < n; ++t) {
        Vec scores(t + 1);
        for (std::size_t s = 0; s <= t; ++s) {
            double acc = 0.0;
            for (int i = 0; i < d; ++i)
                acc += q[t][static_cast<std::size_t>(i)] * k[s][static_cast<std::size_t>(i)];
            scores[s] = acc * inv_sqrt_d;
        }
        softmax_inplace(scores);
        Vec ctx(static_cast<std::size_t>(d), 0.0);
        for (std::size_t s = 0; s <= t; ++s)
            for (int i = 0; i < d; ++i)
                ctx[static_cast<std::size_t>(i)] += scores[s] * v[s][static_cast<std::size_t>(i)];
        Vec out(static_cast<std::size_t>(d));
        matvec(lw.wo, ctx, out);
        for (int i = 0; i < d; ++i) x[t][static_cast<std::size_t>(i)] += out[static_cast<std::size_t>(i)];
    }
}

}  // namespace

ForwardOutput Model::forward(std::span<const int> tokens, const RouterHook* hook) const {
    check_tokens(config, tokens);
    const int d = config.d_model;
    const int K = config.n_experts;
    const std::size_t n = tokens.size();

    std::vector<Vec> x(n);
    for (std::size_t t = 0; t < n; ++t) {
        x[t] = positional_encoding(static_cast<int>(t), d);
        const double* row = embedding.data() + static_cast<std::size_t>(tokens[t]) * d;
        for (int i = 0; i < d; ++i) x[t][static_cast<std::size_t>(i)] += row[i];
    }

    ForwardOutput out;
    for (int l = 0; l < config.n_layers; ++l) {
        const auto& lw = layers[static_cast<std::size_t>(l)];
        run_attention(lw, x, d);
        if (config.is_moe_layer(l)) {
            for (std::size_t t = 0; t < n; ++t) {
                RoutingRecord rec;
                rec.layer = l;
                rec.pos = static_cast<int>(t);
                rec.raw_logits.resize(static_cast<std::size_t>(K));
                matvec(lw.router, x[t], rec.raw_logits);
                rec.logits = rec.raw_logits;
                if (hook) hook->adjust_logits(l, rec.logits);
                rec.probs = softmax(rec.logits);
                rec.selected = top_k_indices(rec.logits, config.top_k);
                double wsum = 0.0;
                for (int e : rec.selected) wsum += rec.probs[static_cast<std::size_t>(e)];
                rec.weights.reserve(rec.selected.size());
                for (int e : rec.selected)
                    rec.weights.push_back(rec.probs[static_cast<std::size_t>(e)] / wsum);

                Vec delta(static_cast<std::size_t>(d), 0.0);
                for (std::size_t j = 0; j < rec.selected.size(); ++j) {
                    const auto y = expert_forward(
                        lw.experts[static_cast<std::size_t>(rec.selected[j])], x[t],
                        config.d_expert_hidden);
                    for (int i = 0; i < d; ++i)
                        delta[static_cast<std::size_t>(i)] += rec.weights[j] * y[static_cast<std::size_t>(i)];
                }
                for (const auto& sh : lw.shared) {
                    const auto y = expert_forward(sh, x[t], config.d_expert_hidden);
                    for (int i = 0; i < d; ++i) delta[static_cast<std::size_t>(i)] += y[static_cast<std::size_t>(i)];
                }
                for (int i = 0; i < d; ++i) x[t][static_cast<std::size_t>(i)] += delta[static_cast<std::size_t>(i)];
                out.routing_records.push_back(std::move(rec));
            }
        } else {
            for (std::size_t t = 0; t < n; ++t) {
                const auto y = expert_forward(lw.dense, x[t], config.d_expert_hidden);
                for (int i = 0; i < d; ++i) x[t][static_cast<std::size_t>(i)] += y[static_cast<std::size_t>(i)];
            }
        }
    }

    out.next_token_log_probs.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        Vec logits(static_cast<std::size_t>(config.vocab_size));
        matvec(output_head, x[t], logits);
        out.next_token_log_probs[t] = log_softmax(logits);
    }
    return out;
}

std::vector<Vec> Model::hidden_states_at(std::span<const int> tokens, int layer) const {
    check_tokens(config, tokens);
    if (layer < 0 || layer >= config.n_layers)
        throw InputError("hidden_states_at: layer out of range");
    const int d = config.d_model;
    const std::size_t n = tokens.size();
    std::vector<Vec> x(n);
    for (std::size_t t = 0; t < n; ++t) {
        x[t] = positional_encoding(static_cast<int>(t), d);
        const double* row = embedding.data() + static_cast<std::size_t>(tokens[t]) * d;
        for (int i = 0; i < d; ++i) x[t][static_cast<std::size_t>(i)] += row[i];
    }
    for (int l = 0; l < layer; ++l) {
        const auto& lw = layers[static_cast<std::size_t>(l)];
        run_attention(lw, x, d);
        if (config.is_moe_layer(l)) {
            // Hook-free pass; this probe is only used on unintervened models.
            for (std::size_t t = 0; t < n; ++t) {
                Vec z(static_cast<std::size_t>(config.n_experts));
                matvec(lw.router, x[t], z);
                const Vec probs = softmax(z);
                const auto sel = top_k_indices(z, config.top_k);
                double wsum = 0.0;
                for (int e : sel) wsum += probs[static_cast<std::size_t>(e)];
                Vec delta(static_cast<std::size_t>(d), 0.0);
                for (int e : sel) {
                    const auto y = expert_forward(lw.experts[static_cast<std::size_t>(e)],
                                                  x[t], config.d_expert_hidden);
                    const double w = probs[static_cast<std::size_t>(e)] / wsum;
                    for (int i = 0; i < d; ++i) delta[static_cast<std::size_t>(i)] += w * y[static_cast<std::size_t>(i)];
                }
                for (const auto& sh : lw.shared) {
                    const auto y = expert_forward(sh, x[t], config.d_expert_hidden);
                    for (int i = 0; i < d; ++i) delta[static_cast<std::size_t>(i)] += y[static_cast<std::size_t>(i)];
                }
                for (int i = 0; i < d; ++i) x[t][static_cast<std::size_t>(i)] += delta[static_cast<std::size_t>(i)];
            }
        } else {
            for (std::size_t t = 0; t < n; ++t) {
                const auto y = expert_forward(lw.dense, x[t], config.d_expert_hidden);
                for (int i = 0; i < d; ++i) x[t][static_cast<std::size_t>(i)] += y[static_cast<std::size_t>(i)];
            }
        }
    }
    run_attention(layers[static_cast<std::size_t>(layer)], x, d);
    return x;
}

double Model::sequence_log_likelihood(std::span<const int> tokens,
                                      const RouterHook* hook) const {
    if (tokens.size() < 2)
        throw InputError("sequence_log_likelihood: need at least 2 tokens");
    const auto out = forward(tokens, hook);
    double ll = 0.0;
    for (std::size_t t = 1; t < tokens.size(); ++t)
        ll += out.next_token_log_probs[t - 1][static_cast<std::size_t>(tokens[t])];
    return ll;
}

double Model::perplexity(const std::vector<std::vector<int>>& corpus,
                         const RouterHook* hook) const {
    if (corpus.empty()) throw InputError("perplexity: empty corpus");
    double nll = 0.0;
    std::size_t n_predicted = 0;
    for (const auto& seq : corpus) {
        if (seq.size() < 2)
            throw InputError("perplexity: sequence shorter than 2 tokens");
        nll -= sequence_log_likelihood(seq, hook);
        n_predicted += seq.size() - 1;
    }
    return std::exp(nll / static_cast<double>(n_predicted));
}

std::vector<int> Model::greedy_decode(std::span<const int> prompt, int max_new,
                                      const RouterHook* hook) const {
    if (prompt.empty()) throw InputError("greedy_decode: empty prompt");
    std::vector<int> seq(prompt.begin(), prompt.end());
    for (int step = 0; step < max_new; ++step) {
        const auto out = forward(seq, hook);
        const Vec& dist = out.next_token_log_probs.back();
        int best = 0;
        for (int v = 1; v < config.vocab_size; ++v)
            if (dist[static_cast<std::size_t>(v)] > dist[static_cast<std::size_t>(best)])
                best = v;  // ties keep the lower token id
        seq.push_back(best);
    }
    return seq;
}

std::uint64_t Model::weight_checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for_each_tensor(*this, [&](const Vec& v) {
        h = fnv1a(v.data(), v.size() * sizeof(double), h);
    });
    return h;
}

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"vocab_size", c.vocab_size},
                {"d_model", c.d_model},
                {"n_layers", c.n_layers},
                {"moe_layers", std::vector<int>(c.moe_layers.begin(), c.moe_layers.end())},
                {"n_experts", c.n_experts},
                {"top_k", c.top_k},
                {"n_shared", c.n_shared},
                {"d_expert_hidden", c.d_expert_hidden},
                {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    for (int l : j.at("moe_layers").get<std::vector<int>>()) c.moe_layers.insert(l);
    c.n_experts = j.at("n_experts").get<int>();
    c.top_k = j.at("top_k").get<int>();
    c.n_shared = j.at("n_shared").get<int>();
    c.d_expert_hidden = j.at("d_expert_hidden").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

}  // namespace

void Model::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write model file: " + path);
    out.write(kModelMagic, sizeof(kModelMagic) - 1);
    const std::string cfg = config_to_json(config).dump();
    const std::uint64_t cfg_len = cfg.size();
    out.write(reinterpret_cast<const char*>(&cfg_len), sizeof(cfg_len));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    std::uint64_t n_doubles = 0;
    for_each_tensor(*this, [&](const Vec& v) { n_doubles += v.size(); });
    out.write(reinterpret_cast<const char*>(&n_doubles), sizeof(n_doubles));
    for_each_tensor(*this, [&](const Vec& v) {
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    });
    if (!out) throw InputError("model save failed: " + path);
}

Model Model::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open model file: " + path);
    char magic[sizeof(kModelMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
        throw ParseError("model file: bad magic (expected FARELAB-MODEL-v1)");
    std::uint64_t cfg_len = 0;
    in.read(reinterpret_cast<char*>(&cfg_len), sizeof(cfg_len));
    std::string cfg(cfg_len, '\0');
    in.read(cfg.data(), static_cast<std::streamsize>(cfg_len));
    if (!in) throw ParseError("model file: truncated config block");
    ModelConfig config;
    try {
        config = config_from_json(json::parse(cfg));
    } catch (const json::exception& e) {
        throw ParseError(std::string("model file: bad config json: ") + e.what());
    }
    // Rebuild structure (tensor shapes) then overwrite with stored weights.
    Model m = build_model(config);
    std::uint64_t n_doubles = 0;
    in.read(reinterpret_cast<char*>(&n_doubles), sizeof(n_doubles));
    std::uint64_t expected = 0;
    for_each_tensor(m, [&](const Vec& v) { expected += v.size(); });
    if (n_doubles != expected)
        throw ParseError("model file: weight count mismatch");
    for_each_tensor_mut(m, [&](Vec& v) {
        in.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
    });
    if (!in) throw ParseError("model file: truncated weights");
    return m;
}

}  // namespace fare::moe
