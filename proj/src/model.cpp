#include "gaproto/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gaproto/error.hpp"

namespace gaproto {

std::string to_string(PrototypeInit init) { return init == PrototypeInit::sample ? "sample" : "gaussian"; }

PrototypeInit parse_prototype_init(const std::string& name) {
    if (name == "sample") return PrototypeInit::sample;
    if (name == "gaussian") return PrototypeInit::gaussian;
    fail(ErrorKind::invalid_argument, "unknown prototype init '" + name + "' (expected sample or gaussian)");
}

ModelConfig ModelConfig::defaults_for(std::size_t dim, std::size_t num_classes) {
    ModelConfig c;
    c.dim = dim;
    c.num_classes = num_classes;
    c.head_dim = (dim + c.num_heads - 1) / c.num_heads;
    return c;
}

void validate(const ModelConfig& c) {
    require(c.dim > 0, "model dim must be positive");
    require(c.num_prototypes > 0, "num_prototypes must be positive");
    require(c.num_heads > 0, "num_heads must be positive");
    require(c.head_dim > 0, "head_dim must be positive");
    require(c.num_classes >= 2, "num_classes must be at least 2");
    require(c.threshold > 0.0 && c.threshold < 1.0, "threshold must lie strictly inside (0, 1)");
}

ModelParams ModelParams::zeros(const ModelConfig& c) {
    ModelParams p;
    p.prototypes = Matrix(c.num_prototypes, c.dim);
    p.wq.assign(c.num_heads, Matrix(c.head_dim, c.dim));
    p.wk.assign(c.num_heads, Matrix(c.head_dim, c.dim));
    p.out_weight = Matrix(c.num_classes, c.concat_dim());
    p.out_bias.assign(c.num_classes, 0.0);
    return p;
}

void check_shapes(const ModelParams& p, const ModelConfig& c) {
    auto expect = [](bool ok, const std::string& what) {
        if (!ok) fail(ErrorKind::format, "shape mismatch: " + what);
    };
    expect(p.prototypes.rows() == c.num_prototypes && p.prototypes.cols() == c.dim, "prototypes");
    expect(p.wq.size() == c.num_heads && p.wk.size() == c.num_heads, "head count");
    for (std::size_t i = 0; i < c.num_heads; ++i) {
        expect(p.wq[i].rows() == c.head_dim && p.wq[i].cols() == c.dim, "wq." + std::to_string(i));
        expect(p.wk[i].rows() == c.head_dim && p.wk[i].cols() == c.dim, "wk." + std::to_string(i));
    }
    expect(p.out_weight.rows() == c.num_classes && p.out_weight.cols() == c.concat_dim(), "out_weight");
    expect(p.out_bias.size() == c.num_classes, "out_bias");
}

namespace {

void glorot_uniform(Matrix& m, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : m.values()) v = dist(rng);
}

}  // namespace

ModelParams init_params(const ModelConfig& config, const Matrix* train_embeddings, std::mt19937_64& rng) {
    validate(config);
    ModelParams p = ModelParams::zeros(config);

    if (config.prototype_init == PrototypeInit::sample) {
        require(train_embeddings != nullptr, "sample prototype init needs training embeddings");
        require(train_embeddings->cols() == config.dim, "training embeddings do not match model dim");
        if (train_embeddings->rows() < config.num_prototypes) {
            fail(ErrorKind::invalid_argument, "sample prototype init needs at least " +
                                                  std::to_string(config.num_prototypes) + " training rows, got " +
                                                  std::to_string(train_embeddings->rows()));
        }
        std::vector<std::size_t> order(train_embeddings->rows());
        std::iota(order.begin(), order.end(), std::size_t{0});
        // Partial Fisher-Yates: first M positions are a uniform sample without replacement.
        for (std::size_t j = 0; j < config.num_prototypes; ++j) {
            std::uniform_int_distribution<std::size_t> pick(j, order.size() - 1);
            std::swap(order[j], order[pick(rng)]);
            const auto src = train_embeddings->row(order[j]);
            std::copy(src.begin(), src.end(), p.prototypes.row(j).begin());
        }
    } else {
        std::normal_distribution<double> dist(0.0, 0.02);
        for (auto& v : p.prototypes.values()) v = dist(rng);
    }

    for (auto& w : p.wq) glorot_uniform(w, rng);
    for (auto& w : p.wk) glorot_uniform(w, rng);
    glorot_uniform(p.out_weight, rng);
    return p;
}

double attention_score(double sim) {
    constexpr double lo = std::numeric_limits<double>::min();
    constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    double a;
    if (sim >= 0.0) {
        a = 1.0 / (1.0 + std::exp(-sim));
    } else {
        const double e = std::exp(sim);
        a = e / (1.0 + e);
    }
    return std::clamp(a, lo, hi);
}

bool attention_saturated(double alpha) {
    return alpha <= std::numeric_limits<double>::min() || alpha >= 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
}

std::vector<Matrix> compute_keys(const ModelParams& params) {
    const std::size_t m = params.prototypes.rows();
    std::vector<Matrix> keys;
    keys.reserve(params.wk.size());
    for (const auto& wk : params.wk) {
        Matrix k(m, wk.rows());
        for (std::size_t j = 0; j < m; ++j) matvec(wk, params.prototypes.row(j), k.row(j));
        keys.push_back(std::move(k));
    }
    return keys;
}

std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

HeadTrace head_forward(const ModelParams& params, const ModelConfig& config, const Matrix& head_keys,
                       std::span<const double> s, std::size_t head) {
    const std::size_t m = config.num_prototypes;
    const std::size_t dk = config.head_dim;

    HeadTrace t;
    t.head_index = head;
    t.query.resize(dk);
    matvec(params.wq[head], s, t.query);
    t.keys = head_keys;

    // The similarity divides by d_k itself, not sqrt(d_k).
    t.sims.resize(m);
    t.alphas.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
        t.sims[j] = dot(t.query, head_keys.row(j)) / static_cast<double>(dk);
        t.alphas[j] = attention_score(t.sims[j]);
        if (t.alphas[j] > config.threshold) t.neighborhood.push_back(j);
    }
    if (t.neighborhood.empty()) {
        t.fallback_used = true;
        t.neighborhood.push_back(argmax(t.alphas));
    }

    double total = 0.0;
    for (std::size_t j : t.neighborhood) total += t.alphas[j];
    t.gammas.reserve(t.neighborhood.size());
    t.mixed.assign(dk, 0.0);
    for (std::size_t j : t.neighborhood) {
        const double g = t.alphas[j] / total;
        t.gammas.push_back(g);
        const auto k = head_keys.row(j);
        for (std::size_t c = 0; c < dk; ++c) t.mixed[c] += g * k[c];
    }
    return t;
}

HeadTrace head_forward(const ModelParams& params, const ModelConfig& config, std::span<const double> s,
                       std::size_t head) {
    require(head < config.num_heads, "head index out of range");
    require(s.size() == config.dim, "input has wrong dimension");
    Matrix keys(config.num_prototypes, config.head_dim);
    for (std::size_t j = 0; j < config.num_prototypes; ++j)
        matvec(params.wk[head], params.prototypes.row(j), keys.row(j));
    return head_forward(params, config, keys, s, head);
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> out(logits.size());
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) {
        out[c] = std::exp(logits[c] - mx);
        sum += out[c];
    }
    for (auto& v : out) v = std::clamp(v / sum, std::numeric_limits<double>::min(), 1.0 - std::numeric_limits<double>::epsilon() / 2.0);
    return out;
}

ForwardTrace forward(const ModelParams& params, const ModelConfig& config, const std::vector<Matrix>& keys,
                     std::span<const double> s) {
    require(s.size() == config.dim, "input has wrong dimension");
    ForwardTrace t;
    t.heads.reserve(config.num_heads);
    t.concat.reserve(config.concat_dim());
    for (std::size_t i = 0; i < config.num_heads; ++i) {
        t.heads.push_back(head_forward(params, config, keys[i], s, i));
        const auto& mixed = t.heads.back().mixed;
        t.concat.insert(t.concat.end(), mixed.begin(), mixed.end());
    }
    t.logits.resize(config.num_classes);
    matvec(params.out_weight, t.concat, t.logits);
    for (std::size_t c = 0; c < config.num_classes; ++c) t.logits[c] += params.out_bias[c];
    t.probs = softmax(t.logits);
    return t;
}

ForwardTrace forward(const ModelParams& params, const ModelConfig& config, std::span<const double> s) {
    return forward(params, config, compute_keys(params), s);
}

Prediction predict(const ModelParams& params, const ModelConfig& config, std::span<const double> s) {
    auto trace = forward(params, config, s);
    return {argmax(trace.probs), std::move(trace.probs)};
}

}  // namespace gaproto
