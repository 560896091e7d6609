#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gaproto/linalg.hpp"

namespace gaproto {

enum class PrototypeInit { sample, gaussian };

std::string to_string(PrototypeInit init);
PrototypeInit parse_prototype_init(const std::string& name);

struct ModelConfig {
    std::size_t dim = 0;
    std::size_t num_prototypes = 20;
    std::size_t num_heads = 4;
    std::size_t head_dim = 0;
    std::size_t num_classes = 2;
    double threshold = 0.5;
    std::uint64_t seed = 0;
    PrototypeInit prototype_init = PrototypeInit::sample;

    /// Defaults for everything not tied to the data; head_dim = ceil(dim / num_heads).
    static ModelConfig defaults_for(std::size_t dim, std::size_t num_classes);

    std::size_t concat_dim() const noexcept { return num_heads * head_dim; }

    bool operator==(const ModelConfig&) const = default;
};

void validate(const ModelConfig& config);

/// All trainable tensors of the head.
struct ModelParams {
    Matrix prototypes;             // M x d
    std::vector<Matrix> wq;        // H matrices, d_k x d
    std::vector<Matrix> wk;        // H matrices, d_k x d
    Matrix out_weight;             // C x (H * d_k)
    std::vector<double> out_bias;  // C

    static ModelParams zeros(const ModelConfig& config);

    bool operator==(const ModelParams&) const = default;
};

/// Gradients mirror the parameter layout tensor for tensor.
struct GradientSet : ModelParams {
    static GradientSet zeros(const ModelConfig& config) { return GradientSet{ModelParams::zeros(config)}; }
};

/// Visits every tensor as (name, dims, values) in canonical order:
/// prototypes, wq.<i>..., wk.<i>..., out_weight, out_bias.
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
    using Dims = std::vector<std::uint64_t>;
    fn(std::string("prototypes"), Dims{p.prototypes.rows(), p.prototypes.cols()}, p.prototypes.values());
    for (std::size_t i = 0; i < p.wq.size(); ++i)
        fn("wq." + std::to_string(i), Dims{p.wq[i].rows(), p.wq[i].cols()}, p.wq[i].values());
    for (std::size_t i = 0; i < p.wk.size(); ++i)
        fn("wk." + std::to_string(i), Dims{p.wk[i].rows(), p.wk[i].cols()}, p.wk[i].values());
    fn(std::string("out_weight"), Dims{p.out_weight.rows(), p.out_weight.cols()}, p.out_weight.values());
    fn(std::string("out_bias"), Dims{p.out_bias.size()}, std::span(p.out_bias));
}

/// Throws Error(format) if any tensor shape disagrees with the config.
void check_shapes(const ModelParams& params, const ModelConfig& config);

/// Glorot-uniform transforms and output weights, zero bias. Prototypes are M
/// distinct training rows (sample) or N(0, 0.02^2) entries (gaussian).
ModelParams init_params(const ModelConfig& config, const Matrix* train_embeddings, std::mt19937_64& rng);

/// Everything one attention head computed for one input.
struct HeadTrace {
    std::size_t head_index = 0;
    std::vector<double> query;              // q_i, length d_k
    Matrix keys;                            // k_ij, M x d_k
    std::vector<double> sims;               // (q_i . k_ij) / d_k
    std::vector<double> alphas;             // sigmoid(sims), strictly inside (0, 1)
    std::vector<std::size_t> neighborhood;  // ascending prototype indices
    std::vector<double> gammas;             // aligned with neighborhood, sums to 1
    std::vector<double> mixed;              // r_i, length d_k
    bool fallback_used = false;
};

struct ForwardTrace {
    std::vector<HeadTrace> heads;
    std::vector<double> concat;
    std::vector<double> logits;
    std::vector<double> probs;
};

/// Sigmoid clamped into the open interval, so a saturated score never reads as exactly 0 or 1.
double attention_score(double sim);
bool attention_saturated(double alpha);

/// k_ij = W^k_i p_j for every prototype, one M x d_k matrix per head.
std::vector<Matrix> compute_keys(const ModelParams& params);

HeadTrace head_forward(const ModelParams& params, const ModelConfig& config, std::span<const double> s,
                       std::size_t head);
ForwardTrace forward(const ModelParams& params, const ModelConfig& config, std::span<const double> s);

/// Same as above, reusing keys from compute_keys (they do not depend on the input).
HeadTrace head_forward(const ModelParams& params, const ModelConfig& config, const Matrix& head_keys,
                       std::span<const double> s, std::size_t head);
ForwardTrace forward(const ModelParams& params, const ModelConfig& config, const std::vector<Matrix>& keys,
                     std::span<const double> s);

std::vector<double> softmax(std::span<const double> logits);

struct Prediction {
    std::size_t label = 0;
    std::vector<double> probs;
};

Prediction predict(const ModelParams& params, const ModelConfig& config, std::span<const double> s);

/// Index of the largest value, lowest index on ties.
std::size_t argmax(std::span<const double> values);

// GAPC1 checkpoints. Tensors are stored as f32, so saving rounds.
void save_checkpoint(const ModelParams& params, const ModelConfig& config, const std::filesystem::path& path);
std::pair<ModelParams, ModelConfig> load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params, const ModelConfig& config);
std::pair<ModelParams, ModelConfig> decode_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace gaproto
