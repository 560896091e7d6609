#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gaproto/dataset.hpp"
#include "gaproto/linalg.hpp"
#include "gaproto/model.hpp"

namespace gaproto {

struct LossWeights {
    double lambda1 = 1.0;  // accuracy
    double lambda2 = 0.1;  // proximity
    double lambda3 = 0.1;  // diversity
};

/// Non-negative, at least one positive. Only enforced for training runs.
void validate(const LossWeights& weights);

struct LossBreakdown {
    double acc = 0.0;
    double prox = 0.0;
    double div = 0.0;
    double total = 0.0;
    std::vector<std::size_t> prox_argmins;
};

/// Rows plus labels, upcast to double.
struct Batch {
    Matrix embeddings;
    std::vector<std::uint32_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

Batch make_batch(const Matrix& rows, std::span<const std::uint32_t> labels, std::span<const std::size_t> indices);
Batch make_batch(const EmbeddingDataset& dataset);

/// Cross-entropy against one-hot labels, summed over the batch. Probabilities
/// are clamped at 1e-12 before the log.
double loss_accuracy(const Matrix& probs, std::span<const std::uint32_t> labels);

struct ProximityLoss {
    double value = 0.0;
    std::vector<std::size_t> argmins;  // nearest sample per prototype, lowest index on ties
};

/// Mean over prototypes of the squared distance to the nearest sample.
ProximityLoss loss_proximity(const Matrix& prototypes, const Matrix& embeddings);

/// Negated mean distance over ordered prototype pairs. Needs M >= 2.
double loss_diversity(const Matrix& prototypes);

/// lambda1 * acc(batch) + lambda2 * prox(prototypes, embeddings) + lambda3 * div(prototypes).
LossBreakdown composite_loss(const ModelParams& params, const ModelConfig& config, const Batch& batch,
                             const Matrix& embeddings, const LossWeights& weights);

struct BackwardResult {
    LossBreakdown loss;
    GradientSet grads;
};

/// Exact gradients of composite_loss. The attention neighborhoods of the
/// forward pass are held fixed, proximity routes through each prototype's
/// argmin sample, and coincident prototypes contribute nothing to the
/// diversity gradient. Throws Error(numeric) naming the first tensor with a
/// non-finite gradient.
BackwardResult backward(const ModelParams& params, const ModelConfig& config, const Batch& batch,
                        const Matrix& embeddings, const LossWeights& weights);

/// Gradient for one optimizer step over several micro-batches:
///   (lambda1 / n) * sum of per-sample accuracy gradients + proximity and diversity gradients,
/// where n is the total sample count. The result does not depend on how the
/// samples are partitioned into micro-batches. loss.acc is the per-sample mean.
/// With threads > 1 the samples are split into contiguous chunks whose partial
/// sums are reduced in ascending order.
BackwardResult accumulated_gradient(const ModelParams& params, const ModelConfig& config,
                                    std::span<const Batch> micro_batches, const Matrix& embeddings,
                                    const LossWeights& weights, unsigned threads = 1);

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    std::size_t excluded = 0;  // perturbation changed a neighborhood, fallback, argmin or clamp
    std::string worst_tensor;
    std::size_t worst_index = 0;
};

/// Central differences against backward() on up to coords_per_tensor random
/// coordinates per tensor (all of them when the tensor is smaller).
GradCheckReport finite_diff_check(const ModelParams& params, const ModelConfig& config, const Batch& batch,
                                  const Matrix& embeddings, const LossWeights& weights, double epsilon,
                                  std::uint64_t seed = 0, std::size_t coords_per_tensor = 200);

struct GradCheckProblem {
    ModelConfig config;
    ModelParams params;
    Batch batch;
    Matrix embeddings;
};

/// Small random instance: synthetic clustered data (unit spread, 0.5 noise),
/// sample-initialized prototypes. The batch is the whole sample set.
GradCheckProblem make_gradcheck_problem(const ModelConfig& config, std::size_t num_samples);

enum class ProximityScope { full, batch };

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t batch_size = 4;
    std::size_t accum_steps = 64;
    std::size_t epochs = 200;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    LossWeights loss_weights;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    ProximityScope prox_scope = ProximityScope::full;
};

void validate(const TrainConfig& config);

struct AdamState {
    std::uint64_t step = 0;
    GradientSet first_moment;
    GradientSet second_moment;

    static AdamState zeros(const ModelConfig& config);
};

void adam_step(ModelParams& params, const GradientSet& grads, AdamState& state, const TrainConfig& config);

struct EpochRecord {
    std::size_t epoch = 0;
    double loss_total = 0.0;
    double loss_acc = 0.0;  // per-sample mean
    double loss_prox = 0.0;
    double loss_div = 0.0;
    std::optional<double> val_accuracy;
};

/// One JSON object, keys in fixed order, no trailing newline.
std::string to_json_line(const EpochRecord& record);

struct TrainResult {
    ModelParams params;
    std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam over shuffled micro-batches with gradient accumulation. Starts from
/// `initial` when given, otherwise init_params(model_config). A non-finite
/// loss, gradient or parameter aborts with Error(numeric) naming the last
/// completed epoch.
TrainResult train(const EmbeddingDataset& train_set, const EmbeddingDataset* val_set, const ModelConfig& model_config,
                  const TrainConfig& train_config, const ModelParams* initial = nullptr,
                  const EpochCallback& on_epoch = {});

double accuracy(const ModelParams& params, const ModelConfig& config, const EmbeddingDataset& dataset);

}  // namespace gaproto
