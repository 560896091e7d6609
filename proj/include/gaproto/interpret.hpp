#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gaproto/dataset.hpp"
#include "gaproto/linalg.hpp"
#include "gaproto/model.hpp"

namespace gaproto {

// Similarity used to match prototypes to samples.
enum class Similarity { cosine, negative_euclidean };

std::string to_string(Similarity similarity);
Similarity parse_similarity(const std::string& name);

/// Cosine similarity; 0 when either vector has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct PrototypeMatch {
    std::size_t sample_index = 0;
    double similarity = 0.0;
    std::uint32_t label = 0;
    std::optional<std::string> text;
};

struct ProjectionResult {
    Similarity measure = Similarity::cosine;
    std::vector<PrototypeMatch> matches;  // one per prototype
    double distinguishness = 0.0;
};

/// Each prototype gets the most similar sample in `dataset` (lowest index on ties).
ProjectionResult project_prototypes(const ModelParams& params, const EmbeddingDataset& dataset,
                                    Similarity measure = Similarity::cosine);

/// Fraction of prototypes whose matched sample is unique; repeated matches count once.
double distinguishness(const ProjectionResult& projection);

/// Mean |cosine| over unordered prototype pairs. 0 means mutually orthogonal.
double orthogonality(const ModelParams& params);

struct ExplanationEdge {
    std::size_t prototype = 0;
    double alpha = 0.0;
    double gamma = 0.0;
    bool fallback = false;
    std::vector<double> contribution;  // per class: gamma * W[c, head slice] . k
    // Predicted-class contribution minus the mean contribution to the other classes.
    double margin = 0.0;
};

struct HeadExplanation {
    std::size_t head = 0;
    bool fallback_used = false;
    std::vector<ExplanationEdge> edges;
};

struct ExplanationReport {
    std::optional<std::size_t> sample_index;
    std::optional<std::string> text;
    std::optional<std::uint32_t> true_label;
    std::size_t prediction = 0;
    std::vector<double> probs;
    std::vector<double> logits;
    std::vector<double> bias;
    std::vector<HeadExplanation> heads;
    /// Edge with the largest margin toward the predicted class. Raw logit
    /// contributions are not comparable across edges since softmax ignores
    /// any shift shared by all classes.
    std::size_t top_head = 0;
    std::size_t top_prototype = 0;
    /// |sum of contributions + bias - logits|, max over classes.
    double reconstruction_residual = 0.0;
    /// Projection of every prototype referenced by an edge, ascending.
    std::vector<std::pair<std::size_t, PrototypeMatch>> prototypes;
};

struct ExplainInput {
    std::optional<std::size_t> sample_index;
    std::optional<std::string> text;
    std::optional<std::uint32_t> true_label;
};

/// Decomposes the logits of one input into per-edge contributions. Throws
/// Error(internal) if contributions + bias miss the logits by more than 1e-6.
ExplanationReport explain(const ModelParams& params, const ModelConfig& config, std::span<const double> s,
                          const ProjectionResult& projection, const ExplainInput& input = {});

struct TsneOptions {
    double perplexity = 30.0;
    std::size_t iterations = 1000;
    std::uint64_t seed = 0;
};

/// Exact t-SNE to 2D. Returns an N x 2 matrix. Needs N > 3 * perplexity.
Matrix tsne_embed(const Matrix& points, const TsneOptions& options);

enum class PointRole { sample, prototype };

struct MapPoint {
    double x = 0.0;
    double y = 0.0;
    PointRole role = PointRole::sample;
    std::size_t index = 0;
    std::uint32_t label = 0;  // prototypes: label of the matched sample
};

struct EmbeddingMap2D {
    std::vector<MapPoint> points;
};

/// t-SNE of the dataset rows followed by the prototypes.
EmbeddingMap2D prototype_map(const ModelParams& params, const EmbeddingDataset& dataset, const TsneOptions& options,
                             Similarity measure = Similarity::cosine);

std::string to_json(const ProjectionResult& projection);
std::string to_json(const ExplanationReport& report);
/// Header `x,y,role,index,label`.
std::string to_csv(const EmbeddingMap2D& map);

}  // namespace gaproto
