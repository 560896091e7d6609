#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gaproto/linalg.hpp"

namespace gaproto {

/// N labeled embedding vectors, optionally with the texts they were encoded
/// from. Embeddings are stored as 32-bit floats, row-major.
struct EmbeddingDataset {
    std::size_t dim = 0;
    std::uint32_t num_classes = 0;
    std::vector<std::uint32_t> labels;
    std::vector<float> embeddings;
    std::optional<std::vector<std::string>> texts;

    std::size_t count() const noexcept { return labels.size(); }
    std::span<const float> row(std::size_t i) const { return {embeddings.data() + i * dim, dim}; }
    bool has_texts() const noexcept { return texts.has_value(); }

    bool operator==(const EmbeddingDataset&) const = default;
};

/// Throws Error(invalid_argument) describing the first violated invariant.
void validate(const EmbeddingDataset& dataset);

/// Rows subset, in the order given.
EmbeddingDataset select_rows(const EmbeddingDataset& dataset, std::span<const std::size_t> indices);

/// Embeddings upcast to double.
Matrix to_matrix(const EmbeddingDataset& dataset);

// GAPE1 on-disk format, little-endian:
//   "GAPE" | version u32 = 1 | N u64 | d u32 | num_classes u32 | flags u32
//   | labels N x u32 | embeddings N x d x f32 | [texts: N x (len u32, bytes)]
inline constexpr std::uint32_t kGapeVersion = 1;
inline constexpr std::uint32_t kGapeFlagTexts = 1u;

std::vector<std::uint8_t> encode_gape(const EmbeddingDataset& dataset);
EmbeddingDataset decode_gape(std::span<const std::uint8_t> bytes);

void write_gape(const EmbeddingDataset& dataset, const std::filesystem::path& path);
EmbeddingDataset read_gape(const std::filesystem::path& path);

struct SyntheticSpec {
    std::uint32_t num_clusters = 2;
    std::size_t per_cluster = 50;
    std::size_t dim = 16;
    double center_spread = 5.0;
    double noise_sigma = 0.5;
    std::uint64_t seed = 0;
    // Attach "cluster <c> sample <k>" texts so projections have something to show.
    bool with_texts = false;
};

/// Gaussian clusters: centers ~ N(0, spread^2) per coordinate, samples ~
/// center + N(0, sigma^2). Label is the cluster index.
EmbeddingDataset gen_synthetic(const SyntheticSpec& spec);

struct SplitResult {
    EmbeddingDataset train;
    EmbeddingDataset test;
};

/// Stratified split: each class contributes round(test_fraction * n_c) rows to
/// the test part, chosen by a seeded shuffle. Both parts keep original order.
SplitResult split(const EmbeddingDataset& dataset, double test_fraction, std::uint64_t seed);

}  // namespace gaproto
