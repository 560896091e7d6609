#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gaproto/dataset.hpp"
#include "gaproto/model.hpp"

namespace gaproto {

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

/// Macro averages are unweighted means over classes. Undefined ratios
/// (no predictions, no support) count as 0.
struct ClassificationMetrics {
    std::size_t count = 0;
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::vector<ClassMetrics> per_class;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

ClassificationMetrics compute_metrics(std::span<const std::uint32_t> truth, std::span<const std::uint32_t> predicted,
                                      std::size_t num_classes);

ClassificationMetrics evaluate(const ModelParams& params, const ModelConfig& config, const EmbeddingDataset& dataset);

std::string to_json(const ClassificationMetrics& metrics);

}  // namespace gaproto
