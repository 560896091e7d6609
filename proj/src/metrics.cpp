#include "gaproto/metrics.hpp"

#include "gaproto/error.hpp"
#include "json.hpp"

namespace gaproto {

ClassificationMetrics compute_metrics(std::span<const std::uint32_t> truth, std::span<const std::uint32_t> predicted,
                                      std::size_t num_classes) {
    require(truth.size() == predicted.size(), "truth and prediction counts differ");
    require(!truth.empty(), "metrics need at least one sample");
    ClassificationMetrics m;
    m.count = truth.size();
    m.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        require(truth[i] < num_classes && predicted[i] < num_classes, "class index out of range");
        ++m.confusion[truth[i]][predicted[i]];
        if (truth[i] == predicted[i]) ++correct;
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(m.count);

    m.per_class.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        std::size_t predicted_c = 0;
        std::size_t actual_c = 0;
        for (std::size_t k = 0; k < num_classes; ++k) {
            predicted_c += m.confusion[k][c];
            actual_c += m.confusion[c][k];
        }
        const double tp = static_cast<double>(m.confusion[c][c]);
        auto& pc = m.per_class[c];
        pc.support = actual_c;
        pc.precision = predicted_c ? tp / static_cast<double>(predicted_c) : 0.0;
        pc.recall = actual_c ? tp / static_cast<double>(actual_c) : 0.0;
        pc.f1 = (pc.precision + pc.recall) > 0.0 ? 2.0 * pc.precision * pc.recall / (pc.precision + pc.recall) : 0.0;
        m.macro_precision += pc.precision;
        m.macro_recall += pc.recall;
        m.macro_f1 += pc.f1;
    }
    const auto k = static_cast<double>(num_classes);
    m.macro_precision /= k;
    m.macro_recall /= k;
    m.macro_f1 /= k;
    return m;
}

ClassificationMetrics evaluate(const ModelParams& params, const ModelConfig& config, const EmbeddingDataset& dataset) {
    validate(dataset);
    if (dataset.dim != config.dim)
        fail(ErrorKind::format, "dataset dimension " + std::to_string(dataset.dim) + " does not match model dimension " +
                                    std::to_string(config.dim));
    if (dataset.num_classes != config.num_classes)
        fail(ErrorKind::format, "dataset has " + std::to_string(dataset.num_classes) + " classes, model has " +
                                    std::to_string(config.num_classes));
    const auto keys = compute_keys(params);
    std::vector<std::uint32_t> predicted(dataset.count());
    std::vector<double> s(dataset.dim);
    for (std::size_t i = 0; i < dataset.count(); ++i) {
        const auto row = dataset.row(i);
        std::copy(row.begin(), row.end(), s.begin());
        predicted[i] = static_cast<std::uint32_t>(argmax(forward(params, config, keys, s).probs));
    }
    return compute_metrics(dataset.labels, predicted, config.num_classes);
}

std::string to_json(const ClassificationMetrics& m) {
    nlohmann::ordered_json j;
    j["count"] = m.count;
    j["accuracy"] = m.accuracy;
    j["macro_precision"] = m.macro_precision;
    j["macro_recall"] = m.macro_recall;
    j["macro_f1"] = m.macro_f1;
    j["per_class"] = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < m.per_class.size(); ++c) {
        const auto& pc = m.per_class[c];
        j["per_class"].push_back(nlohmann::ordered_json{{"class", c},
                                                        {"precision", pc.precision},
                                                        {"recall", pc.recall},
                                                        {"f1", pc.f1},
                                                        {"support", pc.support}});
    }
    j["confusion"] = m.confusion;
    return j.dump(2);
}

}  // namespace gaproto
