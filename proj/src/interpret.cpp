#include "gaproto/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "gaproto/error.hpp"
#include "json.hpp"

namespace gaproto {

using nlohmann::ordered_json;

std::string to_string(Similarity similarity) {
    return similarity == Similarity::cosine ? "cosine" : "negative_euclidean";
}

Similarity parse_similarity(const std::string& name) {
    if (name == "cosine") return Similarity::cosine;
    if (name == "negative_euclidean" || name == "euclidean") return Similarity::negative_euclidean;
    fail(ErrorKind::invalid_argument, "unknown similarity '" + name + "' (expected cosine or negative_euclidean)");
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

ProjectionResult project_prototypes(const ModelParams& params, const EmbeddingDataset& dataset, Similarity measure) {
    require(dataset.count() > 0, "projection needs a non-empty dataset");
    if (dataset.dim != params.prototypes.cols()) {
        fail(ErrorKind::format, "dataset dimension " + std::to_string(dataset.dim) + " does not match prototype dimension " +
                                    std::to_string(params.prototypes.cols()));
    }
    const Matrix rows = to_matrix(dataset);
    ProjectionResult out;
    out.measure = measure;
    for (std::size_t j = 0; j < params.prototypes.rows(); ++j) {
        const auto p = params.prototypes.row(j);
        auto sim = [&](std::size_t i) {
            return measure == Similarity::cosine ? cosine_similarity(p, rows.row(i))
                                                 : -std::sqrt(squared_distance(p, rows.row(i)));
        };
        PrototypeMatch match;
        match.similarity = sim(0);
        for (std::size_t i = 1; i < rows.rows(); ++i) {
            const double v = sim(i);
            if (v > match.similarity) {
                match.similarity = v;
                match.sample_index = i;
            }
        }
        match.label = dataset.labels[match.sample_index];
        if (dataset.texts) match.text = (*dataset.texts)[match.sample_index];
        out.matches.push_back(std::move(match));
    }
    out.distinguishness = distinguishness(out);
    return out;
}

double distinguishness(const ProjectionResult& projection) {
    if (projection.matches.empty()) return 0.0;
    std::set<std::size_t> unique;
    for (const auto& m : projection.matches) unique.insert(m.sample_index);
    return static_cast<double>(unique.size()) / static_cast<double>(projection.matches.size());
}

double orthogonality(const ModelParams& params) {
    const auto& p = params.prototypes;
    require(p.rows() >= 2, "orthogonality needs at least 2 prototypes");
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t j = 0; j < p.rows(); ++j) {
        for (std::size_t k = j + 1; k < p.rows(); ++k) {
            sum += std::abs(cosine_similarity(p.row(j), p.row(k)));
            ++pairs;
        }
    }
    return sum / static_cast<double>(pairs);
}

ExplanationReport explain(const ModelParams& params, const ModelConfig& config, std::span<const double> s,
                          const ProjectionResult& projection, const ExplainInput& input) {
    if (projection.matches.size() != config.num_prototypes) {
        fail(ErrorKind::invalid_argument, "projection has " + std::to_string(projection.matches.size()) +
                                              " prototypes, model has " + std::to_string(config.num_prototypes));
    }
    const ForwardTrace trace = forward(params, config, s);
    const std::size_t classes = config.num_classes;
    const std::size_t dk = config.head_dim;

    ExplanationReport report;
    report.sample_index = input.sample_index;
    report.text = input.text;
    report.true_label = input.true_label;
    report.prediction = argmax(trace.probs);
    report.probs = trace.probs;
    report.logits = trace.logits;
    report.bias = params.out_bias;

    std::vector<double> rebuilt = params.out_bias;
    std::set<std::size_t> referenced;
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& h : trace.heads) {
        HeadExplanation head;
        head.head = h.head_index;
        head.fallback_used = h.fallback_used;
        for (std::size_t n = 0; n < h.neighborhood.size(); ++n) {
            ExplanationEdge edge;
            edge.prototype = h.neighborhood[n];
            edge.alpha = h.alphas[edge.prototype];
            edge.gamma = h.gammas[n];
            edge.fallback = h.fallback_used;
            edge.contribution.resize(classes);
            const auto key = h.keys.row(edge.prototype);
            for (std::size_t c = 0; c < classes; ++c) {
                const std::span<const double> w(params.out_weight.row(c).data() + h.head_index * dk, dk);
                edge.contribution[c] = edge.gamma * dot(w, key);
                rebuilt[c] += edge.contribution[c];
            }
            double others = 0.0;
            for (std::size_t c = 0; c < classes; ++c)
                if (c != report.prediction) others += edge.contribution[c];
            edge.margin = edge.contribution[report.prediction] - others / static_cast<double>(classes - 1);
            if (edge.margin > best) {
                best = edge.margin;
                report.top_head = h.head_index;
                report.top_prototype = edge.prototype;
            }
            referenced.insert(edge.prototype);
            head.edges.push_back(std::move(edge));
        }
        report.heads.push_back(std::move(head));
    }

    for (std::size_t c = 0; c < classes; ++c)
        report.reconstruction_residual = std::max(report.reconstruction_residual, std::abs(rebuilt[c] - trace.logits[c]));
    if (!(report.reconstruction_residual <= 1e-6)) {
        fail(ErrorKind::internal, "explanation does not reconstruct the logits (residual " +
                                      std::to_string(report.reconstruction_residual) + ")");
    }
    for (std::size_t j : referenced) report.prototypes.emplace_back(j, projection.matches[j]);
    return report;
}

EmbeddingMap2D prototype_map(const ModelParams& params, const EmbeddingDataset& dataset, const TsneOptions& options,
                             Similarity measure) {
    const ProjectionResult projection = project_prototypes(params, dataset, measure);
    const std::size_t n = dataset.count();
    const std::size_t m = params.prototypes.rows();
    Matrix points(n + m, dataset.dim);
    const Matrix rows = to_matrix(dataset);
    std::copy(rows.values().begin(), rows.values().end(), points.values().begin());
    std::copy(params.prototypes.values().begin(), params.prototypes.values().end(),
              points.values().begin() + static_cast<std::ptrdiff_t>(n * dataset.dim));

    const Matrix coords = tsne_embed(points, options);
    EmbeddingMap2D map;
    map.points.reserve(n + m);
    for (std::size_t i = 0; i < n + m; ++i) {
        MapPoint pt;
        pt.x = coords(i, 0);
        pt.y = coords(i, 1);
        if (i < n) {
            pt.role = PointRole::sample;
            pt.index = i;
            pt.label = dataset.labels[i];
        } else {
            pt.role = PointRole::prototype;
            pt.index = i - n;
            pt.label = projection.matches[i - n].label;
        }
        map.points.push_back(pt);
    }
    return map;
}

namespace {

ordered_json match_json(std::size_t prototype, const PrototypeMatch& m) {
    ordered_json j;
    j["prototype"] = prototype;
    j["sample_index"] = m.sample_index;
    j["similarity"] = m.similarity;
    j["label"] = m.label;
    j["text"] = m.text ? ordered_json(*m.text) : ordered_json(nullptr);
    return j;
}

}  // namespace

std::string to_json(const ProjectionResult& projection) {
    ordered_json j;
    j["similarity"] = to_string(projection.measure);
    j["num_prototypes"] = projection.matches.size();
    j["distinguishness"] = projection.distinguishness;
    j["prototypes"] = ordered_json::array();
    for (std::size_t p = 0; p < projection.matches.size(); ++p)
        j["prototypes"].push_back(match_json(p, projection.matches[p]));
    return j.dump(2);
}

std::string to_json(const ExplanationReport& r) {
    ordered_json j;
    j["sample_index"] = r.sample_index ? ordered_json(*r.sample_index) : ordered_json(nullptr);
    j["text"] = r.text ? ordered_json(*r.text) : ordered_json(nullptr);
    j["true_label"] = r.true_label ? ordered_json(*r.true_label) : ordered_json(nullptr);
    j["prediction"] = r.prediction;
    j["probs"] = r.probs;
    j["logits"] = r.logits;
    j["bias"] = r.bias;
    j["heads"] = ordered_json::array();
    for (const auto& h : r.heads) {
        ordered_json head;
        head["head"] = h.head;
        head["fallback_used"] = h.fallback_used;
        head["edges"] = ordered_json::array();
        for (const auto& e : h.edges) {
            ordered_json edge;
            edge["prototype"] = e.prototype;
            edge["alpha"] = e.alpha;
            edge["gamma"] = e.gamma;
            edge["fallback"] = e.fallback;
            edge["contribution"] = e.contribution;
            edge["margin"] = e.margin;
            head["edges"].push_back(std::move(edge));
        }
        j["heads"].push_back(std::move(head));
    }
    j["top_edge"] = {{"head", r.top_head}, {"prototype", r.top_prototype}};
    j["reconstruction_residual"] = r.reconstruction_residual;
    j["prototypes"] = ordered_json::array();
    for (const auto& [p, m] : r.prototypes) j["prototypes"].push_back(match_json(p, m));
    return j.dump(2);
}

std::string to_csv(const EmbeddingMap2D& map) {
    std::ostringstream out;
    out << "x,y,role,index,label\n";
    out << std::setprecision(17);
    for (const auto& p : map.points) {
        out << p.x << ',' << p.y << ',' << (p.role == PointRole::sample ? "sample" : "prototype") << ',' << p.index
            << ',' << p.label << '\n';
    }
    return out.str();
}

}  // namespace gaproto
