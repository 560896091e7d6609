#include "gaproto/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "gaproto/error.hpp"
#include "json.hpp"

namespace gaproto {

namespace {

constexpr double kProbFloor = 1e-12;

void add_into(ModelParams& dst, const ModelParams& src) {
    auto src_tensors = std::vector<std::span<const double>>{};
    for_each_tensor(src, [&](const std::string&, const auto&, std::span<const double> v) { src_tensors.push_back(v); });
    std::size_t t = 0;
    for_each_tensor(dst, [&](const std::string&, const auto&, std::span<double> v) {
        const auto s = src_tensors[t++];
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += s[i];
    });
}

void check_finite(const GradientSet& g) {
    for_each_tensor(g, [](const std::string& name, const auto&, std::span<const double> v) {
        if (!all_finite(v)) fail(ErrorKind::numeric, "non-finite gradient in tensor '" + name + "'");
    });
}

// Accuracy-term gradients for a run of samples. Key gradients are collected
// per head and pushed through W^k and the prototypes once at the end.
struct AccuracyAccumulator {
    GradientSet grads;
    std::vector<Matrix> key_grads;
    double loss = 0.0;

    explicit AccuracyAccumulator(const ModelConfig& c)
        : grads(GradientSet::zeros(c)), key_grads(c.num_heads, Matrix(c.num_prototypes, c.head_dim)) {}

    void add_sample(const ModelParams& params, const ModelConfig& config, const std::vector<Matrix>& keys,
                    std::span<const double> s, std::uint32_t label, double scale) {
        const ForwardTrace trace = forward(params, config, keys, s);
        const double p_true = trace.probs[label];
        loss += -std::log(std::max(p_true, kProbFloor));
        if (p_true < kProbFloor || scale == 0.0) return;  // clamped: locally constant

        const std::size_t classes = config.num_classes;
        const std::size_t dk = config.head_dim;
        std::vector<double> dlogits(classes);
        for (std::size_t c = 0; c < classes; ++c) dlogits[c] = scale * (trace.probs[c] - (c == label ? 1.0 : 0.0));
        for (std::size_t c = 0; c < classes; ++c) grads.out_bias[c] += dlogits[c];
        add_outer(grads.out_weight, 1.0, dlogits, trace.concat);
        std::vector<double> dconcat(config.concat_dim(), 0.0);
        matvec_transposed_add(params.out_weight, dlogits, dconcat);

        std::vector<double> dq(dk);
        for (std::size_t i = 0; i < config.num_heads; ++i) {
            const HeadTrace& h = trace.heads[i];
            const std::span<const double> dmixed(dconcat.data() + i * dk, dk);
            Matrix& dkeys = key_grads[i];

            // r = sum_n gamma_n k_n over the (frozen) neighborhood.
            std::vector<double> dgamma(h.neighborhood.size());
            double weighted = 0.0;
            double alpha_sum = 0.0;
            for (std::size_t n = 0; n < h.neighborhood.size(); ++n) {
                const std::size_t j = h.neighborhood[n];
                dgamma[n] = dot(dmixed, h.keys.row(j));
                weighted += h.gammas[n] * dgamma[n];
                alpha_sum += h.alphas[j];
                auto dk_row = dkeys.row(j);
                for (std::size_t t = 0; t < dk; ++t) dk_row[t] += h.gammas[n] * dmixed[t];
            }

            std::fill(dq.begin(), dq.end(), 0.0);
            for (std::size_t n = 0; n < h.neighborhood.size(); ++n) {
                const std::size_t j = h.neighborhood[n];
                const double alpha = h.alphas[j];
                const double dalpha = (dgamma[n] - weighted) / alpha_sum;
                const double dsim = attention_saturated(alpha) ? 0.0 : dalpha * alpha * (1.0 - alpha);
                const double dscaled = dsim / static_cast<double>(dk);
                const auto k = h.keys.row(j);
                auto dk_row = dkeys.row(j);
                for (std::size_t t = 0; t < dk; ++t) {
                    dq[t] += dscaled * k[t];
                    dk_row[t] += dscaled * h.query[t];
                }
            }
            add_outer(grads.wq[i], 1.0, dq, s);
        }
    }

    // k_ij = W^k_i p_j: dW^k_i += dk_ij p_j^T, dp_j += W^k_i^T dk_ij.
    void flush_keys(const ModelParams& params) {
        for (std::size_t i = 0; i < key_grads.size(); ++i) {
            for (std::size_t j = 0; j < key_grads[i].rows(); ++j) {
                const auto dk = key_grads[i].row(j);
                add_outer(grads.wk[i], 1.0, dk, params.prototypes.row(j));
                matvec_transposed_add(params.wk[i], dk, grads.prototypes.row(j));
            }
            key_grads[i].fill(0.0);
        }
    }
};

double diversity_or_zero(const Matrix& prototypes, double lambda3) {
    if (prototypes.rows() < 2 && lambda3 == 0.0) return 0.0;
    return loss_diversity(prototypes);
}

// Adds lambda2 * dProx + lambda3 * dDiv to the prototype gradient.
void add_regularizer_gradient(const Matrix& prototypes, const Matrix& embeddings, const ProximityLoss& prox,
                              const LossWeights& w, GradientSet& g) {
    const std::size_t m = prototypes.rows();
    const std::size_t d = prototypes.cols();
    if (w.lambda2 != 0.0) {
        const double scale = w.lambda2 * 2.0 / static_cast<double>(m);
        for (std::size_t j = 0; j < m; ++j) {
            const auto p = prototypes.row(j);
            const auto s = embeddings.row(prox.argmins[j]);
            auto gj = g.prototypes.row(j);
            for (std::size_t t = 0; t < d; ++t) gj[t] += scale * (p[t] - s[t]);
        }
    }
    if (w.lambda3 != 0.0 && m >= 2) {
        const double scale = -w.lambda3 * 2.0 / static_cast<double>(m * (m - 1));
        std::vector<double> diff(d);
        for (std::size_t j = 0; j < m; ++j) {
            auto gj = g.prototypes.row(j);
            for (std::size_t k = 0; k < m; ++k) {
                if (k == j) continue;
                for (std::size_t t = 0; t < d; ++t) diff[t] = prototypes(j, t) - prototypes(k, t);
                const double dist = norm(diff);
                if (dist == 0.0) continue;
                for (std::size_t t = 0; t < d; ++t) gj[t] += scale * diff[t] / dist;
            }
        }
    }
}

}  // namespace

void validate(const LossWeights& w) {
    require(w.lambda1 >= 0.0 && w.lambda2 >= 0.0 && w.lambda3 >= 0.0, "loss weights must be non-negative");
    require(w.lambda1 > 0.0 || w.lambda2 > 0.0 || w.lambda3 > 0.0, "at least one loss weight must be positive");
}

Batch make_batch(const Matrix& rows, std::span<const std::uint32_t> labels, std::span<const std::size_t> indices) {
    Batch b;
    b.embeddings = Matrix(indices.size(), rows.cols());
    b.labels.reserve(indices.size());
    for (std::size_t n = 0; n < indices.size(); ++n) {
        const auto src = rows.row(indices[n]);
        std::copy(src.begin(), src.end(), b.embeddings.row(n).begin());
        b.labels.push_back(labels[indices[n]]);
    }
    return b;
}

Batch make_batch(const EmbeddingDataset& dataset) { return Batch{to_matrix(dataset), dataset.labels}; }

double loss_accuracy(const Matrix& probs, std::span<const std::uint32_t> labels) {
    require(probs.rows() == labels.size(), "probability rows and labels differ in count");
    double loss = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] < probs.cols(), "label out of range");
        loss += -std::log(std::max(probs(i, labels[i]), kProbFloor));
    }
    return loss;
}

ProximityLoss loss_proximity(const Matrix& prototypes, const Matrix& embeddings) {
    require(embeddings.rows() > 0, "proximity loss needs at least one sample");
    require(embeddings.cols() == prototypes.cols(), "prototype and sample dimensions differ");
    ProximityLoss out;
    out.argmins.resize(prototypes.rows());
    double sum = 0.0;
    for (std::size_t j = 0; j < prototypes.rows(); ++j) {
        double best = squared_distance(prototypes.row(j), embeddings.row(0));
        std::size_t best_i = 0;
        for (std::size_t i = 1; i < embeddings.rows(); ++i) {
            const double dist = squared_distance(prototypes.row(j), embeddings.row(i));
            if (dist < best) {
                best = dist;
                best_i = i;
            }
        }
        out.argmins[j] = best_i;
        sum += best;
    }
    out.value = sum / static_cast<double>(prototypes.rows());
    return out;
}

double loss_diversity(const Matrix& prototypes) {
    const std::size_t m = prototypes.rows();
    require(m >= 2, "diversity loss needs at least 2 prototypes");
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < m; ++k)
            if (k != j) sum += std::sqrt(squared_distance(prototypes.row(j), prototypes.row(k)));
    return -sum / static_cast<double>(m * (m - 1));
}

LossBreakdown composite_loss(const ModelParams& params, const ModelConfig& config, const Batch& batch,
                             const Matrix& embeddings, const LossWeights& w) {
    const auto keys = compute_keys(params);
    Matrix probs(batch.size(), config.num_classes);
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const auto trace = forward(params, config, keys, batch.embeddings.row(n));
        std::copy(trace.probs.begin(), trace.probs.end(), probs.row(n).begin());
    }
    LossBreakdown out;
    out.acc = loss_accuracy(probs, batch.labels);
    auto prox = loss_proximity(params.prototypes, embeddings);
    out.prox = prox.value;
    out.prox_argmins = std::move(prox.argmins);
    out.div = diversity_or_zero(params.prototypes, w.lambda3);
    out.total = w.lambda1 * out.acc + w.lambda2 * out.prox + w.lambda3 * out.div;
    return out;
}

BackwardResult backward(const ModelParams& params, const ModelConfig& config, const Batch& batch,
                        const Matrix& embeddings, const LossWeights& w) {
    require(batch.size() > 0, "backward needs a non-empty batch");
    check_shapes(params, config);
    const auto keys = compute_keys(params);

    AccuracyAccumulator acc(config);
    for (std::size_t n = 0; n < batch.size(); ++n)
        acc.add_sample(params, config, keys, batch.embeddings.row(n), batch.labels[n], w.lambda1);
    acc.flush_keys(params);

    BackwardResult out{{}, std::move(acc.grads)};
    auto prox = loss_proximity(params.prototypes, embeddings);
    add_regularizer_gradient(params.prototypes, embeddings, prox, w, out.grads);

    out.loss.acc = acc.loss;
    out.loss.prox = prox.value;
    out.loss.prox_argmins = std::move(prox.argmins);
    out.loss.div = diversity_or_zero(params.prototypes, w.lambda3);
    out.loss.total = w.lambda1 * out.loss.acc + w.lambda2 * out.loss.prox + w.lambda3 * out.loss.div;
    check_finite(out.grads);
    return out;
}

BackwardResult accumulated_gradient(const ModelParams& params, const ModelConfig& config,
                                    std::span<const Batch> micro_batches, const Matrix& embeddings,
                                    const LossWeights& w, unsigned threads) {
    check_shapes(params, config);
    struct SampleRef {
        const Batch* batch;
        std::size_t row;
    };
    std::vector<SampleRef> samples;
    for (const auto& b : micro_batches)
        for (std::size_t r = 0; r < b.size(); ++r) samples.push_back({&b, r});
    require(!samples.empty(), "accumulated gradient needs at least one sample");

    const auto keys = compute_keys(params);
    const double scale = w.lambda1 / static_cast<double>(samples.size());
    const std::size_t chunks = std::clamp<std::size_t>(threads, 1, samples.size());

    auto run_chunk = [&](std::size_t c, AccuracyAccumulator& acc) {
        const std::size_t begin = samples.size() * c / chunks;
        const std::size_t end = samples.size() * (c + 1) / chunks;
        for (std::size_t n = begin; n < end; ++n) {
            const auto& ref = samples[n];
            acc.add_sample(params, config, keys, ref.batch->embeddings.row(ref.row), ref.batch->labels[ref.row], scale);
        }
    };

    std::vector<AccuracyAccumulator> partial(chunks, AccuracyAccumulator(config));
    if (chunks == 1) {
        run_chunk(0, partial[0]);
    } else {
        std::vector<std::thread> workers;
        workers.reserve(chunks);
        for (std::size_t c = 0; c < chunks; ++c) workers.emplace_back(run_chunk, c, std::ref(partial[c]));
        for (auto& t : workers) t.join();
    }
    for (std::size_t c = 1; c < chunks; ++c) {
        add_into(partial[0].grads, partial[c].grads);
        for (std::size_t i = 0; i < config.num_heads; ++i) {
            auto dst = partial[0].key_grads[i].values();
            const auto src = partial[c].key_grads[i].values();
            for (std::size_t t = 0; t < dst.size(); ++t) dst[t] += src[t];
        }
        partial[0].loss += partial[c].loss;
    }
    AccuracyAccumulator& acc = partial[0];
    acc.flush_keys(params);

    BackwardResult out{{}, std::move(acc.grads)};
    auto prox = loss_proximity(params.prototypes, embeddings);
    add_regularizer_gradient(params.prototypes, embeddings, prox, w, out.grads);
    out.loss.acc = acc.loss / static_cast<double>(samples.size());
    out.loss.prox = prox.value;
    out.loss.prox_argmins = std::move(prox.argmins);
    out.loss.div = diversity_or_zero(params.prototypes, w.lambda3);
    out.loss.total = w.lambda1 * out.loss.acc + w.lambda2 * out.loss.prox + w.lambda3 * out.loss.div;
    check_finite(out.grads);
    return out;
}

namespace {

// Discrete choices of the forward pass. The loss is smooth only while these stay put.
std::vector<std::size_t> structure_signature(const ModelParams& params, const ModelConfig& config, const Batch& batch,
                                             const Matrix& embeddings) {
    std::vector<std::size_t> sig;
    const auto keys = compute_keys(params);
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const auto trace = forward(params, config, keys, batch.embeddings.row(n));
        for (const auto& h : trace.heads) {
            sig.push_back(h.fallback_used ? 1 : 0);
            sig.push_back(h.neighborhood.size());
            sig.insert(sig.end(), h.neighborhood.begin(), h.neighborhood.end());
        }
        sig.push_back(trace.probs[batch.labels[n]] < kProbFloor ? 1 : 0);
    }
    const auto prox = loss_proximity(params.prototypes, embeddings);
    sig.insert(sig.end(), prox.argmins.begin(), prox.argmins.end());
    return sig;
}

}  // namespace

GradCheckReport finite_diff_check(const ModelParams& params, const ModelConfig& config, const Batch& batch,
                                  const Matrix& embeddings, const LossWeights& w, double epsilon, std::uint64_t seed,
                                  std::size_t coords_per_tensor) {
    require(epsilon >= 1e-5 && epsilon <= 1e-2, "finite-difference epsilon must lie in [1e-5, 1e-2]");
    const auto analytic = backward(params, config, batch, embeddings, w).grads;
    const auto base_sig = structure_signature(params, config, batch, embeddings);

    std::vector<std::span<const double>> grad_tensors;
    for_each_tensor(analytic, [&](const std::string&, const auto&, std::span<const double> v) { grad_tensors.push_back(v); });

    ModelParams probe = params;
    std::mt19937_64 rng(seed);
    GradCheckReport report;
    std::size_t tensor_index = 0;
    for_each_tensor(probe, [&](const std::string& name, const auto&, std::span<double> values) {
        const auto grad = grad_tensors[tensor_index++];
        std::vector<std::size_t> coords(values.size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (coords.size() > coords_per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(coords_per_tensor);
            std::sort(coords.begin(), coords.end());
        }
        for (std::size_t idx : coords) {
            const double original = values[idx];
            values[idx] = original + epsilon;
            const double plus = composite_loss(probe, config, batch, embeddings, w).total;
            const bool plus_same = structure_signature(probe, config, batch, embeddings) == base_sig;
            values[idx] = original - epsilon;
            const double minus = composite_loss(probe, config, batch, embeddings, w).total;
            const bool minus_same = structure_signature(probe, config, batch, embeddings) == base_sig;
            values[idx] = original;
            if (!plus_same || !minus_same) {
                ++report.excluded;
                continue;
            }
            const double numeric = (plus - minus) / (2.0 * epsilon);
            const double rel = std::abs(grad[idx] - numeric) / std::max(1e-8, std::abs(grad[idx]) + std::abs(numeric));
            ++report.checked;
            if (rel > report.max_relative_error) {
                report.max_relative_error = rel;
                report.worst_tensor = name;
                report.worst_index = idx;
            }
        }
    });
    return report;
}

GradCheckProblem make_gradcheck_problem(const ModelConfig& config, std::size_t num_samples) {
    validate(config);
    require(num_samples >= config.num_prototypes, "gradient check needs at least as many samples as prototypes");
    SyntheticSpec spec;
    spec.num_clusters = static_cast<std::uint32_t>(config.num_classes);
    spec.per_cluster = (num_samples + config.num_classes - 1) / config.num_classes;
    spec.dim = config.dim;
    spec.center_spread = 1.0;
    spec.noise_sigma = 0.5;
    spec.seed = config.seed;
    auto data = gen_synthetic(spec);
    std::vector<std::size_t> keep(num_samples);
    std::iota(keep.begin(), keep.end(), std::size_t{0});
    // Interleave clusters so every class is present even when N is not a multiple of C.
    for (std::size_t n = 0; n < num_samples; ++n)
        keep[n] = (n % config.num_classes) * spec.per_cluster + n / config.num_classes;
    data = select_rows(data, keep);

    GradCheckProblem problem;
    problem.config = config;
    problem.config.prototype_init = PrototypeInit::sample;
    problem.embeddings = to_matrix(data);
    problem.batch = Batch{problem.embeddings, data.labels};
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    problem.params = init_params(problem.config, &problem.embeddings, rng);
    // Nonzero bias so the output layer is not at a symmetric point.
    std::normal_distribution<double> noise(0.0, 0.1);
    for (auto& b : problem.params.out_bias) b = noise(rng);
    return problem;
}

void validate(const TrainConfig& c) {
    require(c.learning_rate > 0.0 && std::isfinite(c.learning_rate), "learning rate must be positive");
    require(c.batch_size > 0, "batch size must be positive");
    require(c.accum_steps > 0, "accumulation steps must be positive");
    require(c.epochs > 0, "epochs must be positive");
    require(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0, "adam beta1 must lie in [0, 1)");
    require(c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0, "adam beta2 must lie in [0, 1)");
    require(c.adam_eps > 0.0, "adam epsilon must be positive");
    require(c.threads > 0, "thread count must be positive");
    validate(c.loss_weights);
}

AdamState AdamState::zeros(const ModelConfig& config) {
    return AdamState{0, GradientSet::zeros(config), GradientSet::zeros(config)};
}

void adam_step(ModelParams& params, const GradientSet& grads, AdamState& state, const TrainConfig& config) {
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double b1 = config.adam_beta1;
    const double b2 = config.adam_beta2;
    const double correction1 = 1.0 - std::pow(b1, t);
    const double correction2 = 1.0 - std::pow(b2, t);

    std::vector<std::span<const double>> g;
    std::vector<std::span<double>> m;
    std::vector<std::span<double>> v;
    for_each_tensor(grads, [&](const std::string&, const auto&, std::span<const double> x) { g.push_back(x); });
    for_each_tensor(state.first_moment, [&](const std::string&, const auto&, std::span<double> x) { m.push_back(x); });
    for_each_tensor(state.second_moment, [&](const std::string&, const auto&, std::span<double> x) { v.push_back(x); });

    std::size_t k = 0;
    for_each_tensor(params, [&](const std::string& name, const auto&, std::span<double> p) {
        if (g[k].size() != p.size()) fail(ErrorKind::invalid_argument, "gradient shape mismatch for '" + name + "'");
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[k][i] = b1 * m[k][i] + (1.0 - b1) * g[k][i];
            v[k][i] = b2 * v[k][i] + (1.0 - b2) * g[k][i] * g[k][i];
            const double m_hat = m[k][i] / correction1;
            const double v_hat = v[k][i] / correction2;
            p[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_eps);
        }
        ++k;
    });
}

std::string to_json_line(const EpochRecord& r) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["loss_total"] = r.loss_total;
    j["loss_acc"] = r.loss_acc;
    j["loss_prox"] = r.loss_prox;
    j["loss_div"] = r.loss_div;
    j["val_accuracy"] = r.val_accuracy ? nlohmann::ordered_json(*r.val_accuracy) : nlohmann::ordered_json(nullptr);
    return j.dump();
}

double accuracy(const ModelParams& params, const ModelConfig& config, const EmbeddingDataset& dataset) {
    require(dataset.dim == config.dim, "dataset dimension does not match the model");
    const auto keys = compute_keys(params);
    std::size_t correct = 0;
    std::vector<double> s(dataset.dim);
    for (std::size_t i = 0; i < dataset.count(); ++i) {
        const auto row = dataset.row(i);
        std::copy(row.begin(), row.end(), s.begin());
        const auto trace = forward(params, config, keys, s);
        if (argmax(trace.probs) == dataset.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.count());
}

namespace {

void check_compatible(const EmbeddingDataset& ds, const ModelConfig& config, const std::string& role) {
    validate(ds);
    if (ds.dim != config.dim)
        fail(ErrorKind::format, role + " set has dimension " + std::to_string(ds.dim) + ", model expects " +
                                    std::to_string(config.dim));
    if (ds.num_classes != config.num_classes)
        fail(ErrorKind::format, role + " set has " + std::to_string(ds.num_classes) + " classes, model expects " +
                                    std::to_string(config.num_classes));
}

bool params_finite(const ModelParams& p) {
    bool ok = true;
    for_each_tensor(p, [&](const std::string&, const auto&, std::span<const double> v) { ok = ok && all_finite(v); });
    return ok;
}

}  // namespace

TrainResult train(const EmbeddingDataset& train_set, const EmbeddingDataset* val_set, const ModelConfig& model_config,
                  const TrainConfig& train_config, const ModelParams* initial, const EpochCallback& on_epoch) {
    validate(model_config);
    validate(train_config);
    check_compatible(train_set, model_config, "training");
    if (val_set) check_compatible(*val_set, model_config, "validation");

    const Matrix rows = to_matrix(train_set);
    TrainResult result;
    if (initial) {
        check_shapes(*initial, model_config);
        result.params = *initial;
    } else {
        std::mt19937_64 init_rng(model_config.seed);
        result.params = init_params(model_config, &rows, init_rng);
    }
    ModelParams& params = result.params;
    AdamState state = AdamState::zeros(model_config);
    std::mt19937_64 rng(train_config.seed);

    std::vector<std::size_t> order(train_set.count());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t step_samples = train_config.batch_size * train_config.accum_steps;

    for (std::size_t epoch = 1; epoch <= train_config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double acc_sum = 0.0;
        double prox_sum = 0.0;
        double div_sum = 0.0;
        std::size_t steps = 0;

        for (std::size_t start = 0; start < order.size(); start += step_samples) {
            const std::size_t stop = std::min(order.size(), start + step_samples);
            std::vector<Batch> micro;
            for (std::size_t b = start; b < stop; b += train_config.batch_size) {
                const std::size_t e = std::min(stop, b + train_config.batch_size);
                micro.push_back(make_batch(rows, train_set.labels, std::span(order).subspan(b, e - b)));
            }
            const std::string where = "epoch " + std::to_string(epoch) + " (last good epoch " +
                                      std::to_string(epoch - 1) + ")";
            BackwardResult step;
            try {
                if (train_config.prox_scope == ProximityScope::full) {
                    step = accumulated_gradient(params, model_config, micro, rows, train_config.loss_weights,
                                                train_config.threads);
                } else {
                    const Batch pool = make_batch(rows, train_set.labels, std::span(order).subspan(start, stop - start));
                    step = accumulated_gradient(params, model_config, micro, pool.embeddings, train_config.loss_weights,
                                                train_config.threads);
                }
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::numeric) fail(ErrorKind::numeric, std::string(e.what()) + " at " + where);
                throw;
            }
            if (!std::isfinite(step.loss.total)) fail(ErrorKind::numeric, "non-finite loss at " + where);
            adam_step(params, step.grads, state, train_config);
            if (!params_finite(params)) fail(ErrorKind::numeric, "non-finite parameters at " + where);

            acc_sum += step.loss.acc * static_cast<double>(stop - start);
            prox_sum += step.loss.prox;
            div_sum += step.loss.div;
            ++steps;
        }

        EpochRecord record;
        record.epoch = epoch;
        record.loss_acc = acc_sum / static_cast<double>(order.size());
        record.loss_prox = prox_sum / static_cast<double>(steps);
        record.loss_div = div_sum / static_cast<double>(steps);
        const auto& w = train_config.loss_weights;
        record.loss_total = w.lambda1 * record.loss_acc + w.lambda2 * record.loss_prox + w.lambda3 * record.loss_div;
        if (val_set) record.val_accuracy = accuracy(params, model_config, *val_set);
        result.history.push_back(record);
        if (on_epoch) on_epoch(record);
    }
    return result;
}

}  // namespace gaproto
