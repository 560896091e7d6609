#include "gaproto/gaproto.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <new>
#include <string>
#include <vector>

#include "gaproto/dataset.hpp"
#include "gaproto/error.hpp"
#include "gaproto/interpret.hpp"
#include "gaproto/metrics.hpp"
#include "gaproto/model.hpp"
#include "gaproto/training.hpp"

struct gp_dataset {
    gaproto::EmbeddingDataset data;
};

struct gp_model {
    gaproto::ModelParams params;
    gaproto::ModelConfig config;
};

namespace {

thread_local std::string tl_error;

void set_error(const std::string& msg) { tl_error = msg; }

gp_status status_for(gaproto::ErrorKind kind) {
    switch (kind) {
        case gaproto::ErrorKind::invalid_argument: return GP_ERR_INVALID_ARGUMENT;
        case gaproto::ErrorKind::out_of_range: return GP_ERR_OUT_OF_RANGE;
        case gaproto::ErrorKind::io: return GP_ERR_IO;
        case gaproto::ErrorKind::format: return GP_ERR_FORMAT;
        case gaproto::ErrorKind::numeric: return GP_ERR_NUMERIC;
        case gaproto::ErrorKind::internal: return GP_ERR_INTERNAL;
    }
    return GP_ERR_INTERNAL;
}

template <typename Fn>
gp_status guarded(Fn&& fn) {
    tl_error.clear();
    try {
        fn();
        return GP_OK;
    } catch (const gaproto::Error& e) {
        set_error(e.what());
        return status_for(e.kind());
    } catch (const std::bad_alloc&) {
        set_error("out of memory");
        return GP_ERR_INTERNAL;
    } catch (const std::exception& e) {
        set_error(e.what());
        return GP_ERR_INTERNAL;
    } catch (...) {
        set_error("unknown exception");
        return GP_ERR_INTERNAL;
    }
}

#define GP_CHECK_NULL(ptr)                                  \
    do {                                                    \
        if (!(ptr)) {                                       \
            set_error("null pointer: " #ptr);               \
            return GP_ERR_NULL_POINTER;                     \
        }                                                   \
    } while (0)

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.data(), s.size() + 1);
    return out;
}

gaproto::ModelConfig from_c(const gp_model_config& c) {
    gaproto::ModelConfig m;
    m.dim = c.dim;
    m.num_prototypes = c.num_prototypes;
    m.num_heads = c.num_heads;
    m.head_dim = c.head_dim;
    m.num_classes = c.num_classes;
    m.threshold = c.threshold;
    m.seed = c.seed;
    if (c.prototype_init == GP_INIT_SAMPLE) {
        m.prototype_init = gaproto::PrototypeInit::sample;
    } else if (c.prototype_init == GP_INIT_GAUSSIAN) {
        m.prototype_init = gaproto::PrototypeInit::gaussian;
    } else {
        gaproto::fail(gaproto::ErrorKind::invalid_argument, "unknown prototype_init value");
    }
    return m;
}

gp_model_config to_c(const gaproto::ModelConfig& m) {
    gp_model_config c{};
    c.dim = m.dim;
    c.num_prototypes = m.num_prototypes;
    c.num_heads = m.num_heads;
    c.head_dim = m.head_dim;
    c.num_classes = m.num_classes;
    c.threshold = m.threshold;
    c.seed = m.seed;
    c.prototype_init = m.prototype_init == gaproto::PrototypeInit::sample ? GP_INIT_SAMPLE : GP_INIT_GAUSSIAN;
    return c;
}

gaproto::TrainConfig from_c(const gp_train_config& c) {
    gaproto::TrainConfig t;
    t.learning_rate = c.learning_rate;
    t.batch_size = c.batch_size;
    t.accum_steps = c.accum_steps;
    t.epochs = c.epochs;
    t.adam_beta1 = c.adam_beta1;
    t.adam_beta2 = c.adam_beta2;
    t.adam_eps = c.adam_eps;
    t.loss_weights = {c.lambda1, c.lambda2, c.lambda3};
    t.seed = c.seed;
    t.threads = c.threads;
    if (c.prox_scope == GP_PROX_FULL) {
        t.prox_scope = gaproto::ProximityScope::full;
    } else if (c.prox_scope == GP_PROX_BATCH) {
        t.prox_scope = gaproto::ProximityScope::batch;
    } else {
        gaproto::fail(gaproto::ErrorKind::invalid_argument, "unknown prox_scope value");
    }
    return t;
}

gaproto::Similarity similarity_from_c(int32_t s) {
    if (s == GP_SIM_COSINE) return gaproto::Similarity::cosine;
    if (s == GP_SIM_NEGATIVE_EUCLIDEAN) return gaproto::Similarity::negative_euclidean;
    gaproto::fail(gaproto::ErrorKind::invalid_argument, "unknown similarity value");
}

}  // namespace

extern "C" {

int32_t gp_abi_version(void) { return GP_ABI_VERSION; }

const char* gp_last_error(void) { return tl_error.c_str(); }

const char* gp_status_name(gp_status status) {
    switch (status) {
        case GP_OK: return "ok";
        case GP_ERR_NULL_POINTER: return "null pointer";
        case GP_ERR_INVALID_ARGUMENT: return "invalid argument";
        case GP_ERR_OUT_OF_RANGE: return "out of range";
        case GP_ERR_IO: return "i/o error";
        case GP_ERR_FORMAT: return "format error";
        case GP_ERR_NUMERIC: return "numerical failure";
        case GP_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

void gp_string_free(char* str) { std::free(str); }

void gp_synthetic_spec_default(gp_synthetic_spec* spec) {
    if (!spec) return;
    const gaproto::SyntheticSpec d;
    spec->num_clusters = d.num_clusters;
    spec->per_cluster = d.per_cluster;
    spec->dim = d.dim;
    spec->center_spread = d.center_spread;
    spec->noise_sigma = d.noise_sigma;
    spec->seed = d.seed;
    spec->with_texts = d.with_texts ? 1 : 0;
}

gp_status gp_dataset_read(const char* path, gp_dataset** out) {
    GP_CHECK_NULL(path);
    GP_CHECK_NULL(out);
    *out = nullptr;
    return guarded([&] { *out = new gp_dataset{gaproto::read_gape(path)}; });
}

gp_status gp_dataset_write(const gp_dataset* dataset, const char* path) {
    GP_CHECK_NULL(dataset);
    GP_CHECK_NULL(path);
    return guarded([&] { gaproto::write_gape(dataset->data, path); });
}

gp_status gp_dataset_synthetic(const gp_synthetic_spec* spec, gp_dataset** out) {
    GP_CHECK_NULL(spec);
    GP_CHECK_NULL(out);
    *out = nullptr;
    return guarded([&] {
        gaproto::SyntheticSpec s;
        s.num_clusters = spec->num_clusters;
        s.per_cluster = spec->per_cluster;
        s.dim = spec->dim;
        s.center_spread = spec->center_spread;
        s.noise_sigma = spec->noise_sigma;
        s.seed = spec->seed;
        s.with_texts = spec->with_texts != 0;
        *out = new gp_dataset{gaproto::gen_synthetic(s)};
    });
}

gp_status gp_dataset_create(uint64_t count, uint64_t dim, uint32_t num_classes, const uint32_t* labels,
                            const float* embeddings, const char* const* texts, gp_dataset** out) {
    GP_CHECK_NULL(labels);
    GP_CHECK_NULL(embeddings);
    GP_CHECK_NULL(out);
    *out = nullptr;
    return guarded([&] {
        gaproto::EmbeddingDataset ds;
        ds.dim = dim;
        ds.num_classes = num_classes;
        ds.labels.assign(labels, labels + count);
        ds.embeddings.assign(embeddings, embeddings + count * dim);
        if (texts) {
            ds.texts.emplace();
            for (uint64_t i = 0; i < count; ++i) {
                if (!texts[i]) gaproto::fail(gaproto::ErrorKind::invalid_argument, "null text at row " + std::to_string(i));
                ds.texts->emplace_back(texts[i]);
            }
        }
        gaproto::validate(ds);
        *out = new gp_dataset{std::move(ds)};
    });
}

gp_status gp_dataset_split(const gp_dataset* dataset, double test_fraction, uint64_t seed, gp_dataset** train,
                           gp_dataset** test) {
    GP_CHECK_NULL(dataset);
    GP_CHECK_NULL(train);
    GP_CHECK_NULL(test);
    *train = nullptr;
    *test = nullptr;
    return guarded([&] {
        auto parts = gaproto::split(dataset->data, test_fraction, seed);
        auto* tr = new gp_dataset{std::move(parts.train)};
        try {
            *test = new gp_dataset{std::move(parts.test)};
        } catch (...) {
            delete tr;
            throw;
        }
        *train = tr;
    });
}

gp_status gp_dataset_info_get(const gp_dataset* dataset, gp_dataset_info* out) {
    GP_CHECK_NULL(dataset);
    GP_CHECK_NULL(out);
    out->count = dataset->data.count();
    out->dim = dataset->data.dim;
    out->num_classes = dataset->data.num_classes;
    out->has_texts = dataset->data.has_texts() ? 1 : 0;
    return GP_OK;
}

gp_status gp_dataset_row(const gp_dataset* dataset, uint64_t index, float* out, uint64_t out_len, uint32_t* label) {
    GP_CHECK_NULL(dataset);
    return guarded([&] {
        const auto& ds = dataset->data;
        if (index >= ds.count())
            gaproto::fail(gaproto::ErrorKind::out_of_range, "row " + std::to_string(index) + " out of range (dataset has " +
                                                                std::to_string(ds.count()) + " rows)");
        if (out) {
            if (out_len < ds.dim) gaproto::fail(gaproto::ErrorKind::invalid_argument, "output buffer shorter than dim");
            const auto row = ds.row(index);
            std::copy(row.begin(), row.end(), out);
        }
        if (label) *label = ds.labels[index];
    });
}

void gp_dataset_free(gp_dataset* dataset) { delete dataset; }

void gp_model_config_default(uint64_t dim, uint64_t num_classes, gp_model_config* out) {
    if (!out) return;
    *out = to_c(gaproto::ModelConfig::defaults_for(dim, num_classes));
}

void gp_train_config_default(gp_train_config* out) {
    if (!out) return;
    const gaproto::TrainConfig d;
    out->learning_rate = d.learning_rate;
    out->batch_size = d.batch_size;
    out->accum_steps = d.accum_steps;
    out->epochs = d.epochs;
    out->adam_beta1 = d.adam_beta1;
    out->adam_beta2 = d.adam_beta2;
    out->adam_eps = d.adam_eps;
    out->lambda1 = d.loss_weights.lambda1;
    out->lambda2 = d.loss_weights.lambda2;
    out->lambda3 = d.loss_weights.lambda3;
    out->seed = d.seed;
    out->threads = d.threads;
    out->prox_scope = GP_PROX_FULL;
}

gp_status gp_train(const gp_dataset* train, const gp_dataset* val, const gp_model_config* config,
                   const gp_train_config* train_config, const gp_model* init, gp_epoch_callback callback,
                   void* user_data, gp_model** out) {
    GP_CHECK_NULL(train);
    GP_CHECK_NULL(config);
    GP_CHECK_NULL(train_config);
    GP_CHECK_NULL(out);
    *out = nullptr;
    return guarded([&] {
        const auto mc = from_c(*config);
        const auto tc = from_c(*train_config);
        if (init && !(init->config.dim == mc.dim && init->config.num_prototypes == mc.num_prototypes &&
                      init->config.num_heads == mc.num_heads && init->config.head_dim == mc.head_dim &&
                      init->config.num_classes == mc.num_classes)) {
            gaproto::fail(gaproto::ErrorKind::format, "resume checkpoint shapes do not match the requested model config");
        }
        gaproto::EpochCallback on_epoch;
        if (callback) {
            on_epoch = [&](const gaproto::EpochRecord& r) {
                const std::string line = gaproto::to_json_line(r);
                gp_epoch_record rec{r.epoch,
                                    r.loss_total,
                                    r.loss_acc,
                                    r.loss_prox,
                                    r.loss_div,
                                    r.val_accuracy.value_or(std::numeric_limits<double>::quiet_NaN()),
                                    line.c_str()};
                callback(&rec, user_data);
            };
        }
        auto result = gaproto::train(train->data, val ? &val->data : nullptr, mc, tc, init ? &init->params : nullptr,
                                     on_epoch);
        *out = new gp_model{std::move(result.params), mc};
    });
}

gp_status gp_model_load(const char* path, gp_model** out) {
    GP_CHECK_NULL(path);
    GP_CHECK_NULL(out);
    *out = nullptr;
    return guarded([&] {
        auto [params, config] = gaproto::load_checkpoint(path);
        *out = new gp_model{std::move(params), config};
    });
}

gp_status gp_model_save(const gp_model* model, const char* path) {
    GP_CHECK_NULL(model);
    GP_CHECK_NULL(path);
    return guarded([&] { gaproto::save_checkpoint(model->params, model->config, path); });
}

gp_status gp_model_config_get(const gp_model* model, gp_model_config* out) {
    GP_CHECK_NULL(model);
    GP_CHECK_NULL(out);
    *out = to_c(model->config);
    return GP_OK;
}

void gp_model_free(gp_model* model) { delete model; }

gp_status gp_model_predict(const gp_model* model, const double* embedding, uint64_t dim, uint32_t* label,
                           double* probs, uint64_t probs_len) {
    GP_CHECK_NULL(model);
    GP_CHECK_NULL(embedding);
    return guarded([&] {
        if (dim != model->config.dim)
            gaproto::fail(gaproto::ErrorKind::format, "input dimension " + std::to_string(dim) + " does not match model dimension " +
                                                          std::to_string(model->config.dim));
        const auto pred = gaproto::predict(model->params, model->config, std::span<const double>(embedding, dim));
        if (label) *label = static_cast<uint32_t>(pred.label);
        if (probs) {
            if (probs_len < pred.probs.size())
                gaproto::fail(gaproto::ErrorKind::invalid_argument, "probability buffer shorter than num_classes");
            std::copy(pred.probs.begin(), pred.probs.end(), probs);
        }
    });
}

gp_status gp_evaluate(const gp_model* model, const gp_dataset* data, char** json) {
    GP_CHECK_NULL(model);
    GP_CHECK_NULL(data);
    GP_CHECK_NULL(json);
    *json = nullptr;
    return guarded([&] { *json = dup_string(gaproto::to_json(gaproto::evaluate(model->params, model->config, data->data))); });
}

gp_status gp_project(const gp_model* model, const gp_dataset* data, int32_t similarity, char** json) {
    GP_CHECK_NULL(model);
    GP_CHECK_NULL(data);
    GP_CHECK_NULL(json);
    *json = nullptr;
    return guarded([&] {
        const auto projection = gaproto::project_prototypes(model->params, data->data, similarity_from_c(similarity));
        *json = dup_string(gaproto::to_json(projection));
    });
}

gp_status gp_explain(const gp_model* model, const gp_dataset* basis, const gp_dataset* data, uint64_t index,
                     int32_t similarity, char** json) {
    GP_CHECK_NULL(model);
    GP_CHECK_NULL(basis);
    GP_CHECK_NULL(data);
    GP_CHECK_NULL(json);
    *json = nullptr;
    return guarded([&] {
        const auto& ds = data->data;
        if (index >= ds.count())
            gaproto::fail(gaproto::ErrorKind::out_of_range, "sample index " + std::to_string(index) +
                                                                " out of range (dataset has " + std::to_string(ds.count()) + " rows)");
        if (ds.dim != model->config.dim)
            gaproto::fail(gaproto::ErrorKind::format, "dataset dimension does not match the model");
        const auto projection = gaproto::project_prototypes(model->params, basis->data, similarity_from_c(similarity));
        const auto row = ds.row(index);
        const std::vector<double> s(row.begin(), row.end());
        gaproto::ExplainInput input;
        input.sample_index = index;
        input.true_label = ds.labels[index];
        if (ds.texts) input.text = (*ds.texts)[index];
        *json = dup_string(gaproto::to_json(gaproto::explain(model->params, model->config, s, projection, input)));
    });
}

gp_status gp_prototype_map(const gp_model* model, const gp_dataset* data, double perplexity, uint64_t iterations,
                           uint64_t seed, char** csv) {
    GP_CHECK_NULL(model);
    GP_CHECK_NULL(data);
    GP_CHECK_NULL(csv);
    *csv = nullptr;
    return guarded([&] {
        const gaproto::TsneOptions options{perplexity, iterations, seed};
        *csv = dup_string(gaproto::to_csv(gaproto::prototype_map(model->params, data->data, options)));
    });
}

void gp_gradcheck_config_default(gp_gradcheck_config* out) {
    if (!out) return;
    out->dim = 8;
    out->num_prototypes = 5;
    out->num_heads = 2;
    out->head_dim = 4;
    out->num_classes = 2;
    out->num_samples = 10;
    out->threshold = 0.5;
    out->lambda1 = 1.0;
    out->lambda2 = 0.1;
    out->lambda3 = 0.1;
    out->epsilon = 1e-4;
    out->seed = 0;
}

gp_status gp_gradcheck(const gp_gradcheck_config* config, gp_gradcheck_result* out) {
    GP_CHECK_NULL(config);
    GP_CHECK_NULL(out);
    return guarded([&] {
        gaproto::ModelConfig mc;
        mc.dim = config->dim;
        mc.num_prototypes = config->num_prototypes;
        mc.num_heads = config->num_heads;
        mc.head_dim = config->head_dim;
        mc.num_classes = config->num_classes;
        mc.threshold = config->threshold;
        mc.seed = config->seed;
        const auto problem = gaproto::make_gradcheck_problem(mc, config->num_samples);
        const gaproto::LossWeights w{config->lambda1, config->lambda2, config->lambda3};
        const auto report = gaproto::finite_diff_check(problem.params, problem.config, problem.batch, problem.embeddings,
                                                       w, config->epsilon, config->seed);
        out->max_relative_error = report.max_relative_error;
        out->checked = report.checked;
        out->excluded = report.excluded;
    });
}

}  // extern "C"
