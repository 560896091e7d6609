/* C interface to the gaproto library.
 *
 * Objects are opaque handles created by gp_*_create/read/load functions and
 * released with the matching gp_*_free. Every fallible call returns a
 * gp_status; on failure gp_last_error() describes the problem (the message is
 * thread-local and valid until the next call on the same thread). Strings
 * returned through `char**` out-parameters are owned by the caller and must
 * be released with gp_string_free.
 */
#ifndef GAPROTO_H
#define GAPROTO_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(GAPROTO_BUILDING_LIBRARY)
#    define GP_API __declspec(dllexport)
#  else
#    define GP_API __declspec(dllimport)
#  endif
#else
#  define GP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

#define GP_ABI_VERSION 1

typedef enum gp_status {
    GP_OK = 0,
    GP_ERR_NULL_POINTER = 1,
    GP_ERR_INVALID_ARGUMENT = 2,
    GP_ERR_OUT_OF_RANGE = 3,
    GP_ERR_IO = 4,
    GP_ERR_FORMAT = 5,
    GP_ERR_NUMERIC = 6,
    GP_ERR_INTERNAL = 7
} gp_status;

typedef enum gp_prototype_init { GP_INIT_SAMPLE = 0, GP_INIT_GAUSSIAN = 1 } gp_prototype_init;
typedef enum gp_similarity { GP_SIM_COSINE = 0, GP_SIM_NEGATIVE_EUCLIDEAN = 1 } gp_similarity;
typedef enum gp_prox_scope { GP_PROX_FULL = 0, GP_PROX_BATCH = 1 } gp_prox_scope;

typedef struct gp_dataset gp_dataset;
typedef struct gp_model gp_model;

GP_API int32_t gp_abi_version(void);
GP_API const char* gp_last_error(void);
GP_API const char* gp_status_name(gp_status status);
GP_API void gp_string_free(char* str);

/* ---- datasets (GAPE1 files) ---- */

typedef struct gp_dataset_info {
    uint64_t count;
    uint64_t dim;
    uint32_t num_classes;
    int32_t has_texts;
} gp_dataset_info;

typedef struct gp_synthetic_spec {
    uint32_t num_clusters;
    uint64_t per_cluster;
    uint64_t dim;
    double center_spread;
    double noise_sigma;
    uint64_t seed;
    int32_t with_texts;
} gp_synthetic_spec;

GP_API void gp_synthetic_spec_default(gp_synthetic_spec* spec);

GP_API gp_status gp_dataset_read(const char* path, gp_dataset** out);
GP_API gp_status gp_dataset_write(const gp_dataset* dataset, const char* path);
GP_API gp_status gp_dataset_synthetic(const gp_synthetic_spec* spec, gp_dataset** out);
/* Build from caller arrays: labels[count], embeddings[count * dim], texts may be NULL. */
GP_API gp_status gp_dataset_create(uint64_t count, uint64_t dim, uint32_t num_classes, const uint32_t* labels,
                                   const float* embeddings, const char* const* texts, gp_dataset** out);
GP_API gp_status gp_dataset_split(const gp_dataset* dataset, double test_fraction, uint64_t seed, gp_dataset** train,
                                  gp_dataset** test);
GP_API gp_status gp_dataset_info_get(const gp_dataset* dataset, gp_dataset_info* out);
GP_API gp_status gp_dataset_row(const gp_dataset* dataset, uint64_t index, float* out, uint64_t out_len,
                                uint32_t* label);
GP_API void gp_dataset_free(gp_dataset* dataset);

/* ---- models (GAPC1 checkpoints) ---- */

typedef struct gp_model_config {
    uint64_t dim;
    uint64_t num_prototypes;
    uint64_t num_heads;
    uint64_t head_dim;
    uint64_t num_classes;
    double threshold;
    uint64_t seed;
    int32_t prototype_init; /* gp_prototype_init */
} gp_model_config;

/* M = 20, H = 4, head_dim = ceil(dim / H), threshold = 0.5, sample init, seed 0. */
GP_API void gp_model_config_default(uint64_t dim, uint64_t num_classes, gp_model_config* out);

typedef struct gp_train_config {
    double learning_rate;
    uint64_t batch_size;
    uint64_t accum_steps;
    uint64_t epochs;
    double adam_beta1;
    double adam_beta2;
    double adam_eps;
    double lambda1;
    double lambda2;
    double lambda3;
    uint64_t seed;
    uint32_t threads;
    int32_t prox_scope; /* gp_prox_scope */
} gp_train_config;

/* lr 1e-4, batch 4, accum 64, 200 epochs, Adam (0.9, 0.999, 1e-8), lambdas (1, 0.1, 0.1). */
GP_API void gp_train_config_default(gp_train_config* out);

typedef struct gp_epoch_record {
    uint64_t epoch;
    double loss_total;
    double loss_acc;
    double loss_prox;
    double loss_div;
    double val_accuracy;    /* NaN when no validation set */
    const char* json_line;  /* history record, valid during the callback only */
} gp_epoch_record;

typedef void (*gp_epoch_callback)(const gp_epoch_record* record, void* user_data);

/* val may be NULL. init may be NULL; otherwise training resumes from its
 * parameters and its config must agree with `config` on every shape. */
GP_API gp_status gp_train(const gp_dataset* train, const gp_dataset* val, const gp_model_config* config,
                          const gp_train_config* train_config, const gp_model* init, gp_epoch_callback callback,
                          void* user_data, gp_model** out);

GP_API gp_status gp_model_load(const char* path, gp_model** out);
GP_API gp_status gp_model_save(const gp_model* model, const char* path);
GP_API gp_status gp_model_config_get(const gp_model* model, gp_model_config* out);
GP_API void gp_model_free(gp_model* model);

/* probs may be NULL; otherwise it receives num_classes values. */
GP_API gp_status gp_model_predict(const gp_model* model, const double* embedding, uint64_t dim, uint32_t* label,
                                  double* probs, uint64_t probs_len);

/* ---- evaluation and interpretation; JSON/CSV returned as owned strings ---- */

GP_API gp_status gp_evaluate(const gp_model* model, const gp_dataset* data, char** json);
GP_API gp_status gp_project(const gp_model* model, const gp_dataset* data, int32_t similarity, char** json);
/* Prototypes are projected onto `basis`; the explained input is row `index` of `data`. */
GP_API gp_status gp_explain(const gp_model* model, const gp_dataset* basis, const gp_dataset* data, uint64_t index,
                            int32_t similarity, char** json);
/* t-SNE of the rows of `data` followed by the prototypes; CSV `x,y,role,index,label`. */
GP_API gp_status gp_prototype_map(const gp_model* model, const gp_dataset* data, double perplexity,
                                  uint64_t iterations, uint64_t seed, char** csv);

/* ---- gradient check on a generated instance ---- */

typedef struct gp_gradcheck_config {
    uint64_t dim;
    uint64_t num_prototypes;
    uint64_t num_heads;
    uint64_t head_dim;
    uint64_t num_classes;
    uint64_t num_samples;
    double threshold;
    double lambda1;
    double lambda2;
    double lambda3;
    double epsilon;
    uint64_t seed;
} gp_gradcheck_config;

typedef struct gp_gradcheck_result {
    double max_relative_error;
    uint64_t checked;
    uint64_t excluded;
} gp_gradcheck_result;

/* d=8, M=5, H=2, head_dim=4, C=2, N=10, threshold 0.5, lambdas (1, 0.1, 0.1), epsilon 1e-4, seed 0. */
GP_API void gp_gradcheck_config_default(gp_gradcheck_config* out);
GP_API gp_status gp_gradcheck(const gp_gradcheck_config* config, gp_gradcheck_result* out);

#ifdef __cplusplus
}
#endif

#endif /* GAPROTO_H */
