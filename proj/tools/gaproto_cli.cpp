// gaproto command-line tool. Everything goes through the C API in libgaproto.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "gaproto/gaproto.h"
#include "json.hpp"

namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

int exit_code_for(gp_status status) {
    switch (status) {
        case GP_OK: return kOk;
        case GP_ERR_NULL_POINTER:
        case GP_ERR_INVALID_ARGUMENT:
        case GP_ERR_OUT_OF_RANGE: return kUsage;
        case GP_ERR_IO:
        case GP_ERR_FORMAT: return kData;
        case GP_ERR_NUMERIC:
        case GP_ERR_INTERNAL: return kNumeric;
    }
    return kNumeric;
}

// Thrown to unwind a command with a specific exit code; main reports it.
struct CommandFailure {
    int code;
    std::string message;
};

void check(gp_status status, const std::string& context) {
    if (status != GP_OK) throw CommandFailure{exit_code_for(status), context + ": " + gp_last_error()};
}

struct DatasetDeleter {
    void operator()(gp_dataset* d) const { gp_dataset_free(d); }
};
struct ModelDeleter {
    void operator()(gp_model* m) const { gp_model_free(m); }
};
struct StringDeleter {
    void operator()(char* s) const { gp_string_free(s); }
};
using DatasetPtr = std::unique_ptr<gp_dataset, DatasetDeleter>;
using ModelPtr = std::unique_ptr<gp_model, ModelDeleter>;
using OwnedString = std::unique_ptr<char, StringDeleter>;

DatasetPtr read_dataset(const std::string& path) {
    gp_dataset* raw = nullptr;
    check(gp_dataset_read(path.c_str(), &raw), "reading " + path);
    return DatasetPtr(raw);
}

ModelPtr load_model(const std::string& path) {
    gp_model* raw = nullptr;
    check(gp_model_load(path.c_str(), &raw), "loading " + path);
    return ModelPtr(raw);
}

gp_dataset_info info_of(const gp_dataset* d) {
    gp_dataset_info info{};
    check(gp_dataset_info_get(d, &info), "dataset info");
    return info;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CommandFailure{kData, "cannot open " + path + " for writing"};
    out << content;
    if (!out) throw CommandFailure{kData, "write error on " + path};
}

int32_t parse_similarity(const std::string& name) {
    return name == "cosine" ? GP_SIM_COSINE : GP_SIM_NEGATIVE_EUCLIDEAN;
}

// ---- synth ----

struct SynthArgs {
    std::string out;
    std::string test_out;
    double test_fraction = 0.2;
    gp_synthetic_spec spec{};
};

int run_synth(const SynthArgs& a) {
    gp_dataset* raw = nullptr;
    check(gp_dataset_synthetic(&a.spec, &raw), "generating synthetic data");
    DatasetPtr all(raw);
    if (a.test_out.empty()) {
        check(gp_dataset_write(all.get(), a.out.c_str()), "writing " + a.out);
        std::cout << "wrote " << info_of(all.get()).count << " samples to " << a.out << "\n";
        return kOk;
    }
    gp_dataset* train_raw = nullptr;
    gp_dataset* test_raw = nullptr;
    check(gp_dataset_split(all.get(), a.test_fraction, a.spec.seed, &train_raw, &test_raw), "splitting");
    DatasetPtr train(train_raw);
    DatasetPtr test(test_raw);
    check(gp_dataset_write(train.get(), a.out.c_str()), "writing " + a.out);
    check(gp_dataset_write(test.get(), a.test_out.c_str()), "writing " + a.test_out);
    std::cout << "wrote " << info_of(train.get()).count << " training samples to " << a.out << " and "
              << info_of(test.get()).count << " test samples to " << a.test_out << "\n";
    return kOk;
}

// ---- train ----

struct TrainArgs {
    std::string train;
    std::string val;
    std::string out;
    std::string history;
    std::string resume;
    std::optional<uint64_t> prototypes;
    std::optional<uint64_t> heads;
    std::optional<uint64_t> head_dim;
    std::optional<double> threshold;
    std::string init = "sample";
    std::string prox_scope = "full";
    uint64_t seed = 0;
    gp_train_config tc{};
};

struct HistorySink {
    std::ofstream* file = nullptr;
    uint64_t last_epoch = 0;
};

void on_epoch(const gp_epoch_record* r, void* user) {
    auto* sink = static_cast<HistorySink*>(user);
    sink->last_epoch = r->epoch;
    if (sink->file) *sink->file << r->json_line << '\n' << std::flush;
    std::cerr << "epoch " << r->epoch << " loss " << r->loss_total;
    if (!std::isnan(r->val_accuracy)) std::cerr << " val_acc " << r->val_accuracy;
    std::cerr << '\n';
}

int run_train(TrainArgs a) {
    DatasetPtr train = read_dataset(a.train);
    DatasetPtr val = a.val.empty() ? nullptr : read_dataset(a.val);
    const auto info = info_of(train.get());

    ModelPtr init;
    gp_model_config mc{};
    if (!a.resume.empty()) {
        init = load_model(a.resume);
        check(gp_model_config_get(init.get(), &mc), "reading checkpoint config");
        auto mismatch = [&](const char* flag, std::optional<uint64_t> requested, uint64_t stored) {
            if (requested && *requested != stored)
                throw CommandFailure{kData, std::string(flag) + " " + std::to_string(*requested) +
                                                " does not match checkpoint value " + std::to_string(stored)};
        };
        mismatch("--prototypes", a.prototypes, mc.num_prototypes);
        mismatch("--heads", a.heads, mc.num_heads);
        mismatch("--head-dim", a.head_dim, mc.head_dim);
        if (mc.dim != info.dim)
            throw CommandFailure{kData, "training data dimension does not match checkpoint"};
        if (a.threshold) mc.threshold = *a.threshold;
    } else {
        gp_model_config_default(info.dim, info.num_classes, &mc);
        if (a.prototypes) mc.num_prototypes = *a.prototypes;
        if (a.heads) mc.num_heads = *a.heads;
        if (mc.num_heads == 0) throw CommandFailure{kUsage, "--heads must be positive"};
        mc.head_dim = a.head_dim ? *a.head_dim : (info.dim + mc.num_heads - 1) / mc.num_heads;
        if (a.threshold) mc.threshold = *a.threshold;
        mc.seed = a.seed;
        mc.prototype_init = a.init == "gaussian" ? GP_INIT_GAUSSIAN : GP_INIT_SAMPLE;
    }
    a.tc.seed = a.seed;
    a.tc.prox_scope = a.prox_scope == "batch" ? GP_PROX_BATCH : GP_PROX_FULL;

    nlohmann::ordered_json banner;
    banner["train"] = a.train;
    banner["val"] = a.val.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(a.val);
    banner["out"] = a.out;
    banner["resume"] = a.resume.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(a.resume);
    banner["dim"] = mc.dim;
    banner["num_classes"] = mc.num_classes;
    banner["prototypes"] = mc.num_prototypes;
    banner["heads"] = mc.num_heads;
    banner["head_dim"] = mc.head_dim;
    banner["threshold"] = mc.threshold;
    banner["init"] = mc.prototype_init == GP_INIT_GAUSSIAN ? "gaussian" : "sample";
    banner["lr"] = a.tc.learning_rate;
    banner["batch"] = a.tc.batch_size;
    banner["accum"] = a.tc.accum_steps;
    banner["epochs"] = a.tc.epochs;
    banner["adam"] = {a.tc.adam_beta1, a.tc.adam_beta2, a.tc.adam_eps};
    banner["lambda1"] = a.tc.lambda1;
    banner["lambda2"] = a.tc.lambda2;
    banner["lambda3"] = a.tc.lambda3;
    banner["prox_scope"] = a.prox_scope;
    banner["threads"] = a.tc.threads;
    banner["seed"] = a.seed;
    std::cout << "gaproto train " << banner.dump() << std::endl;

    std::ofstream history_file;
    HistorySink sink;
    if (!a.history.empty()) {
        history_file.open(a.history, std::ios::trunc);
        if (!history_file) throw CommandFailure{kData, "cannot open " + a.history + " for writing"};
        sink.file = &history_file;
    }

    gp_model* raw = nullptr;
    const gp_status status = gp_train(train.get(), val.get(), &mc, &a.tc, init.get(), on_epoch, &sink, &raw);
    if (status != GP_OK) {
        std::string msg = std::string("training failed: ") + gp_last_error();
        if (status == GP_ERR_NUMERIC) msg += " [last good epoch " + std::to_string(sink.last_epoch) + "]";
        throw CommandFailure{exit_code_for(status), msg};
    }
    ModelPtr model(raw);
    check(gp_model_save(model.get(), a.out.c_str()), "writing " + a.out);
    std::cout << "saved checkpoint to " << a.out << "\n";
    return kOk;
}

// ---- eval ----

int run_eval(const std::string& model_path, const std::string& data_path, bool json) {
    ModelPtr model = load_model(model_path);
    DatasetPtr data = read_dataset(data_path);
    char* raw = nullptr;
    check(gp_evaluate(model.get(), data.get(), &raw), "evaluating");
    OwnedString text(raw);
    if (json) {
        std::cout << text.get() << "\n";
        return kOk;
    }
    const auto j = nlohmann::json::parse(text.get());
    std::cout << "samples      " << j["count"].get<uint64_t>() << "\n"
              << "accuracy     " << j["accuracy"].get<double>() << "\n"
              << "macro_recall " << j["macro_recall"].get<double>() << "\n"
              << "macro_f1     " << j["macro_f1"].get<double>() << "\n";
    return kOk;
}

// ---- explain / project / viz ----

int run_explain(const std::string& model_path, const std::string& data_path, const std::string& basis_path,
                uint64_t index, const std::string& out, const std::string& similarity) {
    ModelPtr model = load_model(model_path);
    DatasetPtr data = read_dataset(data_path);
    DatasetPtr basis = basis_path.empty() ? nullptr : read_dataset(basis_path);
    char* raw = nullptr;
    check(gp_explain(model.get(), basis ? basis.get() : data.get(), data.get(), index, parse_similarity(similarity), &raw),
          "explaining sample " + std::to_string(index));
    OwnedString text(raw);
    if (out.empty()) {
        std::cout << text.get() << "\n";
    } else {
        write_text(out, std::string(text.get()) + "\n");
        std::cout << "wrote explanation to " << out << "\n";
    }
    return kOk;
}

int run_project(const std::string& model_path, const std::string& data_path, const std::string& out,
                const std::string& similarity) {
    ModelPtr model = load_model(model_path);
    DatasetPtr data = read_dataset(data_path);
    char* raw = nullptr;
    check(gp_project(model.get(), data.get(), parse_similarity(similarity), &raw), "projecting prototypes");
    OwnedString text(raw);
    const auto j = nlohmann::json::parse(text.get());
    if (out.empty()) {
        std::cout << text.get() << "\n";
    } else {
        write_text(out, std::string(text.get()) + "\n");
        std::cout << "wrote projection to " << out << "\n";
    }
    std::cerr << "distinguishness " << j["distinguishness"].get<double>() << "\n";
    return kOk;
}

int run_viz(const std::string& model_path, const std::string& data_path, const std::string& out, double perplexity,
            uint64_t iterations, uint64_t seed) {
    ModelPtr model = load_model(model_path);
    DatasetPtr data = read_dataset(data_path);
    char* raw = nullptr;
    check(gp_prototype_map(model.get(), data.get(), perplexity, iterations, seed, &raw), "computing t-SNE map");
    OwnedString text(raw);
    write_text(out, text.get());
    std::cout << "wrote map to " << out << "\n";
    return kOk;
}

// ---- gradcheck ----

int run_gradcheck(gp_gradcheck_config cfg, uint64_t runs) {
    double worst = 0.0;
    for (uint64_t r = 0; r < runs; ++r) {
        gp_gradcheck_result result{};
        check(gp_gradcheck(&cfg, &result), "gradient check");
        std::cout << "seed " << cfg.seed << ": max relative error " << result.max_relative_error << " over "
                  << result.checked << " coordinates (" << result.excluded << " excluded at the threshold)\n";
        worst = std::max(worst, result.max_relative_error);
        ++cfg.seed;
    }
    std::cout << "max relative error " << worst << "\n";
    if (!(worst < 1e-4)) {
        std::cerr << "gradient check failed: " << worst << " >= 1e-4\n";
        return kNumeric;
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graph-attention prototype classifier over frozen embeddings"};
    app.require_subcommand(1);
    int code = kOk;

    SynthArgs synth;
    gp_synthetic_spec_default(&synth.spec);
    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic clustered dataset (GAPE1)");
    synth_cmd->add_option("--out", synth.out, "Output GAPE file (training part when --test-out is given)")->required();
    synth_cmd->add_option("--test-out", synth.test_out, "Also split off a stratified test file");
    synth_cmd->add_option("--test-fraction", synth.test_fraction, "Fraction of samples in the test file")->capture_default_str();
    synth_cmd->add_option("--clusters", synth.spec.num_clusters, "Number of clusters / classes")->capture_default_str();
    synth_cmd->add_option("--per-cluster", synth.spec.per_cluster, "Samples per cluster")->capture_default_str();
    synth_cmd->add_option("--dim", synth.spec.dim, "Embedding dimension")->capture_default_str();
    synth_cmd->add_option("--spread", synth.spec.center_spread, "Std-dev of cluster centers")->capture_default_str();
    synth_cmd->add_option("--noise", synth.spec.noise_sigma, "Std-dev of samples around a center")->capture_default_str();
    synth_cmd->add_option("--seed", synth.spec.seed, "Random seed")->capture_default_str();
    bool synth_texts = false;
    synth_cmd->add_flag("--texts", synth_texts, "Store a short text per sample");
    synth_cmd->callback([&] {
        synth.spec.with_texts = synth_texts ? 1 : 0;
        code = run_synth(synth);
    });

    TrainArgs tr;
    gp_train_config_default(&tr.tc);
    auto* train_cmd = app.add_subcommand("train", "Train a model and write a GAPC1 checkpoint");
    train_cmd->add_option("--train", tr.train, "Training GAPE file")->required();
    train_cmd->add_option("--val", tr.val, "Validation GAPE file");
    train_cmd->add_option("--out", tr.out, "Output checkpoint")->required();
    train_cmd->add_option("--history", tr.history, "Per-epoch JSON lines");
    train_cmd->add_option("--resume", tr.resume, "Start from this checkpoint");
    train_cmd->add_option("--prototypes", tr.prototypes, "Number of prototypes M (default 20)");
    train_cmd->add_option("--heads", tr.heads, "Attention heads H (default 4)");
    train_cmd->add_option("--head-dim", tr.head_dim, "Per-head width (default ceil(dim / heads))");
    train_cmd->add_option("--threshold", tr.threshold, "Edge threshold on attention scores (default 0.5)");
    train_cmd->add_option("--lr", tr.tc.learning_rate, "Adam learning rate")->capture_default_str();
    train_cmd->add_option("--batch", tr.tc.batch_size, "Micro-batch size")->capture_default_str();
    train_cmd->add_option("--accum", tr.tc.accum_steps, "Micro-batches per optimizer step")->capture_default_str();
    train_cmd->add_option("--epochs", tr.tc.epochs, "Training epochs")->capture_default_str();
    train_cmd->add_option("--lambda1", tr.tc.lambda1, "Accuracy loss weight")->capture_default_str();
    train_cmd->add_option("--lambda2", tr.tc.lambda2, "Proximity loss weight")->capture_default_str();
    train_cmd->add_option("--lambda3", tr.tc.lambda3, "Diversity loss weight")->capture_default_str();
    train_cmd->add_option("--seed", tr.seed, "Seed for initialization and shuffling")->capture_default_str();
    train_cmd->add_option("--init", tr.init, "Prototype initialization")
        ->check(CLI::IsMember({"sample", "gaussian"}))
        ->capture_default_str();
    train_cmd->add_option("--prox-scope", tr.prox_scope, "Proximity minimum over the full set or the step's samples")
        ->check(CLI::IsMember({"full", "batch"}))
        ->capture_default_str();
    train_cmd->add_option("--threads", tr.tc.threads, "Worker threads for gradient evaluation")->capture_default_str();
    train_cmd->callback([&] { code = run_train(tr); });

    std::string model_path, data_path, out_path, basis_path, similarity = "cosine";
    bool eval_json = false;
    auto* eval_cmd = app.add_subcommand("eval", "Accuracy, macro recall and macro F1 on a dataset");
    eval_cmd->add_option("--model", model_path, "Checkpoint")->required();
    eval_cmd->add_option("--data", data_path, "GAPE file")->required();
    eval_cmd->add_flag("--json", eval_json, "Print the full JSON report with per-class metrics");
    eval_cmd->callback([&] { code = run_eval(model_path, data_path, eval_json); });

    uint64_t index = 0;
    auto* explain_cmd = app.add_subcommand("explain", "Explanation report for one sample");
    explain_cmd->add_option("--model", model_path, "Checkpoint")->required();
    explain_cmd->add_option("--data", data_path, "GAPE file holding the sample")->required();
    explain_cmd->add_option("--index", index, "Row index of the sample")->required();
    explain_cmd->add_option("--train", basis_path, "GAPE file the prototypes are projected onto (default --data)");
    explain_cmd->add_option("--json", out_path, "Write the report here instead of stdout");
    explain_cmd->add_option("--similarity", similarity, "Projection similarity")
        ->check(CLI::IsMember({"cosine", "negative_euclidean"}))
        ->capture_default_str();
    explain_cmd->callback([&] { code = run_explain(model_path, data_path, basis_path, index, out_path, similarity); });

    auto* project_cmd = app.add_subcommand("project", "Match every prototype to its most similar sample");
    project_cmd->add_option("--model", model_path, "Checkpoint")->required();
    project_cmd->add_option("--data", data_path, "GAPE file (usually the training set)")->required();
    project_cmd->add_option("--out", out_path, "Output JSON (default stdout)");
    project_cmd->add_option("--similarity", similarity, "Projection similarity")
        ->check(CLI::IsMember({"cosine", "negative_euclidean"}))
        ->capture_default_str();
    project_cmd->callback([&] { code = run_project(model_path, data_path, out_path, similarity); });

    double perplexity = 30.0;
    uint64_t iterations = 1000;
    uint64_t viz_seed = 0;
    auto* viz_cmd = app.add_subcommand("viz", "2D t-SNE coordinates of samples and prototypes (CSV)");
    viz_cmd->add_option("--model", model_path, "Checkpoint")->required();
    viz_cmd->add_option("--data", data_path, "GAPE file")->required();
    viz_cmd->add_option("--out", out_path, "Output CSV")->required();
    viz_cmd->add_option("--perplexity", perplexity, "t-SNE perplexity")->capture_default_str();
    viz_cmd->add_option("--iters", iterations, "t-SNE iterations")->capture_default_str();
    viz_cmd->add_option("--seed", viz_seed, "Seed for the initial map")->capture_default_str();
    viz_cmd->callback([&] { code = run_viz(model_path, data_path, out_path, perplexity, iterations, viz_seed); });

    gp_gradcheck_config gc{};
    gp_gradcheck_config_default(&gc);
    uint64_t runs = 1;
    auto* grad_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
    grad_cmd->add_option("--dim", gc.dim, "Embedding dimension")->capture_default_str();
    grad_cmd->add_option("--prototypes", gc.num_prototypes, "Prototypes")->capture_default_str();
    grad_cmd->add_option("--heads", gc.num_heads, "Heads")->capture_default_str();
    grad_cmd->add_option("--head-dim", gc.head_dim, "Per-head width")->capture_default_str();
    grad_cmd->add_option("--classes", gc.num_classes, "Classes")->capture_default_str();
    grad_cmd->add_option("--samples", gc.num_samples, "Samples")->capture_default_str();
    grad_cmd->add_option("--threshold", gc.threshold, "Edge threshold")->capture_default_str();
    grad_cmd->add_option("--lambda1", gc.lambda1, "Accuracy loss weight")->capture_default_str();
    grad_cmd->add_option("--lambda2", gc.lambda2, "Proximity loss weight")->capture_default_str();
    grad_cmd->add_option("--lambda3", gc.lambda3, "Diversity loss weight")->capture_default_str();
    grad_cmd->add_option("--epsilon", gc.epsilon, "Finite-difference step")->capture_default_str();
    grad_cmd->add_option("--seed", gc.seed, "First seed")->capture_default_str();
    grad_cmd->add_option("--runs", runs, "Number of consecutive seeds")->capture_default_str();
    grad_cmd->callback([&] { code = run_gradcheck(gc, runs); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    } catch (const CommandFailure& f) {
        std::cerr << "error: " << f.message << "\n";
        return f.code;
    }
    return code;
}
