#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "gaproto/error.hpp"
#include "gaproto/training.hpp"
#include "naive_forward.hpp"
#include "test_util.hpp"

using namespace gaproto;

namespace {

Matrix rows_of(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(rows.size(), rows.begin()->size());
    std::size_t r = 0;
    for (const auto& row : rows) {
        std::copy(row.begin(), row.end(), m.row(r).begin());
        ++r;
    }
    return m;
}

ModelConfig gradcheck_config(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.dim = 8;
    cfg.num_prototypes = 5;
    cfg.num_heads = 2;
    cfg.head_dim = 4;
    cfg.num_classes = 2;
    cfg.seed = seed;
    return cfg;
}

double mean_pairwise_distance(const Matrix& p) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t a = 0; a < p.rows(); ++a)
        for (std::size_t b = a + 1; b < p.rows(); ++b) {
            total += std::sqrt(squared_distance(p.row(a), p.row(b)));
            ++count;
        }
    return total / static_cast<double>(count);
}

double max_abs_difference(const ModelParams& a, const ModelParams& b) {
    std::vector<double> flat_a, flat_b;
    for_each_tensor(a, [&](const std::string&, const auto&, std::span<const double> v) {
        flat_a.insert(flat_a.end(), v.begin(), v.end());
    });
    for_each_tensor(b, [&](const std::string&, const auto&, std::span<const double> v) {
        flat_b.insert(flat_b.end(), v.begin(), v.end());
    });
    REQUIRE(flat_a.size() == flat_b.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < flat_a.size(); ++i) worst = std::max(worst, std::abs(flat_a[i] - flat_b[i]));
    return worst;
}

EmbeddingDataset two_clusters(std::size_t per_cluster, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.per_cluster = per_cluster;
    spec.seed = seed;
    return gen_synthetic(spec);
}

}  // namespace

TEST_CASE("accuracy loss") {
    CHECK(loss_accuracy(rows_of({{1.0, 0.0}}), std::vector<std::uint32_t>{0}) == 0.0);
    CHECK(loss_accuracy(rows_of({{0.5, 0.5}}), std::vector<std::uint32_t>{0}) ==
          doctest::Approx(0.6931471805599453).epsilon(1e-15));
    const double one = loss_accuracy(rows_of({{0.3, 0.7}}), std::vector<std::uint32_t>{0});
    CHECK(loss_accuracy(rows_of({{0.3, 0.7}, {0.3, 0.7}}), std::vector<std::uint32_t>{0, 0}) == 2.0 * one);
    const double clamped = loss_accuracy(rows_of({{0.0, 1.0}}), std::vector<std::uint32_t>{0});
    CHECK(std::isfinite(clamped));
    CHECK(clamped == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("proximity loss") {
    const auto samples = rows_of({{1.0, 2.0}, {-3.0, 0.5}, {4.0, 4.0}});
    auto one = loss_proximity(rows_of({{-3.0, 0.5}}), samples);
    CHECK(one.value == 0.0);
    CHECK(one.argmins == std::vector<std::size_t>{1});

    auto two = loss_proximity(rows_of({{1.0, 2.0}, {4.0, 6.0}}), samples);
    CHECK(two.value == 2.0);
    CHECK(two.argmins == std::vector<std::size_t>{0, 2});

    auto tie = loss_proximity(rows_of({{0.0, 0.0}}), rows_of({{1.0, 0.0}, {0.0, 1.0}}));
    CHECK(tie.argmins == std::vector<std::size_t>{0});

    auto shifted_p = rows_of({{1.5, 2.5}, {4.5, 6.5}});
    auto shifted_s = rows_of({{1.5, 2.5}, {-2.5, 1.0}, {4.5, 4.5}});
    CHECK(loss_proximity(shifted_p, shifted_s).value == doctest::Approx(two.value).epsilon(1e-14));
}

TEST_CASE("diversity loss") {
    CHECK(loss_diversity(rows_of({{1.0, 1.0}, {1.0, 1.0}})) == 0.0);
    CHECK(loss_diversity(rows_of({{0.0, 0.0}, {2.0, 0.0}})) == -2.0);
    const auto p = rows_of({{0.0, 0.0}, {3.0, 4.0}, {1.0, 0.0}});
    CHECK(loss_diversity(p) == doctest::Approx(-3.49071198499986).epsilon(1e-13));
    CHECK(loss_diversity(rows_of({{1.0, 0.0}, {0.0, 0.0}, {3.0, 4.0}})) == doctest::Approx(loss_diversity(p)).epsilon(1e-15));
    CHECK_THROWS_AS(loss_diversity(rows_of({{1.0, 0.0}})), Error);
}

TEST_CASE("diversity gradient matches independently computed values") {
    ModelConfig cfg;
    cfg.dim = 2;
    cfg.num_prototypes = 3;
    cfg.num_heads = 1;
    cfg.head_dim = 1;
    auto params = ModelParams::zeros(cfg);
    params.prototypes = rows_of({{0.0, 0.0}, {3.0, 4.0}, {1.0, 0.0}});
    const Batch batch{rows_of({{1.0, 1.0}}), {0}};
    const auto r = backward(params, cfg, batch, batch.embeddings, LossWeights{0.0, 0.0, 1.0});
    const double expect[3][2] = {{0.533333333719, 0.266666666748},
                                 {-0.349071198613, -0.564809063963},
                                 {-0.184262135106, 0.298142397215}};
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t c = 0; c < 2; ++c) CHECK(r.grads.prototypes(j, c) == doctest::Approx(expect[j][c]).epsilon(1e-8));
    CHECK(r.grads.prototypes(0, 0) == doctest::Approx(1.6 / 3.0).epsilon(1e-14));

    // Coincident prototypes contribute nothing to each other.
    params.prototypes = rows_of({{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}});
    const auto z = backward(params, cfg, batch, batch.embeddings, LossWeights{0.0, 0.0, 1.0});
    for (double v : z.grads.prototypes.values()) CHECK(v == 0.0);
}

TEST_CASE("composite loss combines its parts") {
    auto problem = make_gradcheck_problem(gradcheck_config(3), 10);
    problem.params.prototypes(0, 0) += 0.3;  // move off the samples so every part is nonzero
    const auto& pr = problem;
    const auto only_acc = composite_loss(pr.params, pr.config, pr.batch, pr.embeddings, {1.0, 0.0, 0.0});
    CHECK(only_acc.total == only_acc.acc);
    const auto full = composite_loss(pr.params, pr.config, pr.batch, pr.embeddings, {1.0, 1.0, 1.0});
    CHECK(full.prox > 0.0);
    CHECK(full.div < 0.0);
    CHECK(std::abs(full.total - (full.acc + full.prox + full.div)) <= 1e-12);
    const auto base = composite_loss(pr.params, pr.config, pr.batch, pr.embeddings, {0.7, 0.2, 0.3});
    const auto doubled = composite_loss(pr.params, pr.config, pr.batch, pr.embeddings, {1.4, 0.4, 0.6});
    CHECK(doubled.total == doctest::Approx(2.0 * base.total).epsilon(1e-14));
}

TEST_CASE("loss signs hold on random instances") {
    std::mt19937_64 rng(5);
    for (int inst = 0; inst < 200; ++inst) {
        auto pr = naive::random_problem(rng);
        if (pr.config.num_prototypes < 2) continue;
        Matrix data(4, pr.config.dim);
        std::normal_distribution<double> g(0.0, 2.0);
        for (auto& v : data.values()) v = g(rng);
        std::vector<std::uint32_t> labels(4);
        for (auto& l : labels) l = static_cast<std::uint32_t>(rng() % pr.config.num_classes);
        const Batch batch{data, labels};
        const auto loss = composite_loss(pr.params, pr.config, batch, data, {});
        CHECK(loss.acc >= 0.0);
        CHECK(loss.prox >= 0.0);
        CHECK(loss.div <= 0.0);
    }
}

TEST_CASE("backward agrees with finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto pr = make_gradcheck_problem(gradcheck_config(seed), 10);
        const auto report = finite_diff_check(pr.params, pr.config, pr.batch, pr.embeddings, {1.0, 0.1, 0.1}, 1e-4, seed);
        CAPTURE(seed);
        CAPTURE(report.worst_tensor);
        CHECK(report.max_relative_error < 1e-4);
        CHECK(report.checked > 100);
    }
}

TEST_CASE("gradient check with all weights zero") {
    const auto pr = make_gradcheck_problem(gradcheck_config(1), 10);
    const auto r = backward(pr.params, pr.config, pr.batch, pr.embeddings, {0.0, 0.0, 0.0});
    for_each_tensor(r.grads, [](const std::string&, const auto&, std::span<const double> v) {
        for (double x : v) CHECK(x == 0.0);
    });
    const auto report = finite_diff_check(pr.params, pr.config, pr.batch, pr.embeddings, {0.0, 0.0, 0.0}, 1e-4);
    CHECK(report.max_relative_error == 0.0);
}

TEST_CASE("no coordinates are excluded when the threshold is far from every score") {
    auto cfg = gradcheck_config(2);
    cfg.threshold = 0.999;
    const auto pr = make_gradcheck_problem(cfg, 10);
    const auto report = finite_diff_check(pr.params, pr.config, pr.batch, pr.embeddings, {1.0, 0.1, 0.1}, 1e-4);
    CHECK(report.excluded == 0);
    CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("only prototypes see gradient when accuracy and diversity are off") {
    auto pr = make_gradcheck_problem(gradcheck_config(4), 10);
    pr.params.prototypes(1, 2) += 0.5;
    const auto r = backward(pr.params, pr.config, pr.batch, pr.embeddings, {0.0, 1.0, 0.0});
    for (const auto& w : r.grads.wq)
        for (double v : w.values()) CHECK(v == 0.0);
    for (const auto& w : r.grads.wk)
        for (double v : w.values()) CHECK(v == 0.0);
    for (double v : r.grads.out_weight.values()) CHECK(v == 0.0);
    for (double v : r.grads.out_bias) CHECK(v == 0.0);
    CHECK(r.grads.prototypes(1, 2) != 0.0);
}

TEST_CASE("proximity descent never moves a prototype away from its sample") {
    ModelConfig cfg;
    cfg.dim = 3;
    cfg.num_prototypes = 1;
    cfg.num_heads = 1;
    cfg.head_dim = 2;
    auto params = ModelParams::zeros(cfg);
    params.prototypes = rows_of({{2.0, -1.0, 0.5}});
    const Batch batch{rows_of({{-0.5, 0.25, 1.0}}), {0}};
    double prev = squared_distance(params.prototypes.row(0), batch.embeddings.row(0));
    for (int step = 0; step < 500; ++step) {
        const auto r = backward(params, cfg, batch, batch.embeddings, {0.0, 1.0, 0.0});
        for (std::size_t c = 0; c < 3; ++c) params.prototypes(0, c) -= 0.01 * r.grads.prototypes(0, c);
        const double now = squared_distance(params.prototypes.row(0), batch.embeddings.row(0));
        CHECK(now <= prev);
        prev = now;
    }
    CHECK(prev < 1e-3);
}

TEST_CASE("adam step") {
    ModelConfig cfg;
    cfg.dim = 2;
    cfg.num_prototypes = 2;
    cfg.num_heads = 1;
    cfg.head_dim = 2;
    TrainConfig tc;
    std::mt19937_64 rng(0);
    auto gcfg = cfg;
    gcfg.prototype_init = PrototypeInit::gaussian;
    const auto start = init_params(gcfg, nullptr, rng);

    auto params = start;
    auto state = AdamState::zeros(cfg);
    auto grads = GradientSet::zeros(cfg);
    for_each_tensor(grads, [](const std::string&, const auto&, std::span<double> v) { std::fill(v.begin(), v.end(), 1.0); });
    adam_step(params, grads, state, tc);
    CHECK(state.step == 1);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(start.prototypes.values()[i] - params.prototypes.values()[i] ==
              doctest::Approx(1e-4 / (1.0 + 1e-8)).epsilon(1e-9));

    auto p2 = start;
    auto s2 = AdamState::zeros(cfg);
    adam_step(p2, GradientSet::zeros(cfg), s2, tc);
    CHECK(p2 == start);
    CHECK(s2.step == 1);

    auto p3 = start;
    auto s3 = AdamState::zeros(cfg);
    adam_step(p3, grads, s3, tc);
    CHECK(p3 == params);
    CHECK(s3.first_moment == state.first_moment);
    CHECK(s3.second_moment == state.second_moment);
}

TEST_CASE("accumulating singleton micro-batches equals one batch") {
    const auto pr = make_gradcheck_problem(gradcheck_config(0), 10);
    std::vector<std::size_t> idx(8);
    std::iota(idx.begin(), idx.end(), std::size_t{1});
    const std::vector<std::uint32_t> labels(pr.batch.labels.begin(), pr.batch.labels.end());
    const std::vector<Batch> whole{make_batch(pr.embeddings, labels, idx)};
    std::vector<Batch> singles;
    for (auto i : idx) singles.push_back(make_batch(pr.embeddings, labels, std::vector<std::size_t>{i}));

    const LossWeights w;
    const auto a = accumulated_gradient(pr.params, pr.config, whole, pr.embeddings, w);
    const auto b = accumulated_gradient(pr.params, pr.config, singles, pr.embeddings, w);
    CHECK(max_abs_difference(a.grads, b.grads) <= 1e-10);

    TrainConfig tc;
    auto pa = pr.params, pb = pr.params;
    auto sa = AdamState::zeros(pr.config), sb = AdamState::zeros(pr.config);
    adam_step(pa, a.grads, sa, tc);
    adam_step(pb, b.grads, sb, tc);
    CHECK(max_abs_difference(pa, pb) <= 1e-10);

    const auto threaded = accumulated_gradient(pr.params, pr.config, singles, pr.embeddings, w, 3);
    CHECK(max_abs_difference(a.grads, threaded.grads) <= 1e-9);
}

TEST_CASE("training is deterministic and respects the thread contract") {
    const auto data = two_clusters(30, 2);
    auto mc = ModelConfig::defaults_for(data.dim, data.num_classes);
    TrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = 4;
    tc.accum_steps = 2;
    const auto a = train(data, &data, mc, tc);
    const auto b = train(data, &data, mc, tc);
    CHECK(a.params == b.params);
    REQUIRE(a.history.size() == 5);
    for (std::size_t e = 0; e < 5; ++e) {
        CHECK(to_json_line(a.history[e]) == to_json_line(b.history[e]));
        CHECK(a.history[e].epoch == e + 1);
        CHECK(a.history[e].val_accuracy.has_value());
    }
    tc.threads = 3;
    const auto c = train(data, &data, mc, tc);
    CHECK(max_abs_difference(a.params, c.params) <= 1e-9);
}

TEST_CASE("history lines carry the documented keys") {
    EpochRecord r;
    r.epoch = 3;
    r.loss_total = 1.5;
    const auto line = to_json_line(r);
    for (const char* key : {"\"epoch\"", "\"loss_total\"", "\"loss_acc\"", "\"loss_prox\"", "\"loss_div\"", "\"val_accuracy\":null"})
        CHECK(line.find(key) != std::string::npos);
}

TEST_CASE("strong diversity weight spreads prototypes") {
    const auto data = two_clusters(50, 4);
    auto mc = ModelConfig::defaults_for(data.dim, data.num_classes);
    TrainConfig tc;
    tc.epochs = 30;
    tc.loss_weights.lambda3 = 10.0;
    std::mt19937_64 rng(mc.seed);
    const auto train_rows = to_matrix(data);
    const auto initial = init_params(mc, &train_rows, rng);
    const auto result = train(data, nullptr, mc, tc, &initial);
    CHECK(mean_pairwise_distance(result.params.prototypes) > mean_pairwise_distance(initial.prototypes));
}

TEST_CASE("divergent training aborts with a numeric error") {
    const auto data = two_clusters(20, 1);
    auto mc = ModelConfig::defaults_for(data.dim, data.num_classes);
    TrainConfig tc;
    tc.learning_rate = 1e300;
    tc.epochs = 10;
    tc.accum_steps = 1;
    test::check_error(ErrorKind::numeric, "last good epoch", [&] { train(data, nullptr, mc, tc); });
}

TEST_CASE("train rejects mismatched data") {
    const auto data = two_clusters(20, 1);
    auto mc = ModelConfig::defaults_for(data.dim + 1, data.num_classes);
    CHECK_THROWS_AS(train(data, nullptr, mc, TrainConfig{}), Error);
}
