#include <random>

#include "doctest.h"
#include "gaproto/metrics.hpp"

using namespace gaproto;

namespace {

// Plain confusion-matrix arithmetic, written without reference to the library.
struct Oracle {
    double accuracy, precision, recall, f1;
};

Oracle oracle(const std::vector<std::uint32_t>& t, const std::vector<std::uint32_t>& p, std::size_t C) {
    double correct = 0;
    for (std::size_t i = 0; i < t.size(); ++i) correct += t[i] == p[i];
    double sp = 0, sr = 0, sf = 0;
    for (std::uint32_t c = 0; c < C; ++c) {
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (p[i] == c && t[i] == c) tp++;
            if (p[i] == c && t[i] != c) fp++;
            if (p[i] != c && t[i] == c) fn++;
        }
        const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        sp += prec;
        sr += rec;
        sf += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    }
    return {correct / static_cast<double>(t.size()), sp / C, sr / C, sf / C};
}

}  // namespace

TEST_CASE("perfect predictions") {
    const std::vector<std::uint32_t> t{0, 1, 0, 1, 2, 2};
    const auto m = compute_metrics(t, t, 3);
    CHECK(m.accuracy == 1.0);
    CHECK(m.macro_recall == 1.0);
    CHECK(m.macro_f1 == 1.0);
    CHECK(m.confusion[2][2] == 2);
}

TEST_CASE("constant predictor on a balanced binary set") {
    const std::vector<std::uint32_t> t{0, 1, 0, 1, 0, 1};
    const std::vector<std::uint32_t> p(6, 1);
    const auto m = compute_metrics(t, p, 2);
    CHECK(m.accuracy == 0.5);
    CHECK(m.macro_recall == 0.5);
    CHECK(m.per_class[0].precision == 0.0);
    CHECK(m.per_class[1].precision == 0.5);
    CHECK(m.confusion[0][1] == 3);
}

TEST_CASE("metrics agree with an independent confusion-matrix computation") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t C = 2 + rng() % 4;
        const std::size_t n = 1 + rng() % 60;
        std::vector<std::uint32_t> t(n), p(n);
        for (std::size_t i = 0; i < n; ++i) {
            t[i] = static_cast<std::uint32_t>(rng() % C);
            p[i] = rng() % 3 == 0 ? t[i] : static_cast<std::uint32_t>(rng() % C);
        }
        const auto m = compute_metrics(t, p, C);
        const auto o = oracle(t, p, C);
        CHECK(std::abs(m.accuracy - o.accuracy) <= 1e-9);
        CHECK(std::abs(m.macro_precision - o.precision) <= 1e-9);
        CHECK(std::abs(m.macro_recall - o.recall) <= 1e-9);
        CHECK(std::abs(m.macro_f1 - o.f1) <= 1e-9);
    }
}
