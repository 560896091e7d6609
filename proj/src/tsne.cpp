#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "gaproto/error.hpp"
#include "gaproto/interpret.hpp"

namespace gaproto {

namespace {

constexpr std::size_t kExaggerationIters = 250;
constexpr double kExaggeration = 12.0;
constexpr double kLearningRate = 200.0;
constexpr double kInitialMomentum = 0.5;
constexpr double kFinalMomentum = 0.8;
constexpr double kMinGain = 0.01;

// Row-stochastic Gaussian affinities, bandwidth per row binary-searched so the
// row entropy matches log(perplexity).
Matrix conditional_affinities(const Matrix& sq_dist, double perplexity) {
    const std::size_t n = sq_dist.rows();
    const double target = std::log(perplexity);
    Matrix p(n, n);
    std::vector<double> shifted(n);
    for (std::size_t i = 0; i < n; ++i) {
        double min_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) min_d = std::min(min_d, sq_dist(i, j));
        for (std::size_t j = 0; j < n; ++j) shifted[j] = sq_dist(i, j) - min_d;

        double beta = 1.0;
        double lo = 0.0;
        double hi = std::numeric_limits<double>::infinity();
        auto row = p.row(i);
        for (int iter = 0; iter < 200; ++iter) {
            double sum = 0.0;
            double weighted = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                row[j] = (j == i) ? 0.0 : std::exp(-beta * shifted[j]);
                sum += row[j];
                weighted += shifted[j] * row[j];
            }
            const double entropy = std::log(sum) + beta * weighted / sum;
            for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
            const double diff = entropy - target;
            if (std::abs(diff) < 1e-5) break;
            if (diff > 0.0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    }
    return p;
}

}  // namespace

Matrix tsne_embed(const Matrix& points, const TsneOptions& options) {
    const std::size_t n = points.rows();
    require(options.perplexity > 0.0, "perplexity must be positive");
    if (!(static_cast<double>(n) > 3.0 * options.perplexity)) {
        fail(ErrorKind::invalid_argument, "t-SNE needs more than 3 * perplexity points (have " + std::to_string(n) +
                                              ", perplexity " + std::to_string(options.perplexity) + ")");
    }

    Matrix sq_dist(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) sq_dist(i, j) = sq_dist(j, i) = squared_distance(points.row(i), points.row(j));

    const Matrix cond = conditional_affinities(sq_dist, options.perplexity);
    Matrix joint(n, n);
    const double denom = 2.0 * static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            joint(i, j) = std::max((cond(i, j) + cond(j, i)) / denom, std::numeric_limits<double>::min());

    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> init(0.0, 1e-4);
    Matrix y(n, 2);
    for (auto& v : y.values()) v = init(rng);

    Matrix update(n, 2);
    Matrix gains(n, 2, 1.0);
    Matrix grad(n, 2);
    Matrix num(n, n);

    for (std::size_t iter = 0; iter < options.iterations; ++iter) {
        const double exaggeration = iter < kExaggerationIters ? kExaggeration : 1.0;
        const double momentum = iter < kExaggerationIters ? kInitialMomentum : kFinalMomentum;

        // Student-t kernel in the map.
        double sum_num = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            num(i, i) = 0.0;
            for (std::size_t j = i + 1; j < n; ++j) {
                const double dx = y(i, 0) - y(j, 0);
                const double dy = y(i, 1) - y(j, 1);
                const double q = 1.0 / (1.0 + dx * dx + dy * dy);
                num(i, j) = num(j, i) = q;
                sum_num += 2.0 * q;
            }
        }

        grad.fill(0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double q = num(i, j);
                const double mult = (exaggeration * joint(i, j) - q / sum_num) * q;
                grad(i, 0) += 4.0 * mult * (y(i, 0) - y(j, 0));
                grad(i, 1) += 4.0 * mult * (y(i, 1) - y(j, 1));
            }
        }

        for (std::size_t k = 0; k < y.size(); ++k) {
            const double g = grad.values()[k];
            double& u = update.values()[k];
            double& gain = gains.values()[k];
            gain = ((g > 0.0) != (u > 0.0)) ? gain + 0.2 : gain * 0.8;
            gain = std::max(gain, kMinGain);
            u = momentum * u - kLearningRate * gain * g;
            y.values()[k] += u;
        }

        for (std::size_t c = 0; c < 2; ++c) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += y(i, c);
            mean /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) y(i, c) -= mean;
        }
    }
    if (!all_finite(y.values())) fail(ErrorKind::numeric, "t-SNE produced non-finite coordinates");
    return y;
}

}  // namespace gaproto
