#include "gaproto/linalg.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace gaproto {

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
    return sum;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        sum += diff * diff;
    }
    return sum;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void matvec(const Matrix& m, std::span<const double> x, std::span<double> out) {
    assert(x.size() == m.cols() && out.size() == m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) out[r] = dot(m.row(r), x);
}

void matvec_transposed_add(const Matrix& m, std::span<const double> y, std::span<double> out) {
    assert(y.size() == m.rows() && out.size() == m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double yr = y[r];
        if (yr == 0.0) continue;
        const auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) out[c] += yr * row[c];
    }
}

void add_outer(Matrix& m, double scale, std::span<const double> a, std::span<const double> b) {
    assert(a.size() == m.rows() && b.size() == m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double ar = scale * a[r];
        if (ar == 0.0) continue;
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) row[c] += ar * b[c];
    }
}

bool all_finite(std::span<const double> values) {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace gaproto
