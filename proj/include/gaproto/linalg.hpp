#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace gaproto {

/// Dense row-major matrix of doubles. Sizes here are small (tens to a few
/// thousand rows), so plain loops are used throughout.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    void fill(double v);

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

// out = m * x
void matvec(const Matrix& m, std::span<const double> x, std::span<double> out);
// out += m^T * y
void matvec_transposed_add(const Matrix& m, std::span<const double> y, std::span<double> out);
// m += scale * a b^T
void add_outer(Matrix& m, double scale, std::span<const double> a, std::span<const double> b);

bool all_finite(std::span<const double> values);

}  // namespace gaproto
