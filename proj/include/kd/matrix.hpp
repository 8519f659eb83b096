#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kd/error.hpp"

namespace kd {

/// Dense 2-D array of doubles, row-major. The substrate for every batched
/// quantity in the library: logit batches, label batches, gradients, weights.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw DimensionError("Matrix: data length does not match rows*cols");
        }
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// True when every entry is finite (no NaN/Inf).
bool is_finite(const Matrix& m);

/// Throws InvalidInputError naming `what` if any entry is non-finite.
void require_finite(const Matrix& m, const char* what);

/// C = A * B. Inner dimensions must agree.
Matrix matmul(const Matrix& a, const Matrix& b);

/// C = A^T * B without materializing the transpose.
Matrix matmul_transpose_a(const Matrix& a, const Matrix& b);

/// C = A * B^T without materializing the transpose.
Matrix matmul_transpose_b(const Matrix& a, const Matrix& b);

/// Per-row reductions; result length equals rows().
std::vector<double> row_mean(const Matrix& m);
std::vector<double> row_max(const Matrix& m);
std::vector<double> row_min(const Matrix& m);

/// Per-row argmax, ties broken by lowest index.
std::vector<std::size_t> row_argmax(const Matrix& m);

/// Column sums; result length equals cols().
std::vector<double> col_sum(const Matrix& m);

/// Statistics over a batch column (length-B vector of per-sample scalars).
double vec_mean(std::span<const double> v);
double vec_max(std::span<const double> v);
double vec_min(std::span<const double> v);
double vec_sum(std::span<const double> v);

/// Softmax over a batch column, max-subtracted for stability.
std::vector<double> vec_softmax(std::span<const double> v);

} // namespace kd
