#include "kd/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace kd {

bool is_finite(const Matrix& m) {
    for (double x : m.data()) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

void require_finite(const Matrix& m, const char* what) {
    if (!is_finite(m)) {
        throw InvalidInputError(std::string(what) + ": non-finite entries");
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions disagree (" +
                             std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + ")");
    }
    Matrix c(a.rows(), b.cols());
    // ikj order keeps the inner loop contiguous in b and c.
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const auto brow = b.row(k);
            auto crow = c.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
    return c;
}

Matrix matmul_transpose_a(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_transpose_a: row counts disagree");
    }
    Matrix c(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const auto arow = a.row(k);
        const auto brow = b.row(k);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            auto crow = c.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                crow[j] += aki * brow[j];
            }
        }
    }
    return c;
}

Matrix matmul_transpose_b(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_transpose_b: column counts disagree");
    }
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto arow = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const auto brow = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                acc += arow[k] * brow[k];
            }
            c(i, j) = acc;
        }
    }
    return c;
}

namespace {

std::vector<double> reduce_rows(const Matrix& m, double init,
                                double (*op)(double, double), bool average) {
    if (m.cols() == 0) throw DimensionError("row reduction on zero-column matrix");
    std::vector<double> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double acc = init;
        for (double x : m.row(i)) acc = op(acc, x);
        out[i] = average ? acc / static_cast<double>(m.cols()) : acc;
    }
    return out;
}

} // namespace

std::vector<double> row_mean(const Matrix& m) {
    return reduce_rows(m, 0.0, [](double a, double b) { return a + b; }, true);
}

std::vector<double> row_max(const Matrix& m) {
    return reduce_rows(m, -std::numeric_limits<double>::infinity(),
                       [](double a, double b) { return a > b ? a : b; }, false);
}

std::vector<double> row_min(const Matrix& m) {
    return reduce_rows(m, std::numeric_limits<double>::infinity(),
                       [](double a, double b) { return a < b ? a : b; }, false);
}

std::vector<std::size_t> row_argmax(const Matrix& m) {
    if (m.cols() == 0) throw DimensionError("row_argmax on zero-column matrix");
    std::vector<std::size_t> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto row = m.row(i);
        std::size_t best = 0;
        for (std::size_t j = 1; j < row.size(); ++j) {
            if (row[j] > row[best]) best = j;
        }
        out[i] = best;
    }
    return out;
}

std::vector<double> col_sum(const Matrix& m) {
    std::vector<double> out(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto row = m.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) out[j] += row[j];
    }
    return out;
}

double vec_mean(std::span<const double> v) {
    if (v.empty()) throw InvalidInputError("vec_mean: empty batch");
    return vec_sum(v) / static_cast<double>(v.size());
}

double vec_max(std::span<const double> v) {
    if (v.empty()) throw InvalidInputError("vec_max: empty batch");
    return *std::max_element(v.begin(), v.end());
}

double vec_min(std::span<const double> v) {
    if (v.empty()) throw InvalidInputError("vec_min: empty batch");
    return *std::min_element(v.begin(), v.end());
}

double vec_sum(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc;
}

std::vector<double> vec_softmax(std::span<const double> v) {
    if (v.empty()) throw InvalidInputError("vec_softmax: empty batch");
    const double mx = vec_max(v);
    std::vector<double> out(v.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        denom += out[i];
    }
    for (double& x : out) x /= denom;
    return out;
}

} // namespace kd
