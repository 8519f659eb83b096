#include "kd/softmax.hpp"

#include <cmath>

namespace kd {

namespace {

void check_args(const Matrix& logits, double lambda, const char* what) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw InvalidParameterError(std::string(what) + ": lambda must be positive and finite");
    }
    require_finite(logits, what);
}

} // namespace

Matrix softmax_temp(const Matrix& logits, double lambda) {
    check_args(logits, lambda, "softmax_temp");
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t b = 0; b < logits.rows(); ++b) {
        const auto in = logits.row(b);
        auto p = out.row(b);
        double mx = in[0];
        for (double z : in) mx = std::max(mx, z);
        double denom = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            p[j] = std::exp((in[j] - mx) / lambda);
            denom += p[j];
        }
        for (std::size_t j = 0; j < in.size(); ++j) p[j] /= denom;
    }
    return out;
}

Matrix log_softmax_temp(const Matrix& logits, double lambda) {
    check_args(logits, lambda, "log_softmax_temp");
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t b = 0; b < logits.rows(); ++b) {
        const auto in = logits.row(b);
        auto lp = out.row(b);
        double mx = in[0];
        for (double z : in) mx = std::max(mx, z);
        double sum = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            lp[j] = (in[j] - mx) / lambda;
            sum += std::exp(lp[j]);
        }
        const double lse = std::log(sum);
        for (std::size_t j = 0; j < in.size(); ++j) lp[j] -= lse;
    }
    return out;
}

} // namespace kd
