#include "kd/labels.hpp"

#include <cmath>
#include <string>

namespace kd {

namespace {
constexpr double kRowSumTol = 1e-12;
}

LabelBatch::LabelBatch(Matrix values) : values_(std::move(values)) {
    if (values_.rows() == 0 || values_.cols() == 0) {
        throw InvalidInputError("LabelBatch: empty label matrix");
    }
    require_finite(values_, "LabelBatch");
    for (std::size_t b = 0; b < values_.rows(); ++b) {
        double sum = 0.0;
        for (double v : values_.row(b)) {
            if (v < 0.0 || v > 1.0) {
                throw InvalidInputError("LabelBatch: label mass outside [0,1] in row " +
                                        std::to_string(b));
            }
            sum += v;
        }
        if (std::abs(sum - 1.0) > kRowSumTol) {
            throw InvalidInputError("LabelBatch: row " + std::to_string(b) +
                                    " sums to " + std::to_string(sum) + ", expected 1");
        }
    }
    targets_ = row_argmax(values_);
}

LabelBatch LabelBatch::one_hot(const std::vector<std::size_t>& targets, std::size_t num_classes) {
    if (num_classes < 2) {
        throw InvalidParameterError("LabelBatch::one_hot: need at least 2 classes");
    }
    Matrix values(targets.size(), num_classes);
    for (std::size_t b = 0; b < targets.size(); ++b) {
        if (targets[b] >= num_classes) {
            throw InvalidInputError("LabelBatch::one_hot: target " + std::to_string(targets[b]) +
                                    " out of range for " + std::to_string(num_classes) + " classes");
        }
        values(b, targets[b]) = 1.0;
    }
    return LabelBatch(std::move(values));
}

std::vector<double> LabelBatch::target_values() const {
    std::vector<double> out(rows());
    for (std::size_t b = 0; b < rows(); ++b) out[b] = target_value(b);
    return out;
}

bool LabelBatch::is_one_hot() const {
    for (std::size_t b = 0; b < rows(); ++b) {
        if (target_value(b) != 1.0) return false;
    }
    return true;
}

} // namespace kd
