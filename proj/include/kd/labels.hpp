#pragma once

#include <cstddef>
#include <vector>

#include "kd/matrix.hpp"

namespace kd {

/// B x C label distributions. Rows must sum to 1 within 1e-12; each row's
/// target index is its argmax (lowest index on ties) and is computed here
/// rather than supplied, so it can never disagree with the values. One-hot
/// rows have target value 1; mixed rows (mixup) have target value < 1.
class LabelBatch {
public:
    /// Empty batch, the not-yet-loaded state of Dataset and Batch.
    LabelBatch() = default;

    explicit LabelBatch(Matrix values);

    static LabelBatch one_hot(const std::vector<std::size_t>& targets, std::size_t num_classes);

    std::size_t rows() const { return values_.rows(); }
    std::size_t classes() const { return values_.cols(); }

    const Matrix& values() const { return values_; }

    /// Target class index of row b.
    std::size_t target(std::size_t b) const { return targets_[b]; }
    const std::vector<std::size_t>& targets() const { return targets_; }

    /// Label mass at the target index of row b.
    double target_value(std::size_t b) const { return values_(b, targets_[b]); }

    /// All target masses as a batch column.
    std::vector<double> target_values() const;

    bool is_one_hot() const;

private:
    Matrix values_;
    std::vector<std::size_t> targets_;
};

} // namespace kd
