#pragma once

#include "kd/matrix.hpp"

namespace kd {

/// Row-wise temperature softmax: p_i = exp(z_i / lambda) / sum_j exp(z_j / lambda),
/// computed with per-row max subtraction. lambda must be positive and finite;
/// logits must be finite.
Matrix softmax_temp(const Matrix& logits, double lambda);

/// Row-wise log of the temperature softmax via the shifted log-sum-exp,
/// never as log of the normalized probabilities.
Matrix log_softmax_temp(const Matrix& logits, double lambda);

} // namespace kd
