#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kd/losses.hpp"

namespace kd {

// Knobs for the self-verification suite. kd_decomposed_scale is a test hook:
// scaling the decomposed side by 1.01 must make the identity check fail,
// proving the suite can actually detect a broken implementation.
struct VerifyOptions {
    std::size_t trials = 1000;
    std::size_t grad_instances = 100;
    std::uint64_t seed = 20250817;
    double kd_decomposed_scale = 1.0;
};

struct CheckResult {
    std::string name;
    double max_residual = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    std::string detail;  // worst failing case, empty when passed
};

struct VerifyReport {
    std::vector<CheckResult> checks;
    bool all_passed() const;
};

// Identity sweeps
CheckResult check_kd_decomposition(const VerifyOptions& options);
CheckResult check_ls_decomposition(const VerifyOptions& options);
CheckResult check_renormalization(const VerifyOptions& options);

// Finite-difference gradient checks, one per loss; tfnkd runs with its
// weights frozen at the recorded values.
std::vector<CheckResult> check_gradients(const VerifyOptions& options);

// Composition and structure properties
CheckResult check_additivity(const VerifyOptions& options);
CheckResult check_shift_invariance(const VerifyOptions& options);
CheckResult check_grad_row_sums(const VerifyOptions& options);
CheckResult check_degenerate_teacher(const VerifyOptions& options);

// Runs everything above in a fixed order.
VerifyReport run_verification(const VerifyOptions& options);

// Frobenius-norm relative error between an analytic gradient and a central
// finite difference of loss_fn around logits (step h).
double fd_relative_error(const std::function<double(const Matrix&)>& loss_fn,
                         const Matrix& logits, const Matrix& analytic_grad, double h);

} // namespace kd
