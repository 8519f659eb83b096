#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "kd/labels.hpp"
#include "kd/matrix.hpp"

namespace kd {

/// Floor applied to log arguments and renormalizing denominators. Each
/// application is counted and reported through LossOutput::clamp_events.
constexpr double kClampFloor = 1e-12;

/// A teacher row whose temperature-scaled target probability reaches
/// 1 - kClampFloor carries no non-target mass to transfer; the distributed
/// term treats such rows as degenerate (zero contribution, flagged).
constexpr double kOneHotTeacherThreshold = 1.0 - 1e-12;

/// Balance and temperature for the combined distillation loss, plus the
/// ablation switches that turn individual terms on and off.
struct DistillConfig {
    double alpha = 1.5;
    double lambda = 1.0;
    bool use_soft = true;
    bool use_distributed = true;
};

/// Scalar batch-mean loss plus the analytic gradient w.r.t. student logits.
struct LossOutput {
    double loss = 0.0;
    Matrix grad;
    long clamp_events = 0;
    long degenerate_rows = 0;
};

/// Rules for turning the student's own target probabilities into the
/// teacher-free soft-target weight. Every variant except TeacherTarget is
/// computable from the batch's target probabilities and label masses alone.
enum class WeightStrategy {
    RawSt,                 // w = S_t
    StPlusVtMinusMean,     // w = S_t + V_t - mean(S_t)           (default)
    BatchSoftmaxTimesSum,  // w = softmax_over_batch(S_t) * sum(V_t)
    SqrtStMinusMin,        // w = sqrt(S_t - min(S_t))
    StOverMax,             // w = S_t / max(S_t)
    StOverMean,            // w = S_t / mean(S_t)
    TeacherTarget,         // w = T_t from a teacher (not a smoothing rule)
};

/// The six smoothing variants, in declaration order (TeacherTarget excluded).
constexpr std::array<WeightStrategy, 6> kSmoothingStrategies = {
    WeightStrategy::RawSt,
    WeightStrategy::StPlusVtMinusMean,
    WeightStrategy::BatchSoftmaxTimesSum,
    WeightStrategy::SqrtStMinusMin,
    WeightStrategy::StOverMax,
    WeightStrategy::StOverMean,
};

const char* strategy_name(WeightStrategy s);
WeightStrategy strategy_from_name(const std::string& name);

/// Cross-entropy against full label rows: mean_b [ -sum_i V_i log S_i ] with
/// S the temperature-1 softmax. Gradient per row is (S - V) / B.
LossOutput ce_loss(const Matrix& student_logits, const LabelBatch& labels);

/// Cross-entropy against smoothed one-hot labels: off-target mass alpha_ls/C,
/// target mass 1 - alpha_ls*(C-1)/C. Labels must be one-hot; alpha_ls in [0,1).
LossOutput label_smooth_ce(const Matrix& student_logits, const LabelBatch& labels,
                           double alpha_ls);

/// The equivalent two-term form of the smoothed cross-entropy:
/// mean_b [ -(alpha_ls/C) sum_{i!=t} log(S_i/S_t) - log S_t ].
/// Exists to machine-check the identity against label_smooth_ce.
double ls_decomposed(const Matrix& student_logits, const std::vector<std::size_t>& targets,
                     double alpha_ls);

/// Classical distillation loss: mean_b [ -sum_i T_i^l log S_i^l ] with both
/// distributions at temperature lambda and the teacher held constant.
/// Gradient per row is (S^l - T^l) / (lambda * B). The optional
/// scale_lambda_sq switch multiplies loss and gradient by lambda^2.
LossOutput kd_classical(const Matrix& student_logits, const Matrix& teacher_logits,
                        double lambda, bool scale_lambda_sq = false);

/// The target/non-target split of the classical loss:
/// mean_b [ -log S_t^l - sum_{i!=t} T_i^l log(S_i^l / S_t^l) ].
/// Exists to machine-check the identity against kd_classical.
double kd_decomposed(const Matrix& student_logits, const Matrix& teacher_logits,
                     double lambda, const std::vector<std::size_t>& targets);

/// Non-target masses renormalized to sum to 1: out(b,i) = p(b,i) / (1 - p(b,t))
/// for i != t, zero at the target. Denominators are floored at kClampFloor.
struct RenormalizedNonTarget {
    Matrix values;
    std::vector<double> denom;  // the (possibly clamped) 1 - p_t per row
    long clamp_events = 0;
};
RenormalizedNonTarget non_target_renormalize(const Matrix& probs,
                                             const std::vector<std::size_t>& targets);

/// Cross-entropy between the renormalized non-target distributions of
/// teacher and student at temperature lambda:
/// mean_b [ -sum_{i!=t} That_i log Shat_i ]. Gradient per row is
/// (Shat_i - That_i)/(lambda*B) off target and exactly zero at the target.
/// Rows with a one-hot teacher contribute zero and are flagged.
LossOutput distributed_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                            double lambda, const std::vector<std::size_t>& targets);

/// Soft-target term: mean_b [ -T_t log S_t ] at temperature 1, with the
/// teacher's target probability treated as a constant weight in [0,1].
/// Gradient per row is T_t * (S - onehot_t) / B.
LossOutput soft_loss(const Matrix& student_logits,
                     const std::vector<double>& teacher_target_probs,
                     const std::vector<std::size_t>& targets);

/// Combined distillation loss and its per-term breakdown. The cross-entropy
/// and soft terms run at temperature 1; only the distributed term uses the
/// configured temperature, scaled by alpha * lambda^2. Disabled terms are
/// skipped entirely so the ablation baseline is bit-identical to ce_loss.
struct NkdBreakdown {
    LossOutput total;
    double ce_term = 0.0;
    double soft_term = 0.0;
    double distributed_term = 0.0;  // already scaled by alpha * lambda^2
};
NkdBreakdown nkd_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                      const LabelBatch& labels, const DistillConfig& config,
                      bool perfect_teacher = false);

/// Teacher-free soft-target weights from the student's own target
/// probabilities plus batch statistics. Output is a constant per step: no
/// gradient flows through it. Batch max/mean of exactly zero are floored at
/// kClampFloor and flagged through degenerate_events.
std::vector<double> smooth_weight(const std::vector<double>& student_target_probs,
                                  const LabelBatch& labels, WeightStrategy strategy,
                                  long* degenerate_events = nullptr);

/// Teacher-free loss with the weight column supplied explicitly:
/// ce_loss + mean_b [ -w_b log S_t ]. This is the frozen-weight route used
/// by finite-difference checks and trace replay.
LossOutput tfnkd_loss_with_weights(const Matrix& student_logits, const LabelBatch& labels,
                                   const std::vector<double>& weights);

/// Teacher-free combined loss: computes the smoothing weights for this batch,
/// then applies tfnkd_loss_with_weights. Returns the weights used so callers
/// can trace or replay them.
struct TfnkdOutput {
    LossOutput out;
    std::vector<double> weights;
    double ce_term = 0.0;
    double weighted_term = 0.0;
};
TfnkdOutput tfnkd_loss(const Matrix& student_logits, const LabelBatch& labels,
                       WeightStrategy strategy);

/// Target-index probabilities gathered from a probability matrix.
std::vector<double> gather_target(const Matrix& probs, const std::vector<std::size_t>& targets);

} // namespace kd
