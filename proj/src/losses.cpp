#include "kd/losses.hpp"

#include <cmath>
#include <string>

#include "kd/softmax.hpp"

namespace kd {

namespace {

void check_targets(const Matrix& logits, const std::vector<std::size_t>& targets,
                   const char* what) {
    if (targets.size() != logits.rows()) {
        throw DimensionError(std::string(what) + ": target count " +
                             std::to_string(targets.size()) + " does not match batch size " +
                             std::to_string(logits.rows()));
    }
    for (std::size_t t : targets) {
        if (t >= logits.cols()) {
            throw InvalidInputError(std::string(what) + ": target index out of range");
        }
    }
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(what) + ": shape mismatch (" +
                             std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                             std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
    }
}

} // namespace

const char* strategy_name(WeightStrategy s) {
    switch (s) {
        case WeightStrategy::RawSt: return "raw_st";
        case WeightStrategy::StPlusVtMinusMean: return "st_plus_vt_minus_mean";
        case WeightStrategy::BatchSoftmaxTimesSum: return "batch_softmax_times_sum";
        case WeightStrategy::SqrtStMinusMin: return "sqrt_st_minus_min";
        case WeightStrategy::StOverMax: return "st_over_max";
        case WeightStrategy::StOverMean: return "st_over_mean";
        case WeightStrategy::TeacherTarget: return "teacher_target";
    }
    return "unknown";
}

WeightStrategy strategy_from_name(const std::string& name) {
    for (WeightStrategy s : kSmoothingStrategies) {
        if (name == strategy_name(s)) return s;
    }
    if (name == strategy_name(WeightStrategy::TeacherTarget)) return WeightStrategy::TeacherTarget;
    throw InvalidParameterError("unknown weight strategy: " + name);
}

std::vector<double> gather_target(const Matrix& probs, const std::vector<std::size_t>& targets) {
    check_targets(probs, targets, "gather_target");
    std::vector<double> out(probs.rows());
    for (std::size_t b = 0; b < probs.rows(); ++b) out[b] = probs(b, targets[b]);
    return out;
}

LossOutput ce_loss(const Matrix& student_logits, const LabelBatch& labels) {
    check_same_shape(student_logits, labels.values(), "ce_loss");
    require_finite(student_logits, "ce_loss");
    const std::size_t batch = student_logits.rows();
    const Matrix probs = softmax_temp(student_logits, 1.0);
    const Matrix logp = log_softmax_temp(student_logits, 1.0);

    LossOutput out;
    out.grad = Matrix(batch, student_logits.cols());
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const auto v = labels.values().row(b);
        const auto lp = logp.row(b);
        const auto p = probs.row(b);
        auto g = out.grad.row(b);
        double row = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            row -= v[i] * lp[i];
            g[i] = (p[i] - v[i]) / static_cast<double>(batch);
        }
        acc += row;
    }
    out.loss = acc / static_cast<double>(batch);
    return out;
}

LossOutput label_smooth_ce(const Matrix& student_logits, const LabelBatch& labels,
                           double alpha_ls) {
    if (!(alpha_ls >= 0.0) || alpha_ls >= 1.0) {
        throw InvalidParameterError("label_smooth_ce: alpha_ls must lie in [0,1)");
    }
    if (!labels.is_one_hot()) {
        throw InvalidInputError("label_smooth_ce: labels must be one-hot");
    }
    const std::size_t classes = labels.classes();
    const double off = alpha_ls / static_cast<double>(classes);
    const double on = 1.0 - alpha_ls * static_cast<double>(classes - 1) / static_cast<double>(classes);
    Matrix smoothed(labels.rows(), classes, off);
    for (std::size_t b = 0; b < labels.rows(); ++b) {
        smoothed(b, labels.target(b)) = on;
    }
    return ce_loss(student_logits, LabelBatch(std::move(smoothed)));
}

double ls_decomposed(const Matrix& student_logits, const std::vector<std::size_t>& targets,
                     double alpha_ls) {
    if (!(alpha_ls >= 0.0) || alpha_ls >= 1.0) {
        throw InvalidParameterError("ls_decomposed: alpha_ls must lie in [0,1)");
    }
    check_targets(student_logits, targets, "ls_decomposed");
    const Matrix logp = log_softmax_temp(student_logits, 1.0);
    const double off = alpha_ls / static_cast<double>(student_logits.cols());
    double acc = 0.0;
    for (std::size_t b = 0; b < logp.rows(); ++b) {
        const auto lp = logp.row(b);
        const double lpt = lp[targets[b]];
        double ratio_sum = 0.0;
        for (std::size_t i = 0; i < lp.size(); ++i) {
            if (i == targets[b]) continue;
            ratio_sum += lp[i] - lpt;
        }
        acc += -off * ratio_sum - lpt;
    }
    return acc / static_cast<double>(logp.rows());
}

LossOutput kd_classical(const Matrix& student_logits, const Matrix& teacher_logits,
                        double lambda, bool scale_lambda_sq) {
    check_same_shape(student_logits, teacher_logits, "kd_classical");
    require_finite(student_logits, "kd_classical");
    require_finite(teacher_logits, "kd_classical");
    const std::size_t batch = student_logits.rows();
    const Matrix sp = softmax_temp(student_logits, lambda);
    const Matrix slogp = log_softmax_temp(student_logits, lambda);
    const Matrix tp = softmax_temp(teacher_logits, lambda);

    const double scale = scale_lambda_sq ? lambda * lambda : 1.0;
    LossOutput out;
    out.grad = Matrix(batch, student_logits.cols());
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const auto t = tp.row(b);
        const auto lp = slogp.row(b);
        const auto s = sp.row(b);
        auto g = out.grad.row(b);
        double row = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            row -= t[i] * lp[i];
            g[i] = scale * (s[i] - t[i]) / (lambda * static_cast<double>(batch));
        }
        acc += row;
    }
    out.loss = scale * acc / static_cast<double>(batch);
    return out;
}

double kd_decomposed(const Matrix& student_logits, const Matrix& teacher_logits,
                     double lambda, const std::vector<std::size_t>& targets) {
    check_same_shape(student_logits, teacher_logits, "kd_decomposed");
    check_targets(student_logits, targets, "kd_decomposed");
    const Matrix slogp = log_softmax_temp(student_logits, lambda);
    const Matrix tp = softmax_temp(teacher_logits, lambda);
    double acc = 0.0;
    for (std::size_t b = 0; b < slogp.rows(); ++b) {
        const auto lp = slogp.row(b);
        const auto t = tp.row(b);
        const double lpt = lp[targets[b]];
        double row = -lpt;
        for (std::size_t i = 0; i < lp.size(); ++i) {
            if (i == targets[b]) continue;
            row -= t[i] * (lp[i] - lpt);
        }
        acc += row;
    }
    return acc / static_cast<double>(slogp.rows());
}

RenormalizedNonTarget non_target_renormalize(const Matrix& probs,
                                             const std::vector<std::size_t>& targets) {
    check_targets(probs, targets, "non_target_renormalize");
    RenormalizedNonTarget out;
    out.values = Matrix(probs.rows(), probs.cols());
    out.denom.resize(probs.rows());
    for (std::size_t b = 0; b < probs.rows(); ++b) {
        const auto p = probs.row(b);
        auto r = out.values.row(b);
        // Summing the off-target mass is algebraically 1 - p[target] but has
        // full relative precision even when the target probability saturates.
        double denom = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (i != targets[b]) denom += p[i];
        }
        if (denom < kClampFloor) {
            denom = kClampFloor;
            ++out.clamp_events;
        }
        out.denom[b] = denom;
        for (std::size_t i = 0; i < p.size(); ++i) {
            r[i] = (i == targets[b]) ? 0.0 : p[i] / denom;
        }
    }
    return out;
}

LossOutput distributed_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                            double lambda, const std::vector<std::size_t>& targets) {
    check_same_shape(student_logits, teacher_logits, "distributed_loss");
    check_targets(student_logits, targets, "distributed_loss");
    if (student_logits.cols() < 2) {
        throw InvalidInputError("distributed_loss: need at least 2 classes");
    }
    require_finite(student_logits, "distributed_loss");
    require_finite(teacher_logits, "distributed_loss");

    const std::size_t batch = student_logits.rows();
    const Matrix sp = softmax_temp(student_logits, lambda);
    const Matrix slogp = log_softmax_temp(student_logits, lambda);
    const Matrix tp = softmax_temp(teacher_logits, lambda);

    LossOutput out;
    out.grad = Matrix(batch, student_logits.cols());
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t t = targets[b];
        if (tp(b, t) >= kOneHotTeacherThreshold) {
            ++out.degenerate_rows;  // no non-target mass to transfer
            continue;
        }
        const auto s = sp.row(b);
        const auto lp = slogp.row(b);
        const auto tr = tp.row(b);
        auto g = out.grad.row(b);

        // Off-target sums instead of 1 - p[target]: same value, but immune to
        // the cancellation that otherwise poisons confident rows.
        double t_denom = 0.0;
        double s_denom = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i == t) continue;
            t_denom += tr[i];
            s_denom += s[i];
        }
        if (t_denom < kClampFloor) { t_denom = kClampFloor; ++out.clamp_events; }
        if (s_denom < kClampFloor) { s_denom = kClampFloor; ++out.clamp_events; }
        const double log_s_denom = std::log(s_denom);

        double row = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i == t) continue;
            const double t_hat = tr[i] / t_denom;
            const double s_hat = s[i] / s_denom;
            row -= t_hat * (lp[i] - log_s_denom);
            // Differentiating through both S_i and the renormalizer collapses
            // to the renormalized-distribution difference off target and
            // exactly zero at the target.
            g[i] = (s_hat - t_hat) / (lambda * static_cast<double>(batch));
        }
        acc += row;
    }
    out.loss = acc / static_cast<double>(batch);
    return out;
}

LossOutput soft_loss(const Matrix& student_logits,
                     const std::vector<double>& teacher_target_probs,
                     const std::vector<std::size_t>& targets) {
    check_targets(student_logits, targets, "soft_loss");
    if (teacher_target_probs.size() != student_logits.rows()) {
        throw DimensionError("soft_loss: weight count does not match batch size");
    }
    for (double w : teacher_target_probs) {
        if (!(w >= 0.0) || w > 1.0) {
            throw InvalidParameterError("soft_loss: teacher target probability outside [0,1]");
        }
    }
    require_finite(student_logits, "soft_loss");
    const std::size_t batch = student_logits.rows();
    const Matrix probs = softmax_temp(student_logits, 1.0);
    const Matrix logp = log_softmax_temp(student_logits, 1.0);

    LossOutput out;
    out.grad = Matrix(batch, student_logits.cols());
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const double w = teacher_target_probs[b];
        const std::size_t t = targets[b];
        acc -= w * logp(b, t);
        const auto p = probs.row(b);
        auto g = out.grad.row(b);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double e = (i == t) ? 1.0 : 0.0;
            g[i] = w * (p[i] - e) / static_cast<double>(batch);
        }
    }
    out.loss = acc / static_cast<double>(batch);
    return out;
}

NkdBreakdown nkd_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                      const LabelBatch& labels, const DistillConfig& config,
                      bool perfect_teacher) {
    check_same_shape(student_logits, teacher_logits, "nkd_loss");
    if (!(config.alpha >= 0.0)) {
        throw InvalidParameterError("nkd_loss: alpha must be nonnegative");
    }
    const std::vector<std::size_t>& targets = labels.targets();

    NkdBreakdown result;
    LossOutput ce = ce_loss(student_logits, labels);
    result.ce_term = ce.loss;
    result.total = std::move(ce);

    if (config.use_soft) {
        std::vector<double> t_target;
        if (perfect_teacher) {
            t_target.assign(student_logits.rows(), 1.0);
        } else {
            t_target = gather_target(softmax_temp(teacher_logits, 1.0), targets);
        }
        const LossOutput soft = soft_loss(student_logits, t_target, targets);
        result.soft_term = soft.loss;
        result.total.loss += soft.loss;
        for (std::size_t i = 0; i < result.total.grad.size(); ++i) {
            result.total.grad.data()[i] += soft.grad.data()[i];
        }
        result.total.clamp_events += soft.clamp_events;
    }
    if (config.use_distributed) {
        const LossOutput dist =
            distributed_loss(student_logits, teacher_logits, config.lambda, targets);
        const double scale = config.alpha * config.lambda * config.lambda;
        result.distributed_term = scale * dist.loss;
        result.total.loss += scale * dist.loss;
        for (std::size_t i = 0; i < result.total.grad.size(); ++i) {
            result.total.grad.data()[i] += scale * dist.grad.data()[i];
        }
        result.total.clamp_events += dist.clamp_events;
        result.total.degenerate_rows += dist.degenerate_rows;
    }
    return result;
}

std::vector<double> smooth_weight(const std::vector<double>& student_target_probs,
                                  const LabelBatch& labels, WeightStrategy strategy,
                                  long* degenerate_events) {
    if (student_target_probs.empty()) {
        throw InvalidInputError("smooth_weight: empty batch");
    }
    if (student_target_probs.size() != labels.rows()) {
        throw DimensionError("smooth_weight: probability count does not match label batch");
    }
    for (double s : student_target_probs) {
        if (!(s >= 0.0) || s > 1.0) {
            throw InvalidParameterError("smooth_weight: target probability outside [0,1]");
        }
    }
    if (strategy == WeightStrategy::TeacherTarget) {
        throw InvalidParameterError("smooth_weight: TeacherTarget is not a smoothing rule");
    }

    const std::span<const double> st(student_target_probs);
    const std::size_t batch = st.size();
    long degenerate = 0;
    std::vector<double> w(batch);

    switch (strategy) {
        case WeightStrategy::RawSt:
            for (std::size_t b = 0; b < batch; ++b) w[b] = st[b];
            break;
        case WeightStrategy::StPlusVtMinusMean: {
            const double mean = vec_mean(st);
            for (std::size_t b = 0; b < batch; ++b) {
                w[b] = st[b] + labels.target_value(b) - mean;
            }
            break;
        }
        case WeightStrategy::BatchSoftmaxTimesSum: {
            const std::vector<double> sm = vec_softmax(st);
            double v_sum = 0.0;
            for (std::size_t b = 0; b < batch; ++b) v_sum += labels.target_value(b);
            for (std::size_t b = 0; b < batch; ++b) w[b] = sm[b] * v_sum;
            break;
        }
        case WeightStrategy::SqrtStMinusMin: {
            const double mn = vec_min(st);
            for (std::size_t b = 0; b < batch; ++b) w[b] = std::sqrt(st[b] - mn);
            break;
        }
        case WeightStrategy::StOverMax: {
            double mx = vec_max(st);
            if (mx == 0.0) { mx = kClampFloor; ++degenerate; }
            for (std::size_t b = 0; b < batch; ++b) w[b] = st[b] / mx;
            break;
        }
        case WeightStrategy::StOverMean: {
            double mean = vec_mean(st);
            if (mean == 0.0) { mean = kClampFloor; ++degenerate; }
            for (std::size_t b = 0; b < batch; ++b) w[b] = st[b] / mean;
            break;
        }
        case WeightStrategy::TeacherTarget:
            break;  // unreachable, rejected above
    }

    if (degenerate_events != nullptr) *degenerate_events += degenerate;
    return w;
}

LossOutput tfnkd_loss_with_weights(const Matrix& student_logits, const LabelBatch& labels,
                                   const std::vector<double>& weights) {
    check_same_shape(student_logits, labels.values(), "tfnkd_loss_with_weights");
    if (weights.size() != student_logits.rows()) {
        throw DimensionError("tfnkd_loss_with_weights: weight count does not match batch size");
    }
    const std::size_t batch = student_logits.rows();
    const Matrix probs = softmax_temp(student_logits, 1.0);
    const Matrix logp = log_softmax_temp(student_logits, 1.0);

    LossOutput out = ce_loss(student_logits, labels);
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const double w = weights[b];
        const std::size_t t = labels.target(b);
        acc -= w * logp(b, t);
        const auto p = probs.row(b);
        auto g = out.grad.row(b);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double e = (i == t) ? 1.0 : 0.0;
            g[i] += w * (p[i] - e) / static_cast<double>(batch);
        }
    }
    out.loss += acc / static_cast<double>(batch);
    return out;
}

TfnkdOutput tfnkd_loss(const Matrix& student_logits, const LabelBatch& labels,
                       WeightStrategy strategy) {
    check_same_shape(student_logits, labels.values(), "tfnkd_loss");
    require_finite(student_logits, "tfnkd_loss");
    const Matrix probs = softmax_temp(student_logits, 1.0);
    const std::vector<double> st = gather_target(probs, labels.targets());

    TfnkdOutput result;
    long degenerate = 0;
    result.weights = smooth_weight(st, labels, strategy, &degenerate);
    result.out = tfnkd_loss_with_weights(student_logits, labels, result.weights);
    result.out.degenerate_rows += degenerate;

    const LossOutput ce = ce_loss(student_logits, labels);
    result.ce_term = ce.loss;
    result.weighted_term = result.out.loss - ce.loss;
    return result;
}

} // namespace kd
