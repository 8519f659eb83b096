#include "kd/verify.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "kd/rng.hpp"
#include "kd/softmax.hpp"

namespace kd {

namespace {

constexpr std::array<std::size_t, 4> kClassSweep = {2, 3, 10, 100};
constexpr std::array<double, 4> kLambdaSweep = {0.5, 1.0, 2.0, 4.0};
constexpr std::array<double, 3> kAlphaLsSweep = {0.05, 0.1, 0.2};

Matrix random_logits(SeededRng& rng, std::size_t rows, std::size_t cols, double spread = 2.0) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = spread * rng.normal();
    return m;
}

std::vector<std::size_t> random_targets(SeededRng& rng, std::size_t rows, std::size_t cols) {
    std::vector<std::size_t> t(rows);
    for (std::size_t b = 0; b < rows; ++b) t[b] = static_cast<std::size_t>(rng.below(cols));
    return t;
}

LabelBatch random_one_hot(SeededRng& rng, std::size_t rows, std::size_t cols) {
    return LabelBatch::one_hot(random_targets(rng, rows, cols), cols);
}

// One-hot rows blended pairwise, mimicking mixup output; rows still sum to 1.
LabelBatch random_soft_labels(SeededRng& rng, std::size_t rows, std::size_t cols) {
    Matrix values(rows, cols);
    for (std::size_t b = 0; b < rows; ++b) {
        const std::size_t a = static_cast<std::size_t>(rng.below(cols));
        std::size_t c = static_cast<std::size_t>(rng.below(cols));
        const double lam = 0.55 + 0.4 * rng.uniform();  // keep a strict argmax
        if (a == c) {
            values(b, a) = 1.0;
        } else {
            values(b, a) = lam;
            values(b, c) = 1.0 - lam;
        }
    }
    return LabelBatch(std::move(values));
}

struct WorstCase {
    double residual = 0.0;
    std::string detail;

    void consider(double r, const std::string& d) {
        if (r > residual) {
            residual = r;
            detail = d;
        }
    }
};

CheckResult finish(const std::string& name, const WorstCase& worst, double tol) {
    CheckResult result;
    result.name = name;
    result.max_residual = worst.residual;
    result.tolerance = tol;
    result.passed = worst.residual < tol;
    if (!result.passed) result.detail = worst.detail;
    return result;
}

std::string case_tag(std::size_t trial, std::size_t rows, std::size_t cols, double lambda) {
    std::ostringstream os;
    os << "trial " << trial << ": B=" << rows << " C=" << cols << " lambda=" << lambda;
    return os.str();
}

} // namespace

bool VerifyReport::all_passed() const {
    return std::all_of(checks.begin(), checks.end(),
                       [](const CheckResult& c) { return c.passed; });
}

double fd_relative_error(const std::function<double(const Matrix&)>& loss_fn,
                         const Matrix& logits, const Matrix& analytic_grad, double h) {
    Matrix probe = logits;
    double diff_sq = 0.0;
    double analytic_sq = 0.0;
    double fd_sq = 0.0;
    for (std::size_t k = 0; k < probe.size(); ++k) {
        const double saved = probe.data()[k];
        probe.data()[k] = saved + h;
        const double up = loss_fn(probe);
        probe.data()[k] = saved - h;
        const double down = loss_fn(probe);
        probe.data()[k] = saved;
        const double fd = (up - down) / (2.0 * h);
        const double an = analytic_grad.data()[k];
        diff_sq += (fd - an) * (fd - an);
        analytic_sq += an * an;
        fd_sq += fd * fd;
    }
    // When both gradients sit below the finite-difference resolution
    // (roundoff of an O(1) loss divided by the step), relative error would be
    // noise over noise; compare absolutely instead. Two-class distributed
    // losses hit this: their non-target distribution is a point mass, so the
    // true gradient is identically zero.
    constexpr double kNoiseFloor = 1e-8;
    const double denom = std::max(std::sqrt(analytic_sq), std::sqrt(fd_sq));
    const double diff = std::sqrt(diff_sq);
    return denom < kNoiseFloor ? diff : diff / denom;
}

CheckResult check_kd_decomposition(const VerifyOptions& options) {
    SeededRng rng(derive_seed(options.seed, 11));
    WorstCase worst;
    for (std::size_t trial = 0; trial < options.trials; ++trial) {
        const std::size_t cols = kClassSweep[trial % kClassSweep.size()];
        const double lambda = kLambdaSweep[(trial / kClassSweep.size()) % kLambdaSweep.size()];
        const std::size_t rows = 1 + trial % 4;
        const Matrix student = random_logits(rng, rows, cols);
        const Matrix teacher = random_logits(rng, rows, cols);
        const std::vector<std::size_t> targets = random_targets(rng, rows, cols);
        const double classical = kd_classical(student, teacher, lambda).loss;
        const double decomposed =
            options.kd_decomposed_scale * kd_decomposed(student, teacher, lambda, targets);
        worst.consider(std::abs(classical - decomposed), case_tag(trial, rows, cols, lambda));
    }
    return finish("kd decomposition", worst, 1e-9);
}

CheckResult check_ls_decomposition(const VerifyOptions& options) {
    SeededRng rng(derive_seed(options.seed, 12));
    WorstCase worst;
    for (std::size_t trial = 0; trial < options.trials; ++trial) {
        const std::size_t cols = kClassSweep[trial % kClassSweep.size()];
        const double alpha_ls = kAlphaLsSweep[(trial / kClassSweep.size()) % kAlphaLsSweep.size()];
        const std::size_t rows = 1 + trial % 4;
        const Matrix student = random_logits(rng, rows, cols);
        const LabelBatch labels = random_one_hot(rng, rows, cols);
        const double direct = label_smooth_ce(student, labels, alpha_ls).loss;
        const double decomposed = ls_decomposed(student, labels.targets(), alpha_ls);
        worst.consider(std::abs(direct - decomposed), case_tag(trial, rows, cols, alpha_ls));
    }
    return finish("label-smooth decomposition", worst, 1e-9);
}

CheckResult check_renormalization(const VerifyOptions& options) {
    SeededRng rng(derive_seed(options.seed, 13));
    WorstCase worst;
    for (std::size_t trial = 0; trial < options.trials; ++trial) {
        const std::size_t cols = kClassSweep[trial % kClassSweep.size()];
        if (cols < 2) continue;
        const double lambda = kLambdaSweep[(trial / kClassSweep.size()) % kLambdaSweep.size()];
        const std::size_t rows = 1 + trial % 4;
        const Matrix probs = softmax_temp(random_logits(rng, rows, cols), lambda);
        const std::vector<std::size_t> targets = random_targets(rng, rows, cols);
        const RenormalizedNonTarget renorm = non_target_renormalize(probs, targets);
        for (std::size_t b = 0; b < rows; ++b) {
            if (renorm.denom[b] <= 1e-6) continue;  // degenerate, excluded by contract
            double sum = 0.0;
            const auto row = renorm.values.row(b);
            for (std::size_t i = 0; i < cols; ++i) {
                if (i != targets[b]) sum += row[i];
            }
            worst.consider(std::abs(sum - 1.0), case_tag(trial, rows, cols, lambda));
        }
    }
    return finish("non-target renormalization", worst, 1e-10);
}

std::vector<CheckResult> check_gradients(const VerifyOptions& options) {
    constexpr double kH = 1e-5;
    constexpr double kTol = 1e-5;
    std::vector<CheckResult> results;

    const auto run = [&](const std::string& name, std::uint64_t stream, auto make_case) {
        SeededRng rng(derive_seed(options.seed, stream));
        WorstCase worst;
        for (std::size_t trial = 0; trial < options.grad_instances; ++trial) {
            const std::size_t cols = kClassSweep[trial % kClassSweep.size()];
            const std::size_t rows = 1 + trial % 4;
            const Matrix logits = random_logits(rng, rows, cols);
            auto [loss_fn, grad] = make_case(rng, logits, trial);
            const double rel = fd_relative_error(loss_fn, logits, grad, kH);
            worst.consider(rel, case_tag(trial, rows, cols, 0.0));
        }
        results.push_back(finish(name, worst, kTol));
    };

    run("grad ce", 21, [](SeededRng& rng, const Matrix& logits, std::size_t trial) {
        const LabelBatch labels = (trial % 3 == 0)
                                      ? random_soft_labels(rng, logits.rows(), logits.cols())
                                      : random_one_hot(rng, logits.rows(), logits.cols());
        auto fn = [labels](const Matrix& x) { return ce_loss(x, labels).loss; };
        return std::make_pair(std::function<double(const Matrix&)>(fn),
                              ce_loss(logits, labels).grad);
    });

    run("grad label_smooth_ce", 22, [](SeededRng& rng, const Matrix& logits, std::size_t trial) {
        const LabelBatch labels = random_one_hot(rng, logits.rows(), logits.cols());
        const double alpha_ls = kAlphaLsSweep[trial % kAlphaLsSweep.size()];
        auto fn = [labels, alpha_ls](const Matrix& x) {
            return label_smooth_ce(x, labels, alpha_ls).loss;
        };
        return std::make_pair(std::function<double(const Matrix&)>(fn),
                              label_smooth_ce(logits, labels, alpha_ls).grad);
    });

    run("grad kd_classical", 23, [](SeededRng& rng, const Matrix& logits, std::size_t trial) {
        const Matrix teacher = random_logits(rng, logits.rows(), logits.cols());
        const double lambda = kLambdaSweep[trial % kLambdaSweep.size()];
        const bool scale_sq = trial % 2 == 0;
        auto fn = [teacher, lambda, scale_sq](const Matrix& x) {
            return kd_classical(x, teacher, lambda, scale_sq).loss;
        };
        return std::make_pair(std::function<double(const Matrix&)>(fn),
                              kd_classical(logits, teacher, lambda, scale_sq).grad);
    });

    run("grad distributed", 24, [](SeededRng& rng, const Matrix& logits, std::size_t trial) {
        const Matrix teacher = random_logits(rng, logits.rows(), logits.cols());
        const double lambda = kLambdaSweep[trial % kLambdaSweep.size()];
        const std::vector<std::size_t> targets =
            random_targets(rng, logits.rows(), logits.cols());
        auto fn = [teacher, lambda, targets](const Matrix& x) {
            return distributed_loss(x, teacher, lambda, targets).loss;
        };
        return std::make_pair(std::function<double(const Matrix&)>(fn),
                              distributed_loss(logits, teacher, lambda, targets).grad);
    });

    run("grad soft", 25, [](SeededRng& rng, const Matrix& logits, std::size_t) {
        const std::vector<std::size_t> targets =
            random_targets(rng, logits.rows(), logits.cols());
        std::vector<double> t_target(logits.rows());
        for (double& v : t_target) v = rng.uniform();
        auto fn = [t_target, targets](const Matrix& x) {
            return soft_loss(x, t_target, targets).loss;
        };
        return std::make_pair(std::function<double(const Matrix&)>(fn),
                              soft_loss(logits, t_target, targets).grad);
    });

    run("grad nkd", 26, [](SeededRng& rng, const Matrix& logits, std::size_t trial) {
        const Matrix teacher = random_logits(rng, logits.rows(), logits.cols());
        const LabelBatch labels = random_one_hot(rng, logits.rows(), logits.cols());
        DistillConfig config;
        config.lambda = kLambdaSweep[trial % kLambdaSweep.size()];
        config.alpha = (trial % 3 == 0) ? 0.5 : 1.5;
        auto fn = [teacher, labels, config](const Matrix& x) {
            return nkd_loss(x, teacher, labels, config).total.loss;
        };
        return std::make_pair(std::function<double(const Matrix&)>(fn),
                              nkd_loss(logits, teacher, labels, config).total.grad);
    });

    // The detachment contract: finite differences run with the weight frozen
    // at its recorded value must reproduce the analytic tfnkd gradient.
    run("grad tfnkd (frozen w)", 27, [](SeededRng& rng, const Matrix& logits, std::size_t trial) {
        const LabelBatch labels = random_one_hot(rng, logits.rows(), logits.cols());
        const WeightStrategy strategy =
            kSmoothingStrategies[trial % kSmoothingStrategies.size()];
        TfnkdOutput out = tfnkd_loss(logits, labels, strategy);
        std::vector<double> weights = out.weights;
        auto fn = [labels, weights](const Matrix& x) {
            return tfnkd_loss_with_weights(x, labels, weights).loss;
        };
        (void)rng;
        return std::make_pair(std::function<double(const Matrix&)>(fn),
                              std::move(out.out.grad));
    });

    return results;
}

CheckResult check_additivity(const VerifyOptions& options) {
    SeededRng rng(derive_seed(options.seed, 31));
    WorstCase worst;
    const std::size_t trials = std::max<std::size_t>(options.trials / 4, 50);
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t cols = kClassSweep[trial % kClassSweep.size()];
        const std::size_t rows = 1 + trial % 4;
        const Matrix student = random_logits(rng, rows, cols);
        const Matrix teacher = random_logits(rng, rows, cols);
        const LabelBatch labels = random_one_hot(rng, rows, cols);
        DistillConfig config;
        config.lambda = kLambdaSweep[trial % kLambdaSweep.size()];
        config.alpha = 1.5;

        const NkdBreakdown nkd = nkd_loss(student, teacher, labels, config);
        const LossOutput ce = ce_loss(student, labels);
        const std::vector<double> t_target =
            gather_target(softmax_temp(teacher, 1.0), labels.targets());
        const LossOutput soft = soft_loss(student, t_target, labels.targets());
        const LossOutput dist =
            distributed_loss(student, teacher, config.lambda, labels.targets());
        const double scale = config.alpha * config.lambda * config.lambda;

        const std::string tag = case_tag(trial, rows, cols, config.lambda);
        worst.consider(std::abs(nkd.total.loss - (ce.loss + soft.loss + scale * dist.loss)),
                       tag);
        for (std::size_t k = 0; k < nkd.total.grad.size(); ++k) {
            const double expected =
                ce.grad.data()[k] + soft.grad.data()[k] + scale * dist.grad.data()[k];
            worst.consider(std::abs(nkd.total.grad.data()[k] - expected), tag);
        }
    }
    return finish("nkd additivity", worst, 1e-12);
}

CheckResult check_shift_invariance(const VerifyOptions& options) {
    SeededRng rng(derive_seed(options.seed, 32));
    WorstCase worst;
    const std::size_t trials = std::max<std::size_t>(options.trials / 4, 50);
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t cols = kClassSweep[trial % kClassSweep.size()];
        const std::size_t rows = 1 + trial % 4;
        const Matrix student = random_logits(rng, rows, cols);
        const Matrix teacher = random_logits(rng, rows, cols);
        const LabelBatch labels = random_one_hot(rng, rows, cols);
        const std::vector<std::size_t>& targets = labels.targets();
        const double lambda = kLambdaSweep[trial % kLambdaSweep.size()];

        Matrix shifted = student;
        for (std::size_t b = 0; b < rows; ++b) {
            const double c = rng.uniform(-5.0, 5.0);
            for (double& v : shifted.row(b)) v += c;
        }

        std::vector<double> t_target(rows);
        for (double& v : t_target) v = rng.uniform();
        DistillConfig config;
        config.lambda = lambda;

        const std::string tag = case_tag(trial, rows, cols, lambda);
        worst.consider(std::abs(ce_loss(student, labels).loss - ce_loss(shifted, labels).loss),
                       tag + " [ce]");
        worst.consider(std::abs(label_smooth_ce(student, labels, 0.1).loss -
                                label_smooth_ce(shifted, labels, 0.1).loss),
                       tag + " [label_smooth_ce]");
        worst.consider(std::abs(kd_classical(student, teacher, lambda).loss -
                                kd_classical(shifted, teacher, lambda).loss),
                       tag + " [kd_classical]");
        worst.consider(std::abs(distributed_loss(student, teacher, lambda, targets).loss -
                                distributed_loss(shifted, teacher, lambda, targets).loss),
                       tag + " [distributed]");
        worst.consider(std::abs(soft_loss(student, t_target, targets).loss -
                                soft_loss(shifted, t_target, targets).loss),
                       tag + " [soft]");
        worst.consider(std::abs(nkd_loss(student, teacher, labels, config).total.loss -
                                nkd_loss(shifted, teacher, labels, config).total.loss),
                       tag + " [nkd]");
        worst.consider(
            std::abs(tfnkd_loss(student, labels, WeightStrategy::StPlusVtMinusMean).out.loss -
                     tfnkd_loss(shifted, labels, WeightStrategy::StPlusVtMinusMean).out.loss),
            tag + " [tfnkd]");
    }
    return finish("shift invariance", worst, 1e-9);
}

CheckResult check_grad_row_sums(const VerifyOptions& options) {
    SeededRng rng(derive_seed(options.seed, 33));
    WorstCase worst;
    const std::size_t trials = std::max<std::size_t>(options.trials / 4, 50);
    const auto row_sum_residual = [&](const Matrix& grad, const std::string& tag) {
        for (std::size_t b = 0; b < grad.rows(); ++b) {
            double sum = 0.0;
            for (double v : grad.row(b)) sum += v;
            worst.consider(std::abs(sum), tag);
        }
    };
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t cols = kClassSweep[trial % kClassSweep.size()];
        const std::size_t rows = 1 + trial % 4;
        const Matrix student = random_logits(rng, rows, cols);
        const Matrix teacher = random_logits(rng, rows, cols);
        const LabelBatch labels = random_one_hot(rng, rows, cols);
        const double lambda = kLambdaSweep[trial % kLambdaSweep.size()];
        std::vector<double> t_target(rows);
        for (double& v : t_target) v = rng.uniform();
        DistillConfig config;
        config.lambda = lambda;

        const std::string tag = case_tag(trial, rows, cols, lambda);
        row_sum_residual(ce_loss(student, labels).grad, tag + " [ce]");
        row_sum_residual(label_smooth_ce(student, labels, 0.1).grad,
                         tag + " [label_smooth_ce]");
        row_sum_residual(kd_classical(student, teacher, lambda).grad, tag + " [kd_classical]");
        row_sum_residual(distributed_loss(student, teacher, lambda, labels.targets()).grad,
                         tag + " [distributed]");
        row_sum_residual(soft_loss(student, t_target, labels.targets()).grad, tag + " [soft]");
        row_sum_residual(nkd_loss(student, teacher, labels, config).total.grad, tag + " [nkd]");
        row_sum_residual(
            tfnkd_loss(student, labels, WeightStrategy::StPlusVtMinusMean).out.grad,
            tag + " [tfnkd]");
    }
    return finish("grad row sums", worst, 1e-10);
}

CheckResult check_degenerate_teacher(const VerifyOptions& options) {
    SeededRng rng(derive_seed(options.seed, 34));
    WorstCase worst;
    const std::size_t trials = std::max<std::size_t>(options.trials / 10, 20);
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t cols = kClassSweep[trial % kClassSweep.size()];
        const std::size_t rows = 1 + trial % 3;
        const Matrix student = random_logits(rng, rows, cols);
        const std::vector<std::size_t> targets = random_targets(rng, rows, cols);
        // A huge target logit drives T_t^lambda past the one-hot threshold.
        Matrix teacher = random_logits(rng, rows, cols);
        for (std::size_t b = 0; b < rows; ++b) teacher(b, targets[b]) = 200.0;

        const LossOutput out = distributed_loss(student, teacher, 1.0, targets);
        const std::string tag = case_tag(trial, rows, cols, 1.0);
        worst.consider(std::abs(out.loss), tag);
        for (double g : out.grad.data()) worst.consider(std::abs(g), tag);
        if (out.degenerate_rows != static_cast<long>(rows)) {
            worst.consider(1.0, tag + " (degeneracy flag missing)");
        }
    }
    return finish("degenerate teacher", worst, 1e-15);
}

VerifyReport run_verification(const VerifyOptions& options) {
    VerifyReport report;
    report.checks.push_back(check_kd_decomposition(options));
    report.checks.push_back(check_ls_decomposition(options));
    report.checks.push_back(check_renormalization(options));
    for (CheckResult& c : check_gradients(options)) report.checks.push_back(std::move(c));
    report.checks.push_back(check_additivity(options));
    report.checks.push_back(check_shift_invariance(options));
    report.checks.push_back(check_grad_row_sums(options));
    report.checks.push_back(check_degenerate_teacher(options));
    return report;
}

} // namespace kd
