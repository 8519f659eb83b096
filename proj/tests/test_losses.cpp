#include <cmath>
#include <vector>

#include "doctest.h"
#include "kd/losses.hpp"
#include "kd/softmax.hpp"

using kd::DistillConfig;
using kd::LabelBatch;
using kd::LossOutput;
using kd::Matrix;
using kd::WeightStrategy;

namespace {

// Logits whose temperature-1 softmax reproduces the given probabilities:
// log p works because each row already sums to one.
Matrix logits_for(const std::vector<std::vector<double>>& probs) {
    Matrix out(probs.size(), probs.front().size());
    for (std::size_t r = 0; r < probs.size(); ++r)
        for (std::size_t c = 0; c < probs[r].size(); ++c) out(r, c) = std::log(probs[r][c]);
    return out;
}

} // namespace

TEST_CASE("ce_loss frozen values") {
    SUBCASE("uniform two-class, one-hot target") {
        const LossOutput out = kd::ce_loss(Matrix(1, 2), LabelBatch::one_hot({0}, 2));
        CHECK(out.loss == doctest::Approx(0.6931471805599453).epsilon(1e-14));
    }
    SUBCASE("soft labels") {
        const LossOutput out =
            kd::ce_loss(Matrix(1, 2, {1.0, 0.0}), LabelBatch(Matrix(1, 2, {0.8, 0.2})));
        CHECK(out.loss == doctest::Approx(0.5132616875182229).epsilon(1e-14));
        CHECK(out.grad(0, 0) == doctest::Approx(-0.06894142136999515).epsilon(1e-12));
        CHECK(out.grad(0, 1) == doctest::Approx(0.06894142136999509).epsilon(1e-12));
    }
    SUBCASE("batch mean divides the gradient") {
        const LossOutput one = kd::ce_loss(Matrix(1, 2, {1.0, -1.0}), LabelBatch::one_hot({0}, 2));
        const LossOutput two =
            kd::ce_loss(Matrix(2, 2, {1.0, -1.0, 1.0, -1.0}), LabelBatch::one_hot({0, 0}, 2));
        CHECK(two.loss == doctest::Approx(one.loss).epsilon(1e-14));
        CHECK(two.grad(0, 0) == doctest::Approx(0.5 * one.grad(0, 0)).epsilon(1e-14));
    }
    SUBCASE("shape mismatch rejected") {
        CHECK_THROWS_AS(kd::ce_loss(Matrix(1, 3), LabelBatch::one_hot({0}, 2)),
                        kd::DimensionError);
    }
}

TEST_CASE("label_smooth_ce") {
    SUBCASE("uniform logits make all labelings equivalent") {
        const LossOutput out =
            kd::label_smooth_ce(Matrix(1, 2), LabelBatch::one_hot({0}, 2), 0.1);
        CHECK(out.loss == doctest::Approx(0.6931471805599453).epsilon(1e-14));
    }
    SUBCASE("alpha 0 equals plain ce") {
        const Matrix logits(2, 3, {0.3, -1.0, 0.7, 2.0, 0.0, -0.5});
        const LabelBatch labels = LabelBatch::one_hot({2, 0}, 3);
        const LossOutput ls = kd::label_smooth_ce(logits, labels, 0.0);
        const LossOutput ce = kd::ce_loss(logits, labels);
        CHECK(ls.loss == ce.loss);
        for (std::size_t k = 0; k < ls.grad.size(); ++k)
            CHECK(ls.grad.data()[k] == ce.grad.data()[k]);
    }
    SUBCASE("smoothed row is a proper distribution: matches ce on smoothed labels") {
        const Matrix logits(1, 4, {0.2, 1.0, -0.3, 0.0});
        const double alpha = 0.2;
        const LossOutput ls = kd::label_smooth_ce(logits, LabelBatch::one_hot({1}, 4), alpha);
        Matrix smoothed(1, 4, alpha / 4.0);
        smoothed(0, 1) = 1.0 - alpha * 3.0 / 4.0;
        const LossOutput ce = kd::ce_loss(logits, LabelBatch(smoothed));
        CHECK(ls.loss == doctest::Approx(ce.loss).epsilon(1e-14));
    }
    SUBCASE("requires one-hot labels and alpha in [0,1)") {
        const Matrix logits(1, 2);
        CHECK_THROWS_AS(kd::label_smooth_ce(logits, LabelBatch(Matrix(1, 2, {0.6, 0.4})), 0.1),
                        kd::InvalidInputError);
        CHECK_THROWS_AS(kd::label_smooth_ce(logits, LabelBatch::one_hot({0}, 2), 1.0),
                        kd::InvalidParameterError);
        CHECK_THROWS_AS(kd::label_smooth_ce(logits, LabelBatch::one_hot({0}, 2), -0.1),
                        kd::InvalidParameterError);
    }
}

TEST_CASE("ls_decomposed matches label_smooth_ce") {
    const Matrix logits(3, 4, {0.2, -0.5, 1.3, 0.0, 2.0, 1.9, -3.0, 0.4, 0.0, 0.0, 0.0, 0.0});
    const std::vector<std::size_t> targets = {2, 0, 3};
    for (double alpha : {0.05, 0.1, 0.2}) {
        const double direct =
            kd::label_smooth_ce(logits, LabelBatch::one_hot(targets, 4), alpha).loss;
        const double decomposed = kd::ls_decomposed(logits, targets, alpha);
        CHECK(direct == doctest::Approx(decomposed).epsilon(1e-12));
    }
}

TEST_CASE("kd_classical") {
    SUBCASE("uniform student against fixed teacher gives ln 2") {
        // teacher softmax [0.7, 0.3], student uniform
        const Matrix teacher = logits_for({{0.7, 0.3}});
        const LossOutput out = kd::kd_classical(Matrix(1, 2), teacher, 1.0);
        CHECK(out.loss == doctest::Approx(0.6931471805599453).epsilon(1e-14));
    }
    SUBCASE("lambda^2 switch scales loss and gradient") {
        const Matrix student(1, 3, {0.5, -0.2, 0.1});
        const Matrix teacher(1, 3, {1.0, 0.0, -1.0});
        const LossOutput plain = kd::kd_classical(student, teacher, 2.0, false);
        const LossOutput scaled = kd::kd_classical(student, teacher, 2.0, true);
        CHECK(scaled.loss == doctest::Approx(4.0 * plain.loss).epsilon(1e-14));
        for (std::size_t k = 0; k < plain.grad.size(); ++k)
            CHECK(scaled.grad.data()[k] == doctest::Approx(4.0 * plain.grad.data()[k]).epsilon(1e-14));
    }
    SUBCASE("gradient is (S^l - T^l) / (lambda B)") {
        const Matrix student(1, 2, {1.0, 0.0});
        const Matrix teacher(1, 2, {0.0, 1.0});
        const double lambda = 2.0;
        const Matrix sp = kd::softmax_temp(student, lambda);
        const Matrix tp = kd::softmax_temp(teacher, lambda);
        const LossOutput out = kd::kd_classical(student, teacher, lambda);
        CHECK(out.grad(0, 0) == doctest::Approx((sp(0, 0) - tp(0, 0)) / lambda).epsilon(1e-14));
        CHECK(out.grad(0, 1) == doctest::Approx((sp(0, 1) - tp(0, 1)) / lambda).epsilon(1e-14));
    }
}

TEST_CASE("kd_decomposed matches kd_classical") {
    const Matrix student(2, 3, {0.4, -1.2, 0.8, 0.0, 0.3, -0.3});
    const Matrix teacher(2, 3, {1.1, 0.2, -0.7, -0.5, 0.5, 0.0});
    const std::vector<std::size_t> targets = {1, 2};
    for (double lambda : {0.5, 1.0, 2.0, 4.0}) {
        const double direct = kd::kd_classical(student, teacher, lambda).loss;
        const double decomposed = kd::kd_decomposed(student, teacher, lambda, targets);
        CHECK(direct == doctest::Approx(decomposed).epsilon(1e-12));
    }
}

TEST_CASE("non_target_renormalize") {
    SUBCASE("renormalized masses sum to one off target, zero at target") {
        const Matrix probs(1, 3, {0.5, 0.3, 0.2});
        const auto out = kd::non_target_renormalize(probs, {0});
        CHECK(out.values(0, 0) == 0.0);
        CHECK(out.values(0, 1) == doctest::Approx(0.6).epsilon(1e-14));
        CHECK(out.values(0, 2) == doctest::Approx(0.4).epsilon(1e-14));
        CHECK(out.denom[0] == doctest::Approx(0.5).epsilon(1e-14));
        CHECK(out.clamp_events == 0);
    }
    SUBCASE("a saturated row clamps the denominator and reports it") {
        Matrix probs(1, 2, {1.0, 0.0});
        const auto out = kd::non_target_renormalize(probs, {0});
        CHECK(out.clamp_events == 1);
        CHECK(out.denom[0] == kd::kClampFloor);
    }
}

TEST_CASE("distributed_loss") {
    const Matrix teacher3 = logits_for({{0.7, 0.2, 0.1}});
    const Matrix student3 = logits_for({{0.5, 0.3, 0.2}});

    SUBCASE("frozen three-class value and gradient") {
        const LossOutput out = kd::distributed_loss(student3, teacher3, 1.0, {0});
        // That = [2/3, 1/3], Shat = [0.6, 0.4]
        CHECK(out.loss == doctest::Approx(0.6459806598020456).epsilon(1e-13));
        CHECK(out.grad(0, 0) == 0.0);  // exactly zero at the target
        CHECK(out.grad(0, 1) == doctest::Approx(-0.06666666666666676).epsilon(1e-12));
        CHECK(out.grad(0, 2) == doctest::Approx(0.06666666666666665).epsilon(1e-12));
        CHECK(out.degenerate_rows == 0);
        CHECK(out.clamp_events == 0);
    }
    SUBCASE("uniform case gives ln 2") {
        const LossOutput out = kd::distributed_loss(Matrix(1, 3), Matrix(1, 3), 1.0, {1});
        CHECK(out.loss == doctest::Approx(0.6931471805599453).epsilon(1e-13));
    }
    SUBCASE("one-hot teacher row is degenerate: zero contribution, flagged") {
        const Matrix teacher(1, 3, {800.0, 0.0, 0.0});
        const LossOutput out = kd::distributed_loss(student3, teacher, 1.0, {0});
        CHECK(out.loss == 0.0);
        CHECK(out.degenerate_rows == 1);
        for (std::size_t c = 0; c < 3; ++c) CHECK(out.grad(0, c) == 0.0);
    }
    SUBCASE("saturated student clamps and stays finite") {
        const Matrix student(1, 3, {800.0, 0.0, 0.0});
        const LossOutput out = kd::distributed_loss(student, teacher3, 1.0, {0});
        CHECK(out.clamp_events >= 1);
        CHECK(std::isfinite(out.loss));
        CHECK(kd::is_finite(out.grad));
    }
    SUBCASE("mixed batch: degenerate row skipped, live row unchanged") {
        Matrix teacher(2, 3);
        Matrix student(2, 3);
        for (std::size_t c = 0; c < 3; ++c) {
            teacher(0, c) = teacher3(0, c);
            student(0, c) = student3(0, c);
        }
        teacher(1, 0) = 800.0;  // degenerate second row
        const LossOutput pair = kd::distributed_loss(student, teacher, 1.0, {0, 0});
        const LossOutput solo = kd::distributed_loss(student3, teacher3, 1.0, {0});
        CHECK(pair.degenerate_rows == 1);
        // Batch mean still divides by B=2.
        CHECK(pair.loss == doctest::Approx(solo.loss / 2.0).epsilon(1e-13));
    }
    SUBCASE("needs at least two classes") {
        CHECK_THROWS_AS(kd::distributed_loss(Matrix(1, 1), Matrix(1, 1), 1.0, {0}),
                        kd::InvalidInputError);
    }
}

TEST_CASE("soft_loss") {
    SUBCASE("frozen value 0.9 ln 2") {
        const LossOutput out = kd::soft_loss(Matrix(1, 2), {0.9}, {0});
        CHECK(out.loss == doctest::Approx(0.6238324625039507).epsilon(1e-14));
    }
    SUBCASE("T_t = 1 equals plain ce on one-hot labels") {
        const Matrix logits(2, 3, {0.1, 0.5, -0.2, 1.0, 0.0, 0.3});
        const std::vector<std::size_t> targets = {2, 0};
        const LossOutput soft = kd::soft_loss(logits, {1.0, 1.0}, targets);
        const LossOutput ce = kd::ce_loss(logits, LabelBatch::one_hot(targets, 3));
        CHECK(soft.loss == doctest::Approx(ce.loss).epsilon(1e-14));
        for (std::size_t k = 0; k < soft.grad.size(); ++k)
            CHECK(soft.grad.data()[k] == doctest::Approx(ce.grad.data()[k]).epsilon(1e-14));
    }
    SUBCASE("gradient is T_t (S - e_t) / B") {
        const Matrix logits(1, 2, {0.3, -0.3});
        const Matrix p = kd::softmax_temp(logits, 1.0);
        const LossOutput out = kd::soft_loss(logits, {0.6}, {1});
        CHECK(out.grad(0, 0) == doctest::Approx(0.6 * p(0, 0)).epsilon(1e-14));
        CHECK(out.grad(0, 1) == doctest::Approx(0.6 * (p(0, 1) - 1.0)).epsilon(1e-14));
    }
    SUBCASE("weights outside [0,1] rejected") {
        CHECK_THROWS_AS(kd::soft_loss(Matrix(1, 2), {1.5}, {0}), kd::InvalidParameterError);
        CHECK_THROWS_AS(kd::soft_loss(Matrix(1, 2), {-0.1}, {0}), kd::InvalidParameterError);
        CHECK_THROWS_AS(kd::soft_loss(Matrix(2, 2), {0.5}, {0, 1}), kd::DimensionError);
    }
}

TEST_CASE("nkd_loss") {
    const Matrix teacher = logits_for({{0.7, 0.2, 0.1}});
    const Matrix student = logits_for({{0.5, 0.3, 0.2}});
    const LabelBatch labels = LabelBatch::one_hot({0}, 3);

    SUBCASE("frozen combined value: ln2 + 0.7 ln2 + 1.5 * 0.64598") {
        const auto out = kd::nkd_loss(student, teacher, labels, DistillConfig{});
        CHECK(out.total.loss == doctest::Approx(2.1473211966549752).epsilon(1e-13));
        CHECK(out.ce_term == doctest::Approx(0.6931471805599453).epsilon(1e-13));
        CHECK(out.soft_term == doctest::Approx(0.48520302639196167).epsilon(1e-13));
        CHECK(out.distributed_term == doctest::Approx(0.9689709897030683).epsilon(1e-13));
    }
    SUBCASE("both flags off is bit-identical to ce_loss") {
        DistillConfig config;
        config.use_soft = false;
        config.use_distributed = false;
        const auto out = kd::nkd_loss(student, teacher, labels, config);
        const LossOutput ce = kd::ce_loss(student, labels);
        CHECK(out.total.loss == ce.loss);
        for (std::size_t k = 0; k < ce.grad.size(); ++k)
            CHECK(out.total.grad.data()[k] == ce.grad.data()[k]);
        CHECK(out.soft_term == 0.0);
        CHECK(out.distributed_term == 0.0);
    }
    SUBCASE("alpha 0 reduces to ce + soft") {
        DistillConfig config;
        config.alpha = 0.0;
        const auto out = kd::nkd_loss(student, teacher, labels, config);
        CHECK(out.total.loss ==
              doctest::Approx(out.ce_term + out.soft_term).epsilon(1e-14));
        CHECK(out.distributed_term == 0.0);
    }
    SUBCASE("additivity: total equals sum of terms, loss and gradient") {
        DistillConfig config;
        config.alpha = 1.5;
        config.lambda = 2.0;
        const auto out = kd::nkd_loss(student, teacher, labels, config);
        CHECK(std::abs(out.total.loss - (out.ce_term + out.soft_term + out.distributed_term)) <
              1e-12);

        const LossOutput ce = kd::ce_loss(student, labels);
        const Matrix tprobs = kd::softmax_temp(teacher, 1.0);
        const LossOutput soft =
            kd::soft_loss(student, kd::gather_target(tprobs, {0}), {0});
        const LossOutput dist = kd::distributed_loss(student, teacher, 2.0, {0});
        const double scale = 1.5 * 4.0;
        for (std::size_t k = 0; k < ce.grad.size(); ++k) {
            const double manual =
                ce.grad.data()[k] + soft.grad.data()[k] + scale * dist.grad.data()[k];
            CHECK(std::abs(out.total.grad.data()[k] - manual) < 1e-12);
        }
    }
    SUBCASE("perfect teacher forces T_t to 1 in the soft term only") {
        DistillConfig config;
        config.use_distributed = false;
        const auto perfect = kd::nkd_loss(student, teacher, labels, config, true);
        const LossOutput ce = kd::ce_loss(student, labels);
        // soft with T_t = 1 duplicates ce exactly.
        CHECK(perfect.total.loss == doctest::Approx(2.0 * ce.loss).epsilon(1e-14));
    }
}

TEST_CASE("smooth_weight strategies on the S_t = [0.2, 0.6] batch") {
    const std::vector<double> st = {0.2, 0.6};
    const LabelBatch labels = LabelBatch::one_hot({0, 1}, 3);  // V_t = [1, 1]

    SUBCASE("raw_st") {
        const auto w = kd::smooth_weight(st, labels, WeightStrategy::RawSt);
        CHECK(w[0] == 0.2);
        CHECK(w[1] == 0.6);
    }
    SUBCASE("st_plus_vt_minus_mean") {
        const auto w = kd::smooth_weight(st, labels, WeightStrategy::StPlusVtMinusMean);
        CHECK(w[0] == doctest::Approx(0.7999999999999999).epsilon(1e-15));
        CHECK(w[1] == doctest::Approx(1.2000000000000002).epsilon(1e-15));
    }
    SUBCASE("batch_softmax_times_sum") {
        const auto w = kd::smooth_weight(st, labels, WeightStrategy::BatchSoftmaxTimesSum);
        CHECK(w[0] == doctest::Approx(0.802624679775096).epsilon(1e-13));
        CHECK(w[1] == doctest::Approx(1.197375320224904).epsilon(1e-13));
        CHECK(w[0] + w[1] == doctest::Approx(2.0).epsilon(1e-13));  // sums to sum(V_t)
    }
    SUBCASE("sqrt_st_minus_min") {
        const auto w = kd::smooth_weight(st, labels, WeightStrategy::SqrtStMinusMin);
        CHECK(w[0] == 0.0);
        CHECK(w[1] == doctest::Approx(0.6324555320336759).epsilon(1e-14));
    }
    SUBCASE("st_over_max") {
        const auto w = kd::smooth_weight(st, labels, WeightStrategy::StOverMax);
        CHECK(w[0] == doctest::Approx(0.33333333333333337).epsilon(1e-15));
        CHECK(w[1] == 1.0);
    }
    SUBCASE("st_over_mean") {
        const auto w = kd::smooth_weight(st, labels, WeightStrategy::StOverMean);
        CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-14));
        CHECK(w[1] == doctest::Approx(1.4999999999999998).epsilon(1e-15));
    }
    SUBCASE("teacher strategy is not a smoothing rule") {
        CHECK_THROWS_AS(kd::smooth_weight(st, labels, WeightStrategy::TeacherTarget),
                        kd::InvalidParameterError);
    }
    SUBCASE("an all-zero batch flags degenerate normalizers") {
        long events = 0;
        const auto w = kd::smooth_weight({0.0, 0.0}, LabelBatch::one_hot({0, 0}, 3),
                                         WeightStrategy::StOverMax, &events);
        CHECK(events > 0);
        for (double x : w) CHECK(std::isfinite(x));
    }
    SUBCASE("empty batch rejected") {
        CHECK_THROWS_AS(kd::smooth_weight({}, LabelBatch(), WeightStrategy::RawSt),
                        kd::InvalidInputError);
    }
}

TEST_CASE("strategy names round-trip") {
    for (WeightStrategy s : kd::kSmoothingStrategies) {
        CHECK(kd::strategy_from_name(kd::strategy_name(s)) == s);
    }
    CHECK(kd::strategy_from_name("teacher_target") == WeightStrategy::TeacherTarget);
    CHECK_THROWS_AS(kd::strategy_from_name("nope"), kd::InvalidParameterError);
}

TEST_CASE("tfnkd_loss") {
    SUBCASE("single uniform row with default strategy gives 2 ln 2") {
        // S_t = 0.5, V_t = 1, batch mean = 0.5 -> w = 1, so loss = 2 * ce.
        const auto out = kd::tfnkd_loss(Matrix(1, 2), LabelBatch::one_hot({0}, 2),
                                        WeightStrategy::StPlusVtMinusMean);
        CHECK(out.out.loss == doctest::Approx(1.3862943611198906).epsilon(1e-14));
        CHECK(out.weights.size() == 1);
        CHECK(out.weights[0] == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(out.ce_term == doctest::Approx(0.6931471805599453).epsilon(1e-14));
        CHECK(out.weighted_term == doctest::Approx(0.6931471805599453).epsilon(1e-12));
    }
    SUBCASE("composition equals ce plus the weighted term") {
        const Matrix logits(3, 4, {0.5, -0.2, 1.0, 0.0, 2.0, 0.1, -1.0, 0.3, 0.0, 0.0, 0.0, 0.0});
        const LabelBatch labels = LabelBatch::one_hot({2, 0, 1}, 4);
        for (WeightStrategy s : kd::kSmoothingStrategies) {
            const auto out = kd::tfnkd_loss(logits, labels, s);
            CHECK(out.out.loss ==
                  doctest::Approx(out.ce_term + out.weighted_term).epsilon(1e-13));
            const LossOutput replay = kd::tfnkd_loss_with_weights(logits, labels, out.weights);
            CHECK(replay.loss == out.out.loss);
        }
    }
    SUBCASE("explicit weights: gradient adds w (S - e_t) / B on top of ce") {
        const Matrix logits(1, 3, {0.4, 0.1, -0.5});
        const LabelBatch labels = LabelBatch::one_hot({1}, 3);
        const double w = 0.37;
        const LossOutput out = kd::tfnkd_loss_with_weights(logits, labels, {w});
        const LossOutput ce = kd::ce_loss(logits, labels);
        const Matrix p = kd::softmax_temp(logits, 1.0);
        for (std::size_t c = 0; c < 3; ++c) {
            const double expected =
                ce.grad(0, c) + w * (p(0, c) - (c == 1 ? 1.0 : 0.0));
            CHECK(out.grad(0, c) == doctest::Approx(expected).epsilon(1e-14));
        }
    }
    SUBCASE("weight count must match the batch") {
        CHECK_THROWS_AS(
            kd::tfnkd_loss_with_weights(Matrix(2, 2), LabelBatch::one_hot({0, 1}, 2), {1.0}),
            kd::DimensionError);
    }
}

TEST_CASE("gradient rows of CE-family losses sum to zero") {
    const Matrix student(2, 4, {0.3, -1.0, 0.8, 0.0, 1.2, 0.4, -0.6, 0.2});
    const Matrix teacher(2, 4, {0.0, 0.5, -0.5, 1.0, -1.0, 0.2, 0.3, 0.0});
    const LabelBatch labels = LabelBatch::one_hot({1, 3}, 4);
    const std::vector<std::size_t> targets = {1, 3};

    const auto row_sums_vanish = [](const Matrix& g) {
        for (std::size_t r = 0; r < g.rows(); ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < g.cols(); ++c) sum += g(r, c);
            CHECK(std::abs(sum) < 1e-10);
        }
    };

    row_sums_vanish(kd::ce_loss(student, labels).grad);
    row_sums_vanish(kd::label_smooth_ce(student, labels, 0.1).grad);
    row_sums_vanish(kd::kd_classical(student, teacher, 2.0).grad);
    row_sums_vanish(kd::distributed_loss(student, teacher, 2.0, targets).grad);
    row_sums_vanish(kd::soft_loss(student, {0.7, 0.4}, targets).grad);
    row_sums_vanish(kd::nkd_loss(student, teacher, labels, DistillConfig{}).total.grad);
    row_sums_vanish(kd::tfnkd_loss(student, labels, WeightStrategy::StPlusVtMinusMean).out.grad);
}

TEST_CASE("gather_target picks the target column") {
    const Matrix probs(2, 3, {0.5, 0.3, 0.2, 0.1, 0.6, 0.3});
    const auto t = kd::gather_target(probs, {2, 1});
    CHECK(t[0] == 0.2);
    CHECK(t[1] == 0.6);
}
