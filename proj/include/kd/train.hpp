#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "kd/dataset.hpp"
#include "kd/losses.hpp"
#include "kd/model.hpp"

namespace kd {

enum class LrSchedule { Constant, Step, Cosine };

struct TrainConfig {
    std::size_t epochs = 60;
    std::size_t batch_size = 64;
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0;
    LrSchedule schedule = LrSchedule::Step;
    std::vector<std::size_t> milestones = {30, 45};
    double gamma = 0.1;
    std::uint64_t seed = 0;
    std::size_t topk = 5;

    bool mixup_enabled = false;
    double mixup_lam = 0.0;     // fixed lam when > 0, else Beta(mixup_alpha, mixup_alpha)
    double mixup_alpha = 0.2;

    void validate() const;
};

// Learning rate for a 0-based epoch index. Step milestones apply from the
// named epoch index onward.
double lr_at(const TrainConfig& config, std::size_t epoch);

struct SgdState {
    std::vector<Matrix> velocity_w;
    std::vector<std::vector<double>> velocity_b;
};

SgdState make_sgd_state(const ModelParams& params);

// velocity = momentum*velocity + grad + weight_decay*param; param -= lr*velocity.
// Non-finite gradients abort with NumericError.
void sgd_step(ModelParams& params, const ParamGrads& grads, SgdState& state,
              double lr, double momentum, double weight_decay);

// Frozen teacher logits addressed by sample_id, pinned to the checkpoint that
// produced them via its file digest.
struct TeacherCache {
    std::unordered_map<std::uint64_t, std::vector<double>> logits;
    std::uint64_t checkpoint_digest = 0;
    std::size_t classes = 0;

    const std::vector<double>& row(std::uint64_t sample_id) const;
    // Throws ContractError naming the missing sample_ids (first few) if any
    // dataset row lacks a cached entry.
    void ensure_covers(const Dataset& dataset) const;
    Matrix gather(const std::vector<std::uint64_t>& sample_ids) const;
};

TeacherCache build_teacher_cache(const ModelParams& teacher, const Dataset& dataset,
                                 std::uint64_t checkpoint_digest);

// Cache file layout (little-endian, documented in the README):
//   bytes 0-7  magic "KDCACHE1"
//   u64        checkpoint digest
//   u32 N, u32 C
//   N records  u64 sample_id, C f64 logits
void save_teacher_cache(const TeacherCache& cache, const std::string& path);
TeacherCache load_teacher_cache(const std::string& path);

// Mean teacher softmax probability at the label class over a dataset —
// the statistic that drops when the teacher was trained with label smoothing.
double mean_target_prob(const TeacherCache& cache, const Dataset& dataset);

enum class LossKind { Ce, LabelSmoothCe, Nkd, ClassicalKd, Tfnkd };

struct LossSelector {
    LossKind kind = LossKind::Ce;
    double alpha_ls = 0.1;                       // LabelSmoothCe
    DistillConfig distill;                       // Nkd / ClassicalKd
    bool perfect_teacher = false;                // Nkd: force T_t to 1 in the soft term
    bool scale_lambda_sq = false;                // ClassicalKd
    const TeacherCache* cache = nullptr;         // Nkd / ClassicalKd
    WeightStrategy strategy = WeightStrategy::StPlusVtMinusMean;  // Tfnkd

    bool needs_teacher() const {
        return kind == LossKind::Nkd || kind == LossKind::ClassicalKd;
    }
};

struct MetricsRecord {
    std::size_t epoch = 0;       // 0 = initialized model, e = after epoch e
    std::string split;           // "train" or "test"
    double top1 = 0.0;
    double topk = 0.0;
    double mean_loss = 0.0;
    long clamp_events = 0;
};

// Sample-weighted epoch means of the objective's additive terms; unused
// terms stay 0. total always equals the optimized objective's mean.
struct EpochTerms {
    std::size_t epoch = 0;
    double ce = 0.0;
    double soft = 0.0;
    double distributed = 0.0;
    double kd = 0.0;
    double weighted = 0.0;
    double total = 0.0;
};

// One record per tracked sample per epoch: the student's target probability,
// the label's target mass, the batch mean of target probabilities, and the
// weight every smoothing strategy would assign (order of kSmoothingStrategies).
struct WeightTracePoint {
    std::size_t epoch = 0;
    std::uint64_t sample_id = 0;
    double s_t = 0.0;
    double v_t = 0.0;
    double batch_mean_st = 0.0;
    std::array<double, kSmoothingStrategies.size()> w{};
};

struct WeightTrace {
    std::vector<WeightTracePoint> points;
};

struct TrainResult {
    ModelParams params;
    std::vector<MetricsRecord> metrics;
    std::vector<EpochTerms> terms;
    WeightTrace trace;
    long total_clamp_events = 0;
    long total_degenerate_rows = 0;
};

struct EvalResult {
    double top1 = 0.0;
    double topk = 0.0;
    double mean_ce_loss = 0.0;
};

// Argmax accuracy plus CE loss; ties broken toward the lowest index.
EvalResult evaluate(const ModelParams& params, const Dataset& dataset, std::size_t topk);

// Deterministic SGD training of a fresh model under the selected objective.
// Records metrics for the initialized model (epoch 0) and after every epoch.
// tracked_ids enables the per-sample weight trace (tf-NKD runs only).
TrainResult train(const ModelSpec& student_spec, const Dataset& train_set,
                  const Dataset& test_set, const LossSelector& selector,
                  const TrainConfig& config,
                  const std::vector<std::uint64_t>& tracked_ids = {});

} // namespace kd
