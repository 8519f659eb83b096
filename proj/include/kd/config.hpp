#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kd/dataset.hpp"
#include "kd/losses.hpp"
#include "kd/train.hpp"

namespace kd {

enum class DataSource { Blobs, Idx, Csv };

// Everything a command needs, assembled from a key=value config file plus
// command-line overrides. Unknown keys are rejected; the full canonical
// key set is documented in the README and configs/blobs_default.conf.
struct ExperimentConfig {
    DataSource source = DataSource::Blobs;

    BlobSpec blobs;
    std::size_t blobs_test_per_class = 100;

    std::string idx_train_images;
    std::string idx_train_labels;
    std::string idx_test_images;
    std::string idx_test_labels;

    std::string csv_train;
    std::string csv_test;
    std::size_t csv_classes = 0;  // 0 = infer

    std::vector<std::size_t> teacher_hidden = {128, 128};
    std::vector<std::size_t> student_hidden = {16};
    // Teacher-only regularization; without it the wide teacher overfits the
    // default blobs task below the student baseline (see
    // scripts/calibrate_blobs.sh). Student runs use train.weight_decay.
    double teacher_weight_decay = 0.02;

    TrainConfig train;
    double alpha_ls = 0.0;  // label smoothing for teacher/baseline training

    DistillConfig distill;
    bool perfect_teacher = false;
    bool classical_kd = false;
    bool classical_lambda_sq = false;

    WeightStrategy strategy = WeightStrategy::StPlusVtMinusMean;
    bool tfnkd_sweep = false;
    bool trace_enabled = true;
    std::string trace_easy = "auto";  // sample id, or "auto" to pick one
    std::string trace_hard = "auto";

    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::string out_dir = "runs";
    std::string label;  // defaults to the command name
    bool parallel_seeds = false;
    std::string teacher_checkpoint;  // empty = <out_dir>/teacher.ckpt

    std::vector<double> sweep_lambdas = {0.5, 1.0, 2.0, 3.0, 4.0, 5.0};

    std::size_t verify_trials = 1000;
    std::size_t verify_grad_instances = 100;
    std::uint64_t verify_seed = 20250817;
    bool verify_inject_kd_bug = false;

    std::string teacher_checkpoint_path() const;
    void validate() const;
};

// Applies one "key=value" assignment; throws ConfigError for unknown keys or
// unparsable values.
void apply_config_entry(ExperimentConfig& config, const std::string& key,
                        const std::string& value);

// Reads a config file ('#' comments, blank lines, key = value), then applies
// overrides ("key=value" strings) in order. config_path may be empty.
ExperimentConfig load_experiment_config(const std::string& config_path,
                                        const std::vector<std::string>& overrides);

// Canonical (key, value) listing of every setting; reapplying the snapshot
// onto a default config reproduces the same configuration.
std::vector<std::pair<std::string, std::string>> config_snapshot(const ExperimentConfig& config);

const char* schedule_name(LrSchedule schedule);
LrSchedule schedule_from_name(const std::string& name);

} // namespace kd
