#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "kd/config.hpp"
#include "kd/report.hpp"
#include "kd/verify.hpp"

namespace kd {

struct DataBundle {
    Dataset train;
    Dataset test;
};

// Materializes the configured data source (blobs / idx / csv).
DataBundle load_data(const ExperimentConfig& config);

// Easy/hard sample pick for the weight trace: ratio of the distance to the
// sample's own class mean over the distance to the nearest other class mean.
// Lowest ratio = easy, highest = hard; ties go to the lower sample_id.
std::pair<std::uint64_t, std::uint64_t> pick_trace_samples(const Dataset& train);

// Command drivers. Each returns a process exit code (0 success, 1
// verification failure); config and numeric failures surface as exceptions
// and are mapped to exit codes by the CLI front end.
int cmd_verify(const ExperimentConfig& config, std::ostream& out);
int cmd_train_teacher(const ExperimentConfig& config, std::ostream& out);
int cmd_train_baseline(const ExperimentConfig& config, std::ostream& out);
int cmd_distill(const ExperimentConfig& config, std::ostream& out);
int cmd_tfnkd(const ExperimentConfig& config, std::ostream& out);
int cmd_sweep_temp(const ExperimentConfig& config, std::ostream& out);

// Shared helpers, exposed for tests and the acceptance suite.

// Distillation mode label: nkd / nkd_soft_only / nkd_distributed_only /
// ce_only / classical_kd, with a _perfect_teacher suffix when forced.
std::string distill_label(const ExperimentConfig& config);

// Trains one student per seed (optionally across threads when
// config.parallel_seeds is set) and returns per-seed report rows in seed
// order, followed by mean and std aggregate rows.
struct SeedRunOutput {
    std::vector<ReportRow> rows;           // per seed, then mean, then std
    std::vector<TrainResult> results;      // per seed, seed order
};
SeedRunOutput run_seeds(const ExperimentConfig& config, const ModelSpec& student_spec,
                        const DataBundle& data, const LossSelector& selector,
                        const std::string& label,
                        const std::vector<std::uint64_t>& tracked_ids = {});

} // namespace kd
