#include "kd/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "kd/softmax.hpp"

namespace kd {

namespace {

using ordered_json = nlohmann::ordered_json;

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

ModelSpec make_spec(const DataBundle& data, const std::vector<std::size_t>& hidden) {
    ModelSpec spec;
    spec.input_dim = data.train.dim();
    spec.hidden_dims = hidden;
    spec.num_classes = data.train.classes();
    return spec;
}

std::string seed_file_tag(std::uint64_t seed) {
    return "seed" + std::to_string(seed);
}

ordered_json snapshot_json(const ExperimentConfig& config) {
    ordered_json snap;
    for (const auto& [key, value] : config_snapshot(config)) snap[key] = value;
    return snap;
}

ordered_json row_json(const ReportRow& row) {
    ordered_json j;
    j["label"] = row.label;
    j["seed"] = row.seed;
    j["top1"] = row.top1;
    j["topk"] = row.topk;
    j["term_ce"] = row.terms.ce;
    j["term_soft"] = row.terms.soft;
    j["term_distributed"] = row.terms.distributed;
    j["term_kd"] = row.terms.kd;
    j["term_weighted"] = row.terms.weighted;
    j["term_total"] = row.terms.total;
    j["runtime_seconds"] = row.runtime_seconds;
    return j;
}

void write_summary_json(const std::string& path, const std::string& command,
                        const ExperimentConfig& config, const std::vector<ReportRow>& rows,
                        const ordered_json& extras) {
    ordered_json doc;
    doc["command"] = command;
    doc["generated"] = iso_utc_now();
    doc["config"] = snapshot_json(config);
    doc["rows"] = ordered_json::array();
    for (const ReportRow& row : rows) doc["rows"].push_back(row_json(row));
    if (!extras.is_null()) doc["extras"] = extras;
    std::ofstream os(path);
    if (!os) throw Error("cannot open output file: " + path);
    os << doc.dump(2) << "\n";
    if (!os) throw Error("write failure on output file: " + path);
}

ReportRow make_row(const std::string& label, std::uint64_t seed, const TrainResult& result,
                   double runtime_seconds) {
    ReportRow row;
    row.label = label;
    row.seed = std::to_string(seed);
    // Final test metrics; the metrics series ends with the test record of the
    // last epoch (train record precedes it).
    for (auto it = result.metrics.rbegin(); it != result.metrics.rend(); ++it) {
        if (it->split == "test") {
            row.top1 = it->top1;
            row.topk = it->topk;
            break;
        }
    }
    if (!result.terms.empty()) row.terms = result.terms.back();
    row.runtime_seconds = runtime_seconds;
    return row;
}

void print_rows(std::ostream& out, const std::vector<ReportRow>& rows) {
    out << "  label                          seed   top1     topk\n";
    for (const ReportRow& row : rows) {
        std::ostringstream line;
        line << "  " << std::left << std::setw(30) << row.label << " " << std::setw(6)
             << row.seed << " " << std::fixed << std::setprecision(4) << row.top1 << "   "
             << std::setprecision(4) << row.topk;
        out << line.str() << "\n";
    }
}

void ensure_out_dir(const ExperimentConfig& config) {
    std::filesystem::create_directories(config.out_dir);
}

std::string out_path(const ExperimentConfig& config, const std::string& file) {
    return (std::filesystem::path(config.out_dir) / file).string();
}

// Loads the cache next to the checkpoint when its digest still matches;
// otherwise rebuilds from the checkpoint and saves.
TeacherCache load_or_build_cache(const ExperimentConfig& config, const Dataset& train,
                                 std::ostream& out) {
    const std::string ckpt_path = config.teacher_checkpoint_path();
    if (!std::filesystem::exists(ckpt_path)) {
        throw ConfigError("teacher checkpoint not found: " + ckpt_path +
                          " (run train-teacher first)");
    }
    const std::uint64_t digest = file_digest(ckpt_path);
    const std::string cache_path = ckpt_path + ".cache";
    if (std::filesystem::exists(cache_path)) {
        TeacherCache cache = load_teacher_cache(cache_path);
        if (cache.checkpoint_digest == digest) {
            try {
                cache.ensure_covers(train);
                out << "teacher cache: reusing " << cache_path << "\n";
                return cache;
            } catch (const ContractError&) {
                // dataset changed; fall through and rebuild
            }
        }
    }
    const ModelParams teacher = load_checkpoint(ckpt_path);
    TeacherCache cache = build_teacher_cache(teacher, train, digest);
    save_teacher_cache(cache, cache_path);
    out << "teacher cache: built " << cache_path << " (" << cache.logits.size()
        << " entries)\n";
    return cache;
}

void assert_teacher_frozen(const ExperimentConfig& config, const TeacherCache& cache) {
    const std::string ckpt_path = config.teacher_checkpoint_path();
    const std::uint64_t digest = file_digest(ckpt_path);
    if (digest != cache.checkpoint_digest) {
        throw ContractError("teacher checkpoint " + ckpt_path +
                            " changed during distillation (digest mismatch)");
    }
}

} // namespace

DataBundle load_data(const ExperimentConfig& config) {
    DataBundle data;
    switch (config.source) {
        case DataSource::Blobs: {
            if (config.blobs_test_per_class == 0) {
                throw ConfigError("blobs.test_per_class must be positive");
            }
            BlobSplit split = generate_blob_split(config.blobs, config.blobs_test_per_class);
            data.train = std::move(split.train);
            data.test = std::move(split.test);
            break;
        }
        case DataSource::Idx: {
            data.train = read_idx(config.idx_train_images, config.idx_train_labels);
            data.test = read_idx(config.idx_test_images, config.idx_test_labels);
            break;
        }
        case DataSource::Csv: {
            data.train = read_csv(config.csv_train, config.csv_classes);
            data.test = read_csv(config.csv_test, config.csv_classes);
            break;
        }
    }
    if (data.train.dim() != data.test.dim() || data.train.classes() != data.test.classes()) {
        throw InvalidInputError("train and test datasets disagree on dimensions or classes");
    }
    return data;
}

std::pair<std::uint64_t, std::uint64_t> pick_trace_samples(const Dataset& train) {
    const std::size_t classes = train.classes();
    const std::size_t dim = train.dim();
    Matrix means(classes, dim);
    std::vector<std::size_t> counts(classes, 0);
    for (std::size_t b = 0; b < train.size(); ++b) {
        const std::size_t c = train.labels.target(b);
        ++counts[c];
        auto m = means.row(c);
        const auto x = train.inputs.row(b);
        for (std::size_t d = 0; d < dim; ++d) m[d] += x[d];
    }
    for (std::size_t c = 0; c < classes; ++c) {
        if (counts[c] == 0) continue;
        for (double& v : means.row(c)) v /= static_cast<double>(counts[c]);
    }

    double best_easy = std::numeric_limits<double>::infinity();
    double best_hard = -std::numeric_limits<double>::infinity();
    std::uint64_t easy_id = train.sample_ids.front();
    std::uint64_t hard_id = train.sample_ids.front();
    for (std::size_t b = 0; b < train.size(); ++b) {
        const std::size_t own = train.labels.target(b);
        const auto x = train.inputs.row(b);
        double d_own = 0.0;
        double d_other = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < classes; ++c) {
            if (counts[c] == 0) continue;
            double d = 0.0;
            const auto m = means.row(c);
            for (std::size_t k = 0; k < dim; ++k) d += (x[k] - m[k]) * (x[k] - m[k]);
            if (c == own) {
                d_own = d;
            } else {
                d_other = std::min(d_other, d);
            }
        }
        const double ratio = d_own / std::max(d_other, 1e-300);
        if (ratio < best_easy) {
            best_easy = ratio;
            easy_id = train.sample_ids[b];
        }
        if (ratio > best_hard) {
            best_hard = ratio;
            hard_id = train.sample_ids[b];
        }
    }
    return {easy_id, hard_id};
}

std::string distill_label(const ExperimentConfig& config) {
    if (!config.label.empty()) return config.label;
    std::string label;
    if (config.classical_kd) {
        label = "classical_kd";
    } else if (config.distill.use_soft && config.distill.use_distributed) {
        label = "nkd";
    } else if (config.distill.use_soft) {
        label = "nkd_soft_only";
    } else if (config.distill.use_distributed) {
        label = "nkd_distributed_only";
    } else {
        label = "ce_only";
    }
    if (config.perfect_teacher && !config.classical_kd) label += "_perfect_teacher";
    return label;
}

SeedRunOutput run_seeds(const ExperimentConfig& config, const ModelSpec& student_spec,
                        const DataBundle& data, const LossSelector& selector,
                        const std::string& label,
                        const std::vector<std::uint64_t>& tracked_ids) {
    SeedRunOutput output;
    output.results.resize(config.seeds.size());
    std::vector<double> runtimes(config.seeds.size(), 0.0);

    const auto run_one = [&](std::size_t i) {
        TrainConfig train_config = config.train;
        train_config.seed = config.seeds[i];
        const auto start = std::chrono::steady_clock::now();
        // Trace only the first seed so one canonical trace file is produced.
        const std::vector<std::uint64_t>& ids =
            (i == 0) ? tracked_ids : std::vector<std::uint64_t>{};
        output.results[i] = train(student_spec, data.train, data.test, selector,
                                  train_config, ids);
        runtimes[i] = seconds_since(start);
    };

    if (config.parallel_seeds && config.seeds.size() > 1) {
        std::vector<std::thread> workers;
        workers.reserve(config.seeds.size());
        for (std::size_t i = 0; i < config.seeds.size(); ++i) {
            workers.emplace_back(run_one, i);
        }
        for (std::thread& w : workers) w.join();
    } else {
        for (std::size_t i = 0; i < config.seeds.size(); ++i) run_one(i);
    }

    for (std::size_t i = 0; i < config.seeds.size(); ++i) {
        output.rows.push_back(make_row(label, config.seeds[i], output.results[i], runtimes[i]));
    }
    const std::vector<ReportRow> per_seed = output.rows;
    output.rows.push_back(aggregate_mean(per_seed, label));
    output.rows.push_back(aggregate_std(per_seed, label));
    return output;
}

int cmd_verify(const ExperimentConfig& config, std::ostream& out) {
    VerifyOptions options;
    options.trials = config.verify_trials;
    options.grad_instances = config.verify_grad_instances;
    options.seed = config.verify_seed;
    if (config.verify_inject_kd_bug) options.kd_decomposed_scale = 1.01;

    const VerifyReport report = run_verification(options);
    std::size_t passed = 0;
    for (const CheckResult& check : report.checks) {
        std::ostringstream line;
        line << std::left << std::setw(28) << check.name << " max residual "
             << std::scientific << std::setprecision(3) << check.max_residual
             << (check.passed ? " < " : " >= ") << check.tolerance << " ["
             << (check.passed ? "pass" : "FAIL") << "]";
        out << line.str() << "\n";
        if (!check.passed && !check.detail.empty()) {
            out << "    worst case: " << check.detail << "\n";
        }
        if (check.passed) ++passed;
    }
    out << "verification: " << passed << "/" << report.checks.size() << " checks passed\n";
    return report.all_passed() ? 0 : 1;
}

namespace {

int run_ce_training(const ExperimentConfig& config, std::ostream& out,
                    const std::string& command, bool teacher_model) {
    ensure_out_dir(config);
    const DataBundle data = load_data(config);
    const ModelSpec spec =
        make_spec(data, teacher_model ? config.teacher_hidden : config.student_hidden);

    LossSelector selector;
    if (config.alpha_ls > 0.0) {
        selector.kind = LossKind::LabelSmoothCe;
        selector.alpha_ls = config.alpha_ls;
    } else {
        selector.kind = LossKind::Ce;
    }

    std::string label = config.label;
    if (label.empty()) label = teacher_model ? "teacher" : "baseline";

    if (teacher_model) {
        // One teacher model; the first seed is the teacher's seed.
        ExperimentConfig teacher_config = config;
        teacher_config.seeds = {config.seeds.front()};
        teacher_config.train.weight_decay = config.teacher_weight_decay;
        const SeedRunOutput run = run_seeds(teacher_config, spec, data, selector, label);
        const TrainResult& result = run.results.front();

        const std::string ckpt_path = config.teacher_checkpoint_path();
        save_checkpoint(result.params, ckpt_path);
        const std::uint64_t digest = file_digest(ckpt_path);
        TeacherCache cache = build_teacher_cache(result.params, data.train, digest);
        save_teacher_cache(cache, ckpt_path + ".cache");

        write_metrics_csv(out_path(config, label + "_" + seed_file_tag(config.seeds.front()) +
                                               "_metrics.csv"),
                          result.metrics);
        write_report_csv(out_path(config, label + "_report.csv"), run.rows);
        ordered_json extras;
        extras["checkpoint"] = ckpt_path;
        extras["checkpoint_digest"] = digest;
        extras["cache"] = ckpt_path + ".cache";
        extras["mean_teacher_target_prob_train"] = mean_target_prob(cache, data.train);
        write_summary_json(out_path(config, label + "_summary.json"), command, config,
                           run.rows, extras);

        out << "teacher checkpoint: " << ckpt_path << "\n";
        print_rows(out, run.rows);
        return 0;
    }

    const SeedRunOutput run = run_seeds(config, spec, data, selector, label);
    for (std::size_t i = 0; i < config.seeds.size(); ++i) {
        const std::string tag = label + "_" + seed_file_tag(config.seeds[i]);
        write_metrics_csv(out_path(config, tag + "_metrics.csv"), run.results[i].metrics);
        write_terms_csv(out_path(config, tag + "_terms.csv"), run.results[i].terms);
    }
    write_report_csv(out_path(config, label + "_report.csv"), run.rows);
    write_summary_json(out_path(config, label + "_summary.json"), command, config, run.rows,
                       ordered_json());
    print_rows(out, run.rows);
    return 0;
}

} // namespace

int cmd_train_teacher(const ExperimentConfig& config, std::ostream& out) {
    return run_ce_training(config, out, "train-teacher", true);
}

int cmd_train_baseline(const ExperimentConfig& config, std::ostream& out) {
    return run_ce_training(config, out, "train-baseline", false);
}

int cmd_distill(const ExperimentConfig& config, std::ostream& out) {
    ensure_out_dir(config);
    const DataBundle data = load_data(config);
    const ModelSpec spec = make_spec(data, config.student_hidden);
    const TeacherCache cache = load_or_build_cache(config, data.train, out);

    LossSelector selector;
    selector.cache = &cache;
    selector.distill = config.distill;
    if (config.classical_kd) {
        selector.kind = LossKind::ClassicalKd;
        selector.scale_lambda_sq = config.classical_lambda_sq;
    } else {
        selector.kind = LossKind::Nkd;
        selector.perfect_teacher = config.perfect_teacher;
    }

    const std::string label = distill_label(config);
    const SeedRunOutput run = run_seeds(config, spec, data, selector, label);
    assert_teacher_frozen(config, cache);

    for (std::size_t i = 0; i < config.seeds.size(); ++i) {
        const std::string tag = label + "_" + seed_file_tag(config.seeds[i]);
        write_metrics_csv(out_path(config, tag + "_metrics.csv"), run.results[i].metrics);
        write_terms_csv(out_path(config, tag + "_terms.csv"), run.results[i].terms);
    }
    write_report_csv(out_path(config, label + "_report.csv"), run.rows);
    ordered_json extras;
    extras["teacher_checkpoint"] = config.teacher_checkpoint_path();
    extras["teacher_checkpoint_digest"] = cache.checkpoint_digest;
    extras["mean_teacher_target_prob_train"] = mean_target_prob(cache, data.train);
    write_summary_json(out_path(config, label + "_summary.json"), "distill", config, run.rows,
                       extras);
    print_rows(out, run.rows);
    return 0;
}

int cmd_tfnkd(const ExperimentConfig& config, std::ostream& out) {
    if (config.strategy == WeightStrategy::TeacherTarget) {
        throw ConfigError("tfnkd is teacher-free; the teacher_target strategy is not valid here");
    }
    ensure_out_dir(config);
    const DataBundle data = load_data(config);
    const ModelSpec spec = make_spec(data, config.student_hidden);

    std::vector<std::uint64_t> tracked;
    if (config.trace_enabled) {
        const auto [auto_easy, auto_hard] = pick_trace_samples(data.train);
        const auto resolve = [&](const std::string& choice, std::uint64_t fallback) {
            if (choice == "auto") return fallback;
            try {
                return static_cast<std::uint64_t>(std::stoull(choice));
            } catch (const std::exception&) {
                throw ConfigError("tfnkd.trace_easy/trace_hard must be 'auto' or a sample id, got '" +
                                  choice + "'");
            }
        };
        tracked.push_back(resolve(config.trace_easy, auto_easy));
        const std::uint64_t hard = resolve(config.trace_hard, auto_hard);
        if (hard != tracked.front()) tracked.push_back(hard);
    }

    std::vector<ReportRow> all_rows;
    std::vector<WeightStrategy> strategies;
    if (config.tfnkd_sweep) {
        strategies.assign(kSmoothingStrategies.begin(), kSmoothingStrategies.end());
    } else {
        strategies.push_back(config.strategy);
    }

    bool trace_written = false;
    for (WeightStrategy strategy : strategies) {
        LossSelector selector;
        selector.kind = LossKind::Tfnkd;
        selector.strategy = strategy;

        std::string label = config.label;
        if (label.empty() || config.tfnkd_sweep) {
            label = std::string("tfnkd_") + strategy_name(strategy);
        }
        const SeedRunOutput run = run_seeds(config, spec, data, selector, label, tracked);
        for (std::size_t i = 0; i < config.seeds.size(); ++i) {
            const std::string tag = label + "_" + seed_file_tag(config.seeds[i]);
            write_metrics_csv(out_path(config, tag + "_metrics.csv"), run.results[i].metrics);
            write_terms_csv(out_path(config, tag + "_terms.csv"), run.results[i].terms);
        }
        if (!tracked.empty() && !run.results.front().trace.points.empty()) {
            write_trace_csv(out_path(config, label + "_trace.csv"),
                            run.results.front().trace);
            trace_written = true;
        }
        all_rows.insert(all_rows.end(), run.rows.begin(), run.rows.end());
    }

    if (config.tfnkd_sweep) {
        // Baseline CE row set for the strategy table.
        LossSelector baseline;
        baseline.kind = LossKind::Ce;
        const SeedRunOutput run = run_seeds(config, spec, data, baseline, "baseline_ce");
        all_rows.insert(all_rows.end(), run.rows.begin(), run.rows.end());
    }

    std::string report_label;
    if (config.tfnkd_sweep) {
        report_label = "tfnkd_sweep";
    } else if (!config.label.empty()) {
        report_label = config.label;
    } else {
        report_label = std::string("tfnkd_") + strategy_name(config.strategy);
    }
    write_report_csv(out_path(config, report_label + "_report.csv"), all_rows);
    ordered_json extras;
    if (!tracked.empty()) {
        extras["trace_sample_ids"] = tracked;
        extras["trace_written"] = trace_written;
    }
    write_summary_json(out_path(config, report_label + "_summary.json"), "tfnkd", config,
                       all_rows, extras);
    print_rows(out, all_rows);
    return 0;
}

int cmd_sweep_temp(const ExperimentConfig& config, std::ostream& out) {
    ensure_out_dir(config);
    const DataBundle data = load_data(config);
    const ModelSpec spec = make_spec(data, config.student_hidden);
    const TeacherCache cache = load_or_build_cache(config, data.train, out);

    std::vector<ReportRow> all_rows;
    double best_lambda = config.sweep_lambdas.front();
    double best_top1 = -1.0;
    for (double lambda : config.sweep_lambdas) {
        LossSelector selector;
        selector.kind = LossKind::Nkd;
        selector.cache = &cache;
        selector.distill = config.distill;
        selector.distill.lambda = lambda;

        std::ostringstream label_os;
        label_os << "nkd_lambda" << lambda;
        const std::string label = label_os.str();
        const SeedRunOutput run = run_seeds(config, spec, data, selector, label);
        for (const ReportRow& row : run.rows) {
            if (row.seed == "mean" && row.top1 > best_top1) {
                best_top1 = row.top1;
                best_lambda = lambda;
            }
        }
        all_rows.insert(all_rows.end(), run.rows.begin(), run.rows.end());
    }
    assert_teacher_frozen(config, cache);

    write_report_csv(out_path(config, "sweep_temp_report.csv"), all_rows);
    ordered_json extras;
    extras["best_lambda"] = best_lambda;
    extras["best_mean_top1"] = best_top1;
    write_summary_json(out_path(config, "sweep_temp_summary.json"), "sweep-temp", config,
                       all_rows, extras);
    print_rows(out, all_rows);
    out << "best lambda by mean top1: " << best_lambda << " (top1 " << best_top1 << ")\n";
    return 0;
}

} // namespace kd
