#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "kd/error.hpp"
#include "kd/experiments.hpp"

namespace {

// Exit-code contract: 0 success, 1 verification failure (returned by the
// verify command itself), 2 config error, 3 numeric failure during a run.
constexpr int kExitConfigError = 2;
constexpr int kExitNumericError = 3;

struct CommandArgs {
    std::string config_path;
    std::vector<std::string> sets;   // --set key=value, applied after the file
    std::vector<std::string> flags;  // dedicated flags, applied last
};

void add_common_options(CLI::App* cmd, CommandArgs& args) {
    cmd->add_option("--config", args.config_path, "Config file with key = value lines");
    cmd->add_option("--set", args.sets,
                    "Override any config key as key=value (repeatable)");
}

// Binds a string-valued flag that maps onto a config key.
void map_option(CLI::App* cmd, CommandArgs& args, const std::string& flag,
                const std::string& key, const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [&args, key](const std::string& v) { args.flags.push_back(key + "=" + v); },
        help);
}

// Binds a boolean flag that sets a config key to a fixed value.
void map_flag(CLI::App* cmd, CommandArgs& args, const std::string& flag,
              const std::string& assignment, const std::string& help) {
    cmd->add_flag_callback(
        flag, [&args, assignment] { args.flags.push_back(assignment); }, help);
}

kd::ExperimentConfig build_config(const CommandArgs& args) {
    std::vector<std::string> overrides = args.sets;
    overrides.insert(overrides.end(), args.flags.begin(), args.flags.end());
    kd::ExperimentConfig config = kd::load_experiment_config(args.config_path, overrides);
    config.validate();
    return config;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"kdlab: a laboratory for logit-distillation losses"};
    app.require_subcommand(1);

    int exit_code = 0;
    const auto dispatch = [&exit_code](CommandArgs& args,
                                       std::function<int(const kd::ExperimentConfig&)> fn) {
        const kd::ExperimentConfig config = build_config(args);
        exit_code = fn(config);
    };

    CommandArgs verify_args;
    CLI::App* verify = app.add_subcommand(
        "verify", "Run the identity, normalization, and gradient self-checks");
    add_common_options(verify, verify_args);
    map_option(verify, verify_args, "--trials", "verify.trials",
               "Random cases per identity sweep");
    map_option(verify, verify_args, "--grad-instances", "verify.grad_instances",
               "Random instances per gradient check");
    map_option(verify, verify_args, "--seed", "verify.seed", "Seed for the random sweeps");
    map_flag(verify, verify_args, "--inject-kd-bug", "verify.inject_kd_bug=true",
             "Deliberately break the decomposition identity (self-test of the suite)");
    verify->callback([&] {
        dispatch(verify_args,
                 [](const kd::ExperimentConfig& c) { return kd::cmd_verify(c, std::cout); });
    });

    CommandArgs teacher_args;
    CLI::App* teacher = app.add_subcommand(
        "train-teacher", "Train the teacher model and write checkpoint plus logit cache");
    add_common_options(teacher, teacher_args);
    map_option(teacher, teacher_args, "--out-dir", "run.out_dir", "Output directory");
    map_option(teacher, teacher_args, "--seed", "run.seeds", "Teacher training seed");
    map_option(teacher, teacher_args, "--epochs", "train.epochs", "Training epochs");
    map_option(teacher, teacher_args, "--alpha-ls", "train.alpha_ls",
               "Label-smoothing coefficient (0 = plain cross-entropy)");
    map_option(teacher, teacher_args, "--weight-decay", "teacher.weight_decay",
               "Teacher weight decay (students use train.weight_decay)");
    map_option(teacher, teacher_args, "--label", "run.label", "Report label");
    teacher->callback([&] {
        dispatch(teacher_args, [](const kd::ExperimentConfig& c) {
            return kd::cmd_train_teacher(c, std::cout);
        });
    });

    CommandArgs baseline_args;
    CLI::App* baseline = app.add_subcommand(
        "train-baseline", "Train the student with plain cross-entropy over all seeds");
    add_common_options(baseline, baseline_args);
    map_option(baseline, baseline_args, "--out-dir", "run.out_dir", "Output directory");
    map_option(baseline, baseline_args, "--seeds", "run.seeds",
               "Comma-separated student seeds");
    map_option(baseline, baseline_args, "--epochs", "train.epochs", "Training epochs");
    map_option(baseline, baseline_args, "--alpha-ls", "train.alpha_ls",
               "Label-smoothing coefficient (0 = plain cross-entropy)");
    map_option(baseline, baseline_args, "--label", "run.label", "Report label");
    map_flag(baseline, baseline_args, "--parallel", "run.parallel=true",
             "Run independent seeds on separate threads");
    baseline->callback([&] {
        dispatch(baseline_args, [](const kd::ExperimentConfig& c) {
            return kd::cmd_train_baseline(c, std::cout);
        });
    });

    CommandArgs distill_args;
    CLI::App* distill = app.add_subcommand(
        "distill", "Distill the teacher into the student (combined or ablated loss)");
    add_common_options(distill, distill_args);
    map_option(distill, distill_args, "--out-dir", "run.out_dir", "Output directory");
    map_option(distill, distill_args, "--seeds", "run.seeds", "Comma-separated student seeds");
    map_option(distill, distill_args, "--epochs", "train.epochs", "Training epochs");
    map_option(distill, distill_args, "--teacher", "teacher.checkpoint",
               "Teacher checkpoint path");
    map_option(distill, distill_args, "--alpha", "distill.alpha",
               "Weight of the non-target distribution term");
    map_option(distill, distill_args, "--lambda", "distill.lambda",
               "Temperature of the non-target distribution term");
    map_option(distill, distill_args, "--label", "run.label", "Report label");
    map_flag(distill, distill_args, "--no-soft", "distill.use_soft=false",
             "Disable the teacher-confidence target term");
    map_flag(distill, distill_args, "--no-distributed", "distill.use_distributed=false",
             "Disable the non-target distribution term");
    map_flag(distill, distill_args, "--classical", "distill.classical=true",
             "Use classical distillation (cross-entropy plus full soft-label term)");
    map_flag(distill, distill_args, "--perfect-teacher", "distill.perfect_teacher=true",
             "Force the teacher's target confidence to 1");
    map_flag(distill, distill_args, "--parallel", "run.parallel=true",
             "Run independent seeds on separate threads");
    distill->callback([&] {
        dispatch(distill_args, [](const kd::ExperimentConfig& c) {
            return kd::cmd_distill(c, std::cout);
        });
    });

    CommandArgs tfnkd_args;
    CLI::App* tfnkd = app.add_subcommand(
        "tfnkd", "Teacher-free training with a smoothed self-weight");
    add_common_options(tfnkd, tfnkd_args);
    map_option(tfnkd, tfnkd_args, "--out-dir", "run.out_dir", "Output directory");
    map_option(tfnkd, tfnkd_args, "--seeds", "run.seeds", "Comma-separated student seeds");
    map_option(tfnkd, tfnkd_args, "--epochs", "train.epochs", "Training epochs");
    map_option(tfnkd, tfnkd_args, "--strategy", "tfnkd.strategy",
               "Weight smoothing strategy name");
    map_option(tfnkd, tfnkd_args, "--label", "run.label", "Report label");
    map_flag(tfnkd, tfnkd_args, "--sweep", "tfnkd.sweep=true",
             "Run every smoothing strategy plus a cross-entropy baseline");
    map_flag(tfnkd, tfnkd_args, "--no-trace", "tfnkd.trace=false",
             "Skip the per-sample weight trace CSV");
    map_flag(tfnkd, tfnkd_args, "--parallel", "run.parallel=true",
             "Run independent seeds on separate threads");
    tfnkd->callback([&] {
        dispatch(tfnkd_args, [](const kd::ExperimentConfig& c) {
            return kd::cmd_tfnkd(c, std::cout);
        });
    });

    CommandArgs sweep_args;
    CLI::App* sweep = app.add_subcommand(
        "sweep-temp", "Distill across a grid of temperatures and rank them");
    add_common_options(sweep, sweep_args);
    map_option(sweep, sweep_args, "--out-dir", "run.out_dir", "Output directory");
    map_option(sweep, sweep_args, "--seeds", "run.seeds", "Comma-separated student seeds");
    map_option(sweep, sweep_args, "--epochs", "train.epochs", "Training epochs");
    map_option(sweep, sweep_args, "--teacher", "teacher.checkpoint",
               "Teacher checkpoint path");
    map_option(sweep, sweep_args, "--lambdas", "sweep.lambdas",
               "Comma-separated temperature grid");
    map_flag(sweep, sweep_args, "--parallel", "run.parallel=true",
             "Run independent seeds on separate threads");
    sweep->callback([&] {
        dispatch(sweep_args, [](const kd::ExperimentConfig& c) {
            return kd::cmd_sweep_temp(c, std::cout);
        });
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
            return app.exit(e);  // --help / --version
        }
        app.exit(e);
        return kExitConfigError;
    } catch (const kd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const kd::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumericError;
    } catch (const kd::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfigError;
    }
    return exit_code;
}
