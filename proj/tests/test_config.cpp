#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "kd/config.hpp"
#include "kd/error.hpp"

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& tag) : path("/tmp/kdlab_test_config_" + tag) {}
    ~TempFile() { std::remove(path.c_str()); }
    void fill(const std::string& text) const {
        std::ofstream os(path);
        os << text;
    }
};

kd::ExperimentConfig from_overrides(const std::vector<std::string>& overrides) {
    return kd::load_experiment_config("", overrides);
}

} // namespace

TEST_CASE("default configuration matches the documented desk-scale recipe") {
    const kd::ExperimentConfig c;
    CHECK(c.source == kd::DataSource::Blobs);
    CHECK(c.blobs.num_classes == 10);
    CHECK(c.blobs.dim == 20);
    CHECK(c.blobs.samples_per_class == 500);
    CHECK(c.blobs.noise_sigma == 1.4);
    CHECK(c.blobs_test_per_class == 100);
    CHECK(c.teacher_hidden == std::vector<std::size_t>{128, 128});
    CHECK(c.student_hidden == std::vector<std::size_t>{16});
    CHECK(c.teacher_weight_decay == 0.02);
    CHECK(c.train.epochs == 60);
    CHECK(c.train.batch_size == 64);
    CHECK(c.train.lr == 0.1);
    CHECK(c.train.momentum == 0.9);
    CHECK(c.train.schedule == kd::LrSchedule::Step);
    CHECK(c.train.milestones == std::vector<std::size_t>{30, 45});
    CHECK(c.train.gamma == 0.1);
    CHECK(c.distill.alpha == 1.5);
    CHECK(c.distill.lambda == 1.0);
    CHECK(c.distill.use_soft);
    CHECK(c.distill.use_distributed);
    CHECK(c.strategy == kd::WeightStrategy::StPlusVtMinusMean);
    CHECK(c.seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
    CHECK(c.sweep_lambdas == std::vector<double>{0.5, 1.0, 2.0, 3.0, 4.0, 5.0});
    CHECK(c.verify_trials == 1000);
    CHECK(c.verify_grad_instances == 100);
    CHECK(c.verify_seed == 20250817);
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("config files accept comments, blanks, and spaced key = value lines") {
    TempFile file("basic");
    file.fill("# a comment line\n"
              "\n"
              "train.lr = 0.25   # trailing comment\n"
              "  train.epochs=7\n"
              "run.seeds = 4, 5,6\n"
              "student.hidden = 32,16\n"
              "tfnkd.strategy = st_over_mean\n"
              "train.schedule = cosine\n");
    const kd::ExperimentConfig c = kd::load_experiment_config(file.path, {});
    CHECK(c.train.lr == 0.25);
    CHECK(c.train.epochs == 7);
    CHECK(c.seeds == std::vector<std::uint64_t>{4, 5, 6});
    CHECK(c.student_hidden == std::vector<std::size_t>{32, 16});
    CHECK(c.strategy == kd::WeightStrategy::StOverMean);
    CHECK(c.train.schedule == kd::LrSchedule::Cosine);
}

TEST_CASE("overrides apply after the file, in order") {
    TempFile file("layered");
    file.fill("train.lr = 0.25\nblobs.classes = 4\n");
    const kd::ExperimentConfig c = kd::load_experiment_config(
        file.path, {"train.lr=0.5", "train.lr =  0.125", "blobs.dim=6"});
    CHECK(c.train.lr == 0.125);  // last assignment wins
    CHECK(c.blobs.num_classes == 4);
    CHECK(c.blobs.dim == 6);
}

TEST_CASE("config parsing rejects malformed input") {
    CHECK_THROWS_AS(from_overrides({"no.such.key=1"}), kd::ConfigError);
    CHECK_THROWS_AS(from_overrides({"train.lr=fast"}), kd::ConfigError);
    CHECK_THROWS_AS(from_overrides({"train.epochs=-3"}), kd::ConfigError);
    CHECK_THROWS_AS(from_overrides({"train.epochs=2.5"}), kd::ConfigError);
    CHECK_THROWS_AS(from_overrides({"mixup.enabled=maybe"}), kd::ConfigError);
    CHECK_THROWS_AS(from_overrides({"data.source=parquet"}), kd::ConfigError);
    CHECK_THROWS_AS(from_overrides({"tfnkd.strategy=mystery"}), kd::ConfigError);
    CHECK_THROWS_AS(from_overrides({"train.schedule=linear"}), kd::ConfigError);
    CHECK_THROWS_AS(from_overrides({"train.lr"}), kd::ConfigError);  // no '='

    TempFile file("broken");
    file.fill("train.lr 0.5\n");
    CHECK_THROWS_AS(kd::load_experiment_config(file.path, {}), kd::ConfigError);
    file.fill("= 0.5\n");
    CHECK_THROWS_AS(kd::load_experiment_config(file.path, {}), kd::ConfigError);
    CHECK_THROWS_AS(kd::load_experiment_config("/tmp/kdlab_test_config_absent", {}),
                    kd::ConfigError);
}

TEST_CASE("booleans accept the usual spellings") {
    for (const char* yes : {"true", "1", "yes", "on", "TRUE", "Yes"}) {
        CHECK(from_overrides({std::string("mixup.enabled=") + yes}).train.mixup_enabled);
    }
    for (const char* no : {"false", "0", "no", "off", "False"}) {
        CHECK_FALSE(from_overrides({std::string("mixup.enabled=") + no}).train.mixup_enabled);
    }
}

TEST_CASE("every documented key round-trips through apply_config_entry") {
    kd::ExperimentConfig c;
    const std::vector<std::pair<std::string, std::string>> entries = {
        {"data.source", "csv"},
        {"blobs.classes", "7"},
        {"blobs.dim", "11"},
        {"blobs.train_per_class", "40"},
        {"blobs.test_per_class", "9"},
        {"blobs.noise_sigma", "0.75"},
        {"blobs.center_scale", "2.5"},
        {"blobs.seed", "99"},
        {"idx.train_images", "a.idx"},
        {"idx.train_labels", "b.idx"},
        {"idx.test_images", "c.idx"},
        {"idx.test_labels", "d.idx"},
        {"csv.train", "train.csv"},
        {"csv.test", "test.csv"},
        {"csv.classes", "12"},
        {"teacher.hidden", "64,64"},
        {"teacher.checkpoint", "t.ckpt"},
        {"teacher.weight_decay", "0.005"},
        {"student.hidden", "24"},
        {"train.epochs", "13"},
        {"train.batch_size", "17"},
        {"train.lr", "0.3"},
        {"train.momentum", "0.85"},
        {"train.weight_decay", "0.0001"},
        {"train.schedule", "constant"},
        {"train.milestones", "10,20"},
        {"train.gamma", "0.5"},
        {"train.topk", "3"},
        {"train.alpha_ls", "0.15"},
        {"mixup.enabled", "true"},
        {"mixup.lam", "0.4"},
        {"mixup.alpha", "0.3"},
        {"distill.alpha", "2.5"},
        {"distill.lambda", "3"},
        {"distill.use_soft", "false"},
        {"distill.use_distributed", "false"},
        {"distill.perfect_teacher", "true"},
        {"distill.classical", "true"},
        {"distill.classical_lambda_sq", "true"},
        {"tfnkd.strategy", "sqrt_st_minus_min"},
        {"tfnkd.sweep", "true"},
        {"tfnkd.trace", "false"},
        {"tfnkd.trace_easy", "123"},
        {"tfnkd.trace_hard", "456"},
        {"run.seeds", "8,9"},
        {"run.out_dir", "exp"},
        {"run.label", "mylabel"},
        {"run.parallel", "true"},
        {"sweep.lambdas", "1.5,2.5"},
        {"verify.trials", "50"},
        {"verify.grad_instances", "6"},
        {"verify.seed", "31337"},
        {"verify.inject_kd_bug", "true"},
    };
    for (const auto& [key, value] : entries) {
        CHECK_NOTHROW(kd::apply_config_entry(c, key, value));
    }
    CHECK(c.source == kd::DataSource::Csv);
    CHECK(c.blobs.num_classes == 7);
    CHECK(c.blobs.seed == 99);
    CHECK(c.csv_classes == 12);
    CHECK(c.teacher_weight_decay == 0.005);
    CHECK(c.train.mixup_lam == 0.4);
    CHECK(c.distill.lambda == 3.0);
    CHECK(c.perfect_teacher);
    CHECK(c.classical_kd);
    CHECK(c.classical_lambda_sq);
    CHECK(c.strategy == kd::WeightStrategy::SqrtStMinusMin);
    CHECK_FALSE(c.trace_enabled);
    CHECK(c.trace_easy == "123");
    CHECK(c.trace_hard == "456");
    CHECK(c.parallel_seeds);
    CHECK(c.sweep_lambdas == std::vector<double>{1.5, 2.5});
    CHECK(c.verify_inject_kd_bug);
    CHECK(c.teacher_checkpoint_path() == "t.ckpt");

    // Replaying the snapshot onto a fresh default config reproduces every field.
    kd::ExperimentConfig replayed;
    for (const auto& [key, value] : kd::config_snapshot(c)) {
        kd::apply_config_entry(replayed, key, value);
    }
    const auto snap_a = kd::config_snapshot(c);
    const auto snap_b = kd::config_snapshot(replayed);
    REQUIRE(snap_a.size() == snap_b.size());
    for (std::size_t i = 0; i < snap_a.size(); ++i) {
        CHECK(snap_a[i].first == snap_b[i].first);
        CHECK(snap_a[i].second == snap_b[i].second);
    }
}

TEST_CASE("snapshot covers the default config and survives a replay") {
    const kd::ExperimentConfig c;
    const auto snap = kd::config_snapshot(c);
    CHECK(snap.size() >= 40);
    kd::ExperimentConfig replayed;
    for (const auto& [key, value] : snap) {
        kd::apply_config_entry(replayed, key, value);
    }
    const auto snap2 = kd::config_snapshot(replayed);
    REQUIRE(snap.size() == snap2.size());
    for (std::size_t i = 0; i < snap.size(); ++i) {
        CHECK(snap[i].first == snap2[i].first);
        CHECK(snap[i].second == snap2[i].second);
    }
}

TEST_CASE("teacher_checkpoint_path falls back to the run directory") {
    kd::ExperimentConfig c;
    c.out_dir = "myrun";
    CHECK(c.teacher_checkpoint_path() == "myrun/teacher.ckpt");
    c.teacher_checkpoint = "elsewhere.ckpt";
    CHECK(c.teacher_checkpoint_path() == "elsewhere.ckpt");
}

TEST_CASE("validate rejects inconsistent experiment settings") {
    kd::ExperimentConfig c;
    c.seeds.clear();
    CHECK_THROWS_AS(c.validate(), kd::ConfigError);

    c = {};
    c.sweep_lambdas.clear();
    CHECK_THROWS_AS(c.validate(), kd::ConfigError);

    c = {};
    c.sweep_lambdas = {1.0, -2.0};
    CHECK_THROWS_AS(c.validate(), kd::ConfigError);

    c = {};
    c.distill.lambda = 0.0;
    CHECK_THROWS_AS(c.validate(), kd::ConfigError);

    c = {};
    c.teacher_weight_decay = -0.1;
    CHECK_THROWS_AS(c.validate(), kd::ConfigError);

    c = {};
    c.alpha_ls = 1.0;
    CHECK_THROWS_AS(c.validate(), kd::ConfigError);

    c = {};
    c.train.lr = -1.0;  // nested TrainConfig failures surface as ConfigError
    CHECK_THROWS_AS(c.validate(), kd::ConfigError);

    c = {};
    c.blobs.noise_sigma = 0.0;
    CHECK_THROWS_AS(c.validate(), kd::ConfigError);

    c = {};
    c.source = kd::DataSource::Idx;  // paths missing
    CHECK_THROWS_AS(c.validate(), kd::ConfigError);

    c = {};
    c.source = kd::DataSource::Csv;  // paths missing
    CHECK_THROWS_AS(c.validate(), kd::ConfigError);
    c.csv_train = "a.csv";
    c.csv_test = "b.csv";
    CHECK_NOTHROW(c.validate());

    c = {};
    c.out_dir.clear();
    CHECK_THROWS_AS(c.validate(), kd::ConfigError);
}

TEST_CASE("the shipped default config file reproduces the built-in defaults") {
    const kd::ExperimentConfig from_file = kd::load_experiment_config(
        std::string(KDLAB_SOURCE_DIR) + "/configs/blobs_default.conf", {});
    CHECK_NOTHROW(from_file.validate());
    const auto expected = kd::config_snapshot(kd::ExperimentConfig{});
    const auto actual = kd::config_snapshot(from_file);
    REQUIRE(expected.size() == actual.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        CAPTURE(expected[i].first);
        CHECK(expected[i].first == actual[i].first);
        CHECK(expected[i].second == actual[i].second);
    }
}

TEST_CASE("schedule names map both ways") {
    CHECK(std::string(kd::schedule_name(kd::LrSchedule::Constant)) == "constant");
    CHECK(std::string(kd::schedule_name(kd::LrSchedule::Step)) == "step");
    CHECK(std::string(kd::schedule_name(kd::LrSchedule::Cosine)) == "cosine");
    CHECK(kd::schedule_from_name("constant") == kd::LrSchedule::Constant);
    CHECK(kd::schedule_from_name("step") == kd::LrSchedule::Step);
    CHECK(kd::schedule_from_name("cosine") == kd::LrSchedule::Cosine);
    CHECK_THROWS_AS(kd::schedule_from_name("warmup"), kd::ConfigError);
}
