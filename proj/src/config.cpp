#include "kd/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace kd {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0;
    std::size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* expected) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) bad_value(key, value, "a number");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        bad_value(key, value, "a number");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    // stoull quietly wraps "-3" to a huge value; forbid signs outright.
    if (value.find('-') != std::string::npos || value.find('+') != std::string::npos) {
        bad_value(key, value, "an unsigned integer");
    }
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(value, &used);
        if (used != value.size()) bad_value(key, value, "an unsigned integer");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        bad_value(key, value, "an unsigned integer");
    }
}

std::size_t parse_size(const std::string& key, const std::string& value) {
    return static_cast<std::size_t>(parse_u64(key, value));
}

bool parse_bool(const std::string& key, const std::string& value) {
    std::string v = value;
    std::transform(v.begin(), v.end(), v.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad_value(key, value, "a boolean (true/false)");
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> parts;
    std::istringstream is(value);
    std::string item;
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (!item.empty()) parts.push_back(item);
    }
    return parts;
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value) {
    std::vector<std::size_t> out;
    for (const std::string& item : split_list(value)) out.push_back(parse_size(key, item));
    return out;
}

std::vector<std::uint64_t> parse_u64_list(const std::string& key, const std::string& value) {
    std::vector<std::uint64_t> out;
    for (const std::string& item : split_list(value)) out.push_back(parse_u64(key, item));
    return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    for (const std::string& item : split_list(value)) out.push_back(parse_double(key, item));
    return out;
}

template <typename T>
std::string join_list(const std::vector<T>& values) {
    std::ostringstream os;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i > 0) os << ",";
        os << values[i];
    }
    return os.str();
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

} // namespace

const char* schedule_name(LrSchedule schedule) {
    switch (schedule) {
        case LrSchedule::Constant: return "constant";
        case LrSchedule::Step: return "step";
        case LrSchedule::Cosine: return "cosine";
    }
    return "unknown";
}

LrSchedule schedule_from_name(const std::string& name) {
    if (name == "constant") return LrSchedule::Constant;
    if (name == "step") return LrSchedule::Step;
    if (name == "cosine") return LrSchedule::Cosine;
    throw ConfigError("config key 'train.schedule': unknown schedule '" + name +
                      "' (expected constant, step, or cosine)");
}

std::string ExperimentConfig::teacher_checkpoint_path() const {
    if (!teacher_checkpoint.empty()) return teacher_checkpoint;
    return out_dir + "/teacher.ckpt";
}

void ExperimentConfig::validate() const {
    try {
        train.validate();
        if (source == DataSource::Blobs) blobs.validate();
    } catch (const InvalidParameterError& e) {
        throw ConfigError(e.what());
    }
    if (seeds.empty()) throw ConfigError("run.seeds must list at least one seed");
    if (sweep_lambdas.empty()) throw ConfigError("sweep.lambdas must list at least one value");
    for (double l : sweep_lambdas) {
        if (!(l > 0.0)) throw ConfigError("sweep.lambdas entries must be positive");
    }
    if (!(distill.lambda > 0.0)) throw ConfigError("distill.lambda must be positive");
    if (!(distill.alpha >= 0.0)) throw ConfigError("distill.alpha must be nonnegative");
    if (!(teacher_weight_decay >= 0.0)) {
        throw ConfigError("teacher.weight_decay must be nonnegative");
    }
    if (alpha_ls < 0.0 || alpha_ls >= 1.0) throw ConfigError("train.alpha_ls must lie in [0,1)");
    if (source == DataSource::Idx) {
        if (idx_train_images.empty() || idx_train_labels.empty() || idx_test_images.empty() ||
            idx_test_labels.empty()) {
            throw ConfigError("idx.* paths must all be set when data.source=idx");
        }
    }
    if (source == DataSource::Csv) {
        if (csv_train.empty() || csv_test.empty()) {
            throw ConfigError("csv.train and csv.test must be set when data.source=csv");
        }
    }
    if (out_dir.empty()) throw ConfigError("run.out_dir must not be empty");
}

void apply_config_entry(ExperimentConfig& c, const std::string& key, const std::string& value) {
    if (key == "data.source") {
        if (value == "blobs") c.source = DataSource::Blobs;
        else if (value == "idx") c.source = DataSource::Idx;
        else if (value == "csv") c.source = DataSource::Csv;
        else bad_value(key, value, "one of blobs/idx/csv");
    } else if (key == "blobs.classes") {
        c.blobs.num_classes = parse_size(key, value);
    } else if (key == "blobs.dim") {
        c.blobs.dim = parse_size(key, value);
    } else if (key == "blobs.train_per_class") {
        c.blobs.samples_per_class = parse_size(key, value);
    } else if (key == "blobs.test_per_class") {
        c.blobs_test_per_class = parse_size(key, value);
    } else if (key == "blobs.center_scale") {
        c.blobs.center_scale = parse_double(key, value);
    } else if (key == "blobs.noise_sigma") {
        c.blobs.noise_sigma = parse_double(key, value);
    } else if (key == "blobs.seed") {
        c.blobs.seed = parse_u64(key, value);
    } else if (key == "idx.train_images") {
        c.idx_train_images = value;
    } else if (key == "idx.train_labels") {
        c.idx_train_labels = value;
    } else if (key == "idx.test_images") {
        c.idx_test_images = value;
    } else if (key == "idx.test_labels") {
        c.idx_test_labels = value;
    } else if (key == "csv.train") {
        c.csv_train = value;
    } else if (key == "csv.test") {
        c.csv_test = value;
    } else if (key == "csv.classes") {
        c.csv_classes = parse_size(key, value);
    } else if (key == "teacher.hidden") {
        c.teacher_hidden = parse_size_list(key, value);
    } else if (key == "student.hidden") {
        c.student_hidden = parse_size_list(key, value);
    } else if (key == "teacher.checkpoint") {
        c.teacher_checkpoint = value;
    } else if (key == "teacher.weight_decay") {
        c.teacher_weight_decay = parse_double(key, value);
    } else if (key == "train.epochs") {
        c.train.epochs = parse_size(key, value);
    } else if (key == "train.batch_size") {
        c.train.batch_size = parse_size(key, value);
    } else if (key == "train.lr") {
        c.train.lr = parse_double(key, value);
    } else if (key == "train.momentum") {
        c.train.momentum = parse_double(key, value);
    } else if (key == "train.weight_decay") {
        c.train.weight_decay = parse_double(key, value);
    } else if (key == "train.schedule") {
        c.train.schedule = schedule_from_name(value);
    } else if (key == "train.milestones") {
        c.train.milestones = parse_size_list(key, value);
    } else if (key == "train.gamma") {
        c.train.gamma = parse_double(key, value);
    } else if (key == "train.topk") {
        c.train.topk = parse_size(key, value);
    } else if (key == "train.alpha_ls") {
        c.alpha_ls = parse_double(key, value);
    } else if (key == "mixup.enabled") {
        c.train.mixup_enabled = parse_bool(key, value);
    } else if (key == "mixup.lam") {
        c.train.mixup_lam = parse_double(key, value);
    } else if (key == "mixup.alpha") {
        c.train.mixup_alpha = parse_double(key, value);
    } else if (key == "distill.alpha") {
        c.distill.alpha = parse_double(key, value);
    } else if (key == "distill.lambda") {
        c.distill.lambda = parse_double(key, value);
    } else if (key == "distill.use_soft") {
        c.distill.use_soft = parse_bool(key, value);
    } else if (key == "distill.use_distributed") {
        c.distill.use_distributed = parse_bool(key, value);
    } else if (key == "distill.perfect_teacher") {
        c.perfect_teacher = parse_bool(key, value);
    } else if (key == "distill.classical") {
        c.classical_kd = parse_bool(key, value);
    } else if (key == "distill.classical_lambda_sq") {
        c.classical_lambda_sq = parse_bool(key, value);
    } else if (key == "tfnkd.strategy") {
        try {
            c.strategy = strategy_from_name(value);
        } catch (const InvalidParameterError& e) {
            throw ConfigError(e.what());
        }
    } else if (key == "tfnkd.sweep") {
        c.tfnkd_sweep = parse_bool(key, value);
    } else if (key == "tfnkd.trace") {
        c.trace_enabled = parse_bool(key, value);
    } else if (key == "tfnkd.trace_easy") {
        c.trace_easy = value;
    } else if (key == "tfnkd.trace_hard") {
        c.trace_hard = value;
    } else if (key == "run.seeds") {
        c.seeds = parse_u64_list(key, value);
    } else if (key == "run.out_dir") {
        c.out_dir = value;
    } else if (key == "run.label") {
        c.label = value;
    } else if (key == "run.parallel") {
        c.parallel_seeds = parse_bool(key, value);
    } else if (key == "sweep.lambdas") {
        c.sweep_lambdas = parse_double_list(key, value);
    } else if (key == "verify.trials") {
        c.verify_trials = parse_size(key, value);
    } else if (key == "verify.grad_instances") {
        c.verify_grad_instances = parse_size(key, value);
    } else if (key == "verify.seed") {
        c.verify_seed = parse_u64(key, value);
    } else if (key == "verify.inject_kd_bug") {
        c.verify_inject_kd_bug = parse_bool(key, value);
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

ExperimentConfig load_experiment_config(const std::string& config_path,
                                        const std::vector<std::string>& overrides) {
    ExperimentConfig config;
    if (!config_path.empty()) {
        std::ifstream is(config_path);
        if (!is) throw ConfigError("cannot open config file: " + config_path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(config_path + ":" + std::to_string(line_no) +
                                  ": expected key = value");
            }
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty()) {
                throw ConfigError(config_path + ":" + std::to_string(line_no) + ": empty key");
            }
            apply_config_entry(config, key, value);
        }
    }
    for (const std::string& entry : overrides) {
        const std::size_t eq = entry.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("override '" + entry + "': expected key=value");
        }
        apply_config_entry(config, trim(entry.substr(0, eq)), trim(entry.substr(eq + 1)));
    }
    return config;
}

std::vector<std::pair<std::string, std::string>> config_snapshot(const ExperimentConfig& c) {
    std::vector<std::pair<std::string, std::string>> snap;
    const auto add = [&](const std::string& key, const std::string& value) {
        snap.emplace_back(key, value);
    };
    switch (c.source) {
        case DataSource::Blobs: add("data.source", "blobs"); break;
        case DataSource::Idx: add("data.source", "idx"); break;
        case DataSource::Csv: add("data.source", "csv"); break;
    }
    add("blobs.classes", std::to_string(c.blobs.num_classes));
    add("blobs.dim", std::to_string(c.blobs.dim));
    add("blobs.train_per_class", std::to_string(c.blobs.samples_per_class));
    add("blobs.test_per_class", std::to_string(c.blobs_test_per_class));
    add("blobs.center_scale", format_double(c.blobs.center_scale));
    add("blobs.noise_sigma", format_double(c.blobs.noise_sigma));
    add("blobs.seed", std::to_string(c.blobs.seed));
    if (!c.idx_train_images.empty()) add("idx.train_images", c.idx_train_images);
    if (!c.idx_train_labels.empty()) add("idx.train_labels", c.idx_train_labels);
    if (!c.idx_test_images.empty()) add("idx.test_images", c.idx_test_images);
    if (!c.idx_test_labels.empty()) add("idx.test_labels", c.idx_test_labels);
    if (!c.csv_train.empty()) add("csv.train", c.csv_train);
    if (!c.csv_test.empty()) add("csv.test", c.csv_test);
    if (c.csv_classes > 0) add("csv.classes", std::to_string(c.csv_classes));
    add("teacher.hidden", join_list(c.teacher_hidden));
    add("teacher.weight_decay", format_double(c.teacher_weight_decay));
    add("student.hidden", join_list(c.student_hidden));
    if (!c.teacher_checkpoint.empty()) add("teacher.checkpoint", c.teacher_checkpoint);
    add("train.epochs", std::to_string(c.train.epochs));
    add("train.batch_size", std::to_string(c.train.batch_size));
    add("train.lr", format_double(c.train.lr));
    add("train.momentum", format_double(c.train.momentum));
    add("train.weight_decay", format_double(c.train.weight_decay));
    add("train.schedule", schedule_name(c.train.schedule));
    add("train.milestones", join_list(c.train.milestones));
    add("train.gamma", format_double(c.train.gamma));
    add("train.topk", std::to_string(c.train.topk));
    add("train.alpha_ls", format_double(c.alpha_ls));
    add("mixup.enabled", c.train.mixup_enabled ? "true" : "false");
    add("mixup.lam", format_double(c.train.mixup_lam));
    add("mixup.alpha", format_double(c.train.mixup_alpha));
    add("distill.alpha", format_double(c.distill.alpha));
    add("distill.lambda", format_double(c.distill.lambda));
    add("distill.use_soft", c.distill.use_soft ? "true" : "false");
    add("distill.use_distributed", c.distill.use_distributed ? "true" : "false");
    add("distill.perfect_teacher", c.perfect_teacher ? "true" : "false");
    add("distill.classical", c.classical_kd ? "true" : "false");
    add("distill.classical_lambda_sq", c.classical_lambda_sq ? "true" : "false");
    add("tfnkd.strategy", strategy_name(c.strategy));
    add("tfnkd.sweep", c.tfnkd_sweep ? "true" : "false");
    add("tfnkd.trace", c.trace_enabled ? "true" : "false");
    add("tfnkd.trace_easy", c.trace_easy);
    add("tfnkd.trace_hard", c.trace_hard);
    add("run.seeds", join_list(c.seeds));
    add("run.out_dir", c.out_dir);
    if (!c.label.empty()) add("run.label", c.label);
    add("run.parallel", c.parallel_seeds ? "true" : "false");
    add("sweep.lambdas", [&] {
        std::vector<std::string> parts;
        parts.reserve(c.sweep_lambdas.size());
        for (double l : c.sweep_lambdas) parts.push_back(format_double(l));
        return join_list(parts);
    }());
    add("verify.trials", std::to_string(c.verify_trials));
    add("verify.grad_instances", std::to_string(c.verify_grad_instances));
    add("verify.seed", std::to_string(c.verify_seed));
    add("verify.inject_kd_bug", c.verify_inject_kd_bug ? "true" : "false");
    return snap;
}

} // namespace kd
