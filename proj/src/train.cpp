#include "kd/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "kd/softmax.hpp"

namespace kd {

namespace {

// Fixed sub-stream tags so init, batching, and mixup draws never interleave.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kEpochStreamBase = 1000;
constexpr std::uint64_t kMixupStreamBase = 500000;

constexpr char kCacheMagic[8] = {'K', 'D', 'C', 'A', 'C', 'H', 'E', '1'};

void write_u32le(std::ostream& os, std::uint32_t v) {
    std::array<unsigned char, 4> buf{};
    for (int i = 0; i < 4; ++i) buf[static_cast<std::size_t>(i)] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
    os.write(reinterpret_cast<const char*>(buf.data()), 4);
}

void write_u64le(std::ostream& os, std::uint64_t v) {
    std::array<unsigned char, 8> buf{};
    for (int i = 0; i < 8; ++i) buf[static_cast<std::size_t>(i)] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
    os.write(reinterpret_cast<const char*>(buf.data()), 8);
}

std::uint32_t read_u32le(std::istream& is, const std::string& path, const char* field) {
    std::array<unsigned char, 4> buf{};
    if (!is.read(reinterpret_cast<char*>(buf.data()), 4)) {
        throw FormatError(path + ": truncated while reading " + field);
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
}

std::uint64_t read_u64le(std::istream& is, const std::string& path, const char* field) {
    std::array<unsigned char, 8> buf{};
    if (!is.read(reinterpret_cast<char*>(buf.data()), 8)) {
        throw FormatError(path + ": truncated while reading " + field);
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
}

void write_f64le(std::ostream& os, const double* data, std::size_t count) {
    static_assert(std::numeric_limits<double>::is_iec559, "IEEE-754 doubles required");
    for (std::size_t k = 0; k < count; ++k) {
        std::uint64_t bits;
        std::memcpy(&bits, &data[k], 8);
        write_u64le(os, bits);
    }
}

void read_f64le(std::istream& is, double* data, std::size_t count, const std::string& path,
                const char* field) {
    for (std::size_t k = 0; k < count; ++k) {
        const std::uint64_t bits = read_u64le(is, path, field);
        std::memcpy(&data[k], &bits, 8);
    }
}

// Johnk's algorithm; adequate for the small shape parameters mixup uses and
// built on our own generator so runs stay reproducible.
double beta_sample(SeededRng& rng, double a, double b) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const double u = rng.uniform();
        const double v = rng.uniform();
        if (u <= 0.0 || v <= 0.0) continue;
        const double x = std::pow(u, 1.0 / a);
        const double y = std::pow(v, 1.0 / b);
        if (x + y <= 1.0 && x + y > 0.0) return x / (x + y);
    }
    return 0.5;  // pathological shape parameters; fall back to an even mix
}

Batch rotate_by_one(const Batch& batch) {
    const std::size_t n = batch.size();
    Matrix inputs(n, batch.inputs.cols());
    Matrix labels(n, batch.labels.classes());
    std::vector<std::uint64_t> ids(n);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t src = (r + 1) % n;
        const auto in = batch.inputs.row(src);
        std::copy(in.begin(), in.end(), inputs.row(r).begin());
        const auto lab = batch.labels.values().row(src);
        std::copy(lab.begin(), lab.end(), labels.row(r).begin());
        ids[r] = batch.sample_ids[src];
    }
    return Batch{std::move(inputs), LabelBatch(std::move(labels)), std::move(ids)};
}

std::string preview_ids(const std::vector<std::uint64_t>& ids, std::size_t limit = 8) {
    std::ostringstream os;
    for (std::size_t i = 0; i < ids.size() && i < limit; ++i) {
        if (i > 0) os << ", ";
        os << ids[i];
    }
    if (ids.size() > limit) os << ", ... (" << ids.size() - limit << " more)";
    return os.str();
}

// Rank of the target under (value desc, index asc); hit iff rank < k.
bool in_top_k(std::span<const double> logits, std::size_t target, std::size_t k) {
    std::size_t rank = 0;
    const double t_val = logits[target];
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (logits[i] > t_val || (logits[i] == t_val && i < target)) ++rank;
    }
    return rank < k;
}

struct BatchLoss {
    LossOutput out;
    double ce = 0.0;
    double soft = 0.0;
    double distributed = 0.0;
    double kd = 0.0;
    double weighted = 0.0;
};

BatchLoss compute_batch_loss(const Matrix& logits, const Batch& batch,
                             const LossSelector& selector) {
    BatchLoss result;
    switch (selector.kind) {
        case LossKind::Ce: {
            result.out = ce_loss(logits, batch.labels);
            result.ce = result.out.loss;
            break;
        }
        case LossKind::LabelSmoothCe: {
            result.out = label_smooth_ce(logits, batch.labels, selector.alpha_ls);
            result.ce = result.out.loss;
            break;
        }
        case LossKind::Nkd: {
            const Matrix teacher = selector.cache->gather(batch.sample_ids);
            NkdBreakdown nkd = nkd_loss(logits, teacher, batch.labels, selector.distill,
                                        selector.perfect_teacher);
            result.ce = nkd.ce_term;
            result.soft = nkd.soft_term;
            result.distributed = nkd.distributed_term;
            result.out = std::move(nkd.total);
            break;
        }
        case LossKind::ClassicalKd: {
            const Matrix teacher = selector.cache->gather(batch.sample_ids);
            result.out = ce_loss(logits, batch.labels);
            result.ce = result.out.loss;
            const LossOutput kd = kd_classical(logits, teacher, selector.distill.lambda,
                                               selector.scale_lambda_sq);
            result.kd = kd.loss;
            result.out.loss += kd.loss;
            for (std::size_t i = 0; i < result.out.grad.size(); ++i) {
                result.out.grad.data()[i] += kd.grad.data()[i];
            }
            result.out.clamp_events += kd.clamp_events;
            break;
        }
        case LossKind::Tfnkd: {
            TfnkdOutput tf = tfnkd_loss(logits, batch.labels, selector.strategy);
            result.ce = tf.ce_term;
            result.weighted = tf.weighted_term;
            result.out = std::move(tf.out);
            break;
        }
    }
    return result;
}

} // namespace

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw InvalidParameterError("TrainConfig: lr must be positive");
    if (!(momentum >= 0.0) || momentum >= 1.0) {
        throw InvalidParameterError("TrainConfig: momentum must lie in [0,1)");
    }
    if (batch_size < 1) throw InvalidParameterError("TrainConfig: batch_size must be at least 1");
    if (!(gamma > 0.0)) throw InvalidParameterError("TrainConfig: gamma must be positive");
    if (!(weight_decay >= 0.0)) {
        throw InvalidParameterError("TrainConfig: weight_decay must be nonnegative");
    }
    if (topk < 1) throw InvalidParameterError("TrainConfig: topk must be at least 1");
    if (mixup_enabled) {
        if (mixup_lam < 0.0 || mixup_lam > 1.0) {
            throw InvalidParameterError("TrainConfig: mixup_lam must lie in [0,1]");
        }
        if (!(mixup_alpha > 0.0)) {
            throw InvalidParameterError("TrainConfig: mixup_alpha must be positive");
        }
    }
}

double lr_at(const TrainConfig& config, std::size_t epoch) {
    switch (config.schedule) {
        case LrSchedule::Constant:
            return config.lr;
        case LrSchedule::Step: {
            double lr = config.lr;
            for (std::size_t m : config.milestones) {
                if (epoch >= m) lr *= config.gamma;
            }
            return lr;
        }
        case LrSchedule::Cosine: {
            if (config.epochs == 0) return config.lr;
            const double t = static_cast<double>(epoch) / static_cast<double>(config.epochs);
            return config.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
        }
    }
    throw ContractError("lr_at: unknown schedule");
}

SgdState make_sgd_state(const ModelParams& params) {
    SgdState state;
    for (std::size_t l = 0; l < params.num_layers(); ++l) {
        state.velocity_w.emplace_back(params.weights[l].rows(), params.weights[l].cols());
        state.velocity_b.emplace_back(params.biases[l].size(), 0.0);
    }
    return state;
}

void sgd_step(ModelParams& params, const ParamGrads& grads, SgdState& state,
              double lr, double momentum, double weight_decay) {
    if (grads.weights.size() != params.num_layers() ||
        state.velocity_w.size() != params.num_layers()) {
        throw DimensionError("sgd_step: layer count mismatch");
    }
    for (std::size_t l = 0; l < params.num_layers(); ++l) {
        if (!is_finite(grads.weights[l])) {
            throw NumericError("sgd_step: non-finite weight gradient in layer " +
                               std::to_string(l));
        }
        for (double g : grads.biases[l]) {
            if (!std::isfinite(g)) {
                throw NumericError("sgd_step: non-finite bias gradient in layer " +
                                   std::to_string(l));
            }
        }
        auto& w = params.weights[l].data();
        auto& vw = state.velocity_w[l].data();
        const auto& gw = grads.weights[l].data();
        for (std::size_t k = 0; k < w.size(); ++k) {
            vw[k] = momentum * vw[k] + gw[k] + weight_decay * w[k];
            w[k] -= lr * vw[k];
        }
        auto& b = params.biases[l];
        auto& vb = state.velocity_b[l];
        const auto& gb = grads.biases[l];
        for (std::size_t k = 0; k < b.size(); ++k) {
            vb[k] = momentum * vb[k] + gb[k];  // biases are not weight-decayed
            b[k] -= lr * vb[k];
        }
    }
    ++params.version;
}

const std::vector<double>& TeacherCache::row(std::uint64_t sample_id) const {
    auto it = logits.find(sample_id);
    if (it == logits.end()) {
        throw ContractError("teacher cache: no entry for sample_id " +
                            std::to_string(sample_id));
    }
    return it->second;
}

void TeacherCache::ensure_covers(const Dataset& dataset) const {
    std::vector<std::uint64_t> missing;
    for (std::uint64_t id : dataset.sample_ids) {
        if (logits.find(id) == logits.end()) missing.push_back(id);
    }
    if (!missing.empty()) {
        throw ContractError("teacher cache incomplete: missing " +
                            std::to_string(missing.size()) + " sample_ids (" +
                            preview_ids(missing) + ")");
    }
    if (classes == 0 || classes != dataset.classes()) {
        throw ContractError("teacher cache class count " + std::to_string(classes) +
                            " does not match dataset classes " +
                            std::to_string(dataset.classes()));
    }
}

Matrix TeacherCache::gather(const std::vector<std::uint64_t>& sample_ids) const {
    Matrix out(sample_ids.size(), classes);
    for (std::size_t b = 0; b < sample_ids.size(); ++b) {
        const std::vector<double>& src = row(sample_ids[b]);
        if (src.size() != classes) {
            throw ContractError("teacher cache: inconsistent row width");
        }
        std::copy(src.begin(), src.end(), out.row(b).begin());
    }
    return out;
}

TeacherCache build_teacher_cache(const ModelParams& teacher, const Dataset& dataset,
                                 std::uint64_t checkpoint_digest) {
    dataset.validate();
    TeacherCache cache;
    cache.checkpoint_digest = checkpoint_digest;
    cache.classes = teacher.weights.back().cols();
    if (cache.classes != dataset.classes()) {
        throw DimensionError("build_teacher_cache: teacher output width " +
                             std::to_string(cache.classes) + " does not match dataset classes " +
                             std::to_string(dataset.classes()));
    }
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < dataset.size(); start += chunk) {
        const std::size_t stop = std::min(start + chunk, dataset.size());
        Matrix inputs(stop - start, dataset.dim());
        for (std::size_t r = 0; r < stop - start; ++r) {
            const auto in = dataset.inputs.row(start + r);
            std::copy(in.begin(), in.end(), inputs.row(r).begin());
        }
        const Matrix logits = forward(teacher, inputs);
        for (std::size_t r = 0; r < stop - start; ++r) {
            const auto row = logits.row(r);
            cache.logits.emplace(dataset.sample_ids[start + r],
                                 std::vector<double>(row.begin(), row.end()));
        }
    }
    return cache;
}

void save_teacher_cache(const TeacherCache& cache, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open teacher cache for writing: " + path);
    os.write(kCacheMagic, sizeof(kCacheMagic));
    write_u64le(os, cache.checkpoint_digest);
    write_u32le(os, static_cast<std::uint32_t>(cache.logits.size()));
    write_u32le(os, static_cast<std::uint32_t>(cache.classes));
    // Serialize in ascending id order so identical caches produce identical bytes.
    std::vector<std::uint64_t> ids;
    ids.reserve(cache.logits.size());
    for (const auto& [id, row] : cache.logits) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    for (std::uint64_t id : ids) {
        write_u64le(os, id);
        const std::vector<double>& row = cache.logits.at(id);
        if (row.size() != cache.classes) {
            throw ContractError("save_teacher_cache: inconsistent row width");
        }
        write_f64le(os, row.data(), row.size());
    }
    if (!os) throw Error("write failure on teacher cache: " + path);
}

TeacherCache load_teacher_cache(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open teacher cache: " + path);
    char magic[sizeof(kCacheMagic)] = {};
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCacheMagic, sizeof(magic)) != 0) {
        throw FormatError(path + ": not a KDCACHE1 teacher cache (bad magic at offset 0)");
    }
    TeacherCache cache;
    cache.checkpoint_digest = read_u64le(is, path, "checkpoint digest");
    const std::uint32_t n = read_u32le(is, path, "entry count");
    cache.classes = read_u32le(is, path, "class count");
    if (n == 0 || cache.classes == 0) {
        throw FormatError(path + ": empty teacher cache");
    }
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint64_t id = read_u64le(is, path, "sample id");
        std::vector<double> row(cache.classes);
        read_f64le(is, row.data(), row.size(), path, "cached logits");
        if (!cache.logits.emplace(id, std::move(row)).second) {
            throw FormatError(path + ": duplicate sample_id " + std::to_string(id));
        }
    }
    is.peek();
    if (!is.eof()) throw FormatError(path + ": trailing bytes after last entry");
    return cache;
}

double mean_target_prob(const TeacherCache& cache, const Dataset& dataset) {
    cache.ensure_covers(dataset);
    double acc = 0.0;
    for (std::size_t b = 0; b < dataset.size(); ++b) {
        const std::vector<double>& row = cache.row(dataset.sample_ids[b]);
        Matrix logits(1, row.size(), row);
        const Matrix probs = softmax_temp(logits, 1.0);
        acc += probs(0, dataset.labels.target(b));
    }
    return acc / static_cast<double>(dataset.size());
}

EvalResult evaluate(const ModelParams& params, const Dataset& dataset, std::size_t topk) {
    dataset.validate();
    const std::size_t k = std::min(topk, dataset.classes());
    EvalResult result;
    std::size_t hit1 = 0;
    std::size_t hitk = 0;
    double loss_acc = 0.0;
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < dataset.size(); start += chunk) {
        const std::size_t stop = std::min(start + chunk, dataset.size());
        const std::size_t rows = stop - start;
        Matrix inputs(rows, dataset.dim());
        Matrix labels(rows, dataset.classes());
        for (std::size_t r = 0; r < rows; ++r) {
            const auto in = dataset.inputs.row(start + r);
            std::copy(in.begin(), in.end(), inputs.row(r).begin());
            const auto lab = dataset.labels.values().row(start + r);
            std::copy(lab.begin(), lab.end(), labels.row(r).begin());
        }
        const Matrix logits = forward(params, inputs);
        const LabelBatch label_batch{std::move(labels)};
        const LossOutput ce = ce_loss(logits, label_batch);
        loss_acc += ce.loss * static_cast<double>(rows);
        const std::vector<std::size_t> pred = row_argmax(logits);
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t target = dataset.labels.target(start + r);
            if (pred[r] == target) ++hit1;
            if (in_top_k(logits.row(r), target, k)) ++hitk;
        }
    }
    result.top1 = static_cast<double>(hit1) / static_cast<double>(dataset.size());
    result.topk = static_cast<double>(hitk) / static_cast<double>(dataset.size());
    result.mean_ce_loss = loss_acc / static_cast<double>(dataset.size());
    return result;
}

TrainResult train(const ModelSpec& student_spec, const Dataset& train_set,
                  const Dataset& test_set, const LossSelector& selector,
                  const TrainConfig& config, const std::vector<std::uint64_t>& tracked_ids) {
    student_spec.validate();
    config.validate();
    train_set.validate();
    test_set.validate();
    if (student_spec.input_dim != train_set.dim() ||
        student_spec.num_classes != train_set.classes()) {
        throw DimensionError("train: model spec does not match training data");
    }
    if (selector.needs_teacher()) {
        if (selector.cache == nullptr) {
            throw ContractError("train: distillation loss requires a teacher cache");
        }
        selector.cache->ensure_covers(train_set);
        if (config.mixup_enabled) {
            throw InvalidParameterError(
                "train: mixup is not supported with teacher-cache losses "
                "(cached logits would not match mixed inputs)");
        }
    }
    if (selector.kind == LossKind::Tfnkd && selector.strategy == WeightStrategy::TeacherTarget) {
        throw InvalidParameterError("train: TeacherTarget is not a teacher-free strategy");
    }
    if (selector.kind == LossKind::LabelSmoothCe && config.mixup_enabled) {
        throw InvalidParameterError("train: mixup labels are not one-hot; "
                                    "label smoothing cannot be applied");
    }

    std::unordered_set<std::uint64_t> tracked(tracked_ids.begin(), tracked_ids.end());
    if (!tracked.empty()) {
        std::unordered_set<std::uint64_t> known(train_set.sample_ids.begin(),
                                                train_set.sample_ids.end());
        for (std::uint64_t id : tracked_ids) {
            if (known.find(id) == known.end()) {
                throw InvalidInputError("train: tracked sample_id " + std::to_string(id) +
                                        " is not in the training set");
            }
        }
    }
    const bool trace_enabled = !tracked.empty() && selector.kind == LossKind::Tfnkd;

    TrainResult result;
    SeededRng init_rng(derive_seed(config.seed, kInitStream));
    result.params = init_params(student_spec, init_rng);
    SgdState state = make_sgd_state(result.params);

    const auto record_eval = [&](std::size_t epoch, double train_loss_override,
                                 long train_clamps, bool use_override) {
        // Divergence can first surface here when the last update of an epoch
        // blew the params up; classify it like an in-loop failure.
        EvalResult tr, te;
        try {
            tr = evaluate(result.params, train_set, config.topk);
            te = evaluate(result.params, test_set, config.topk);
        } catch (const InvalidInputError& e) {
            throw NumericError("train: " + std::string(e.what()) +
                               " while evaluating after epoch " + std::to_string(epoch));
        }
        result.metrics.push_back(MetricsRecord{
            epoch, "train", tr.top1, tr.topk,
            use_override ? train_loss_override : tr.mean_ce_loss, train_clamps});
        result.metrics.push_back(MetricsRecord{epoch, "test", te.top1, te.topk,
                                               te.mean_ce_loss, 0});
    };

    record_eval(0, 0.0, 0, false);

    const std::size_t n = train_set.size();
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(config, epoch);
        std::vector<Batch> batches =
            epoch_batches(train_set, config.batch_size, derive_seed(config.seed, kEpochStreamBase + epoch));
        SeededRng mixup_rng(derive_seed(config.seed, kMixupStreamBase + epoch));

        EpochTerms terms;
        terms.epoch = epoch + 1;
        long epoch_clamps = 0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            Batch* batch = &batches[bi];
            Batch mixed;
            if (config.mixup_enabled && batch->size() > 1) {
                const double lam = config.mixup_lam > 0.0
                                       ? config.mixup_lam
                                       : beta_sample(mixup_rng, config.mixup_alpha,
                                                     config.mixup_alpha);
                mixed = mixup(*batch, rotate_by_one(*batch), lam);
                batch = &mixed;
            }
            ForwardCache cache;
            Matrix logits;
            BatchLoss bl;
            // Inside the update loop, non-finite activations mean the run has
            // diverged; reclassify them as numeric failures with the batch
            // attached for post-mortem.
            try {
                logits = forward(result.params, batch->inputs, cache);
                bl = compute_batch_loss(logits, *batch, selector);
            } catch (const InvalidInputError& e) {
                throw NumericError("train: " + std::string(e.what()) + " at epoch " +
                                   std::to_string(epoch + 1) + " batch " + std::to_string(bi) +
                                   " (sample_ids: " + preview_ids(batch->sample_ids) + ")");
            }
            if (!std::isfinite(bl.out.loss)) {
                throw NumericError("train: non-finite loss " + std::to_string(bl.out.loss) +
                                   " at epoch " + std::to_string(epoch + 1) + " batch " +
                                   std::to_string(bi) + " (sample_ids: " +
                                   preview_ids(batch->sample_ids) + ")");
            }

            if (trace_enabled) {
                bool has_tracked = false;
                for (std::uint64_t id : batch->sample_ids) {
                    if (tracked.count(id) > 0) { has_tracked = true; break; }
                }
                if (has_tracked) {
                    const std::vector<double> st =
                        gather_target(softmax_temp(logits, 1.0), batch->labels.targets());
                    const double mean_st = vec_mean(st);
                    std::array<std::vector<double>, kSmoothingStrategies.size()> w_all;
                    for (std::size_t s = 0; s < kSmoothingStrategies.size(); ++s) {
                        w_all[s] = smooth_weight(st, batch->labels, kSmoothingStrategies[s]);
                    }
                    for (std::size_t r = 0; r < batch->size(); ++r) {
                        if (tracked.count(batch->sample_ids[r]) == 0) continue;
                        WeightTracePoint point;
                        point.epoch = epoch + 1;
                        point.sample_id = batch->sample_ids[r];
                        point.s_t = st[r];
                        point.v_t = batch->labels.target_value(r);
                        point.batch_mean_st = mean_st;
                        for (std::size_t s = 0; s < kSmoothingStrategies.size(); ++s) {
                            point.w[s] = w_all[s][r];
                        }
                        result.trace.points.push_back(point);
                    }
                }
            }

            const ParamGrads grads = backward(result.params, cache, bl.out.grad);
            sgd_step(result.params, grads, state, lr, config.momentum, config.weight_decay);

            const double w = static_cast<double>(batch->size());
            terms.ce += bl.ce * w;
            terms.soft += bl.soft * w;
            terms.distributed += bl.distributed * w;
            terms.kd += bl.kd * w;
            terms.weighted += bl.weighted * w;
            terms.total += bl.out.loss * w;
            epoch_clamps += bl.out.clamp_events;
            result.total_clamp_events += bl.out.clamp_events;
            result.total_degenerate_rows += bl.out.degenerate_rows;
        }

        terms.ce /= static_cast<double>(n);
        terms.soft /= static_cast<double>(n);
        terms.distributed /= static_cast<double>(n);
        terms.kd /= static_cast<double>(n);
        terms.weighted /= static_cast<double>(n);
        terms.total /= static_cast<double>(n);
        result.terms.push_back(terms);

        record_eval(epoch + 1, terms.total, epoch_clamps, true);
    }
    return result;
}

} // namespace kd
