#include "kd/dataset.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace kd {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803u;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801u;

std::uint32_t read_be_u32(std::istream& is, const std::string& path, std::size_t offset,
                          const char* field) {
    std::array<unsigned char, 4> buf{};
    if (!is.read(reinterpret_cast<char*>(buf.data()), 4)) {
        throw FormatError(path + ": truncated " + field + " at offset " + std::to_string(offset));
    }
    return (static_cast<std::uint32_t>(buf[0]) << 24) | (static_cast<std::uint32_t>(buf[1]) << 16) |
           (static_cast<std::uint32_t>(buf[2]) << 8) | static_cast<std::uint32_t>(buf[3]);
}

Matrix one_hot_rows(const std::vector<std::size_t>& classes_per_row, std::size_t num_classes) {
    Matrix labels(classes_per_row.size(), num_classes);
    for (std::size_t b = 0; b < classes_per_row.size(); ++b) {
        labels(b, classes_per_row[b]) = 1.0;
    }
    return labels;
}

bool leading_field_numeric(const std::string& line) {
    std::size_t i = 0;
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    if (i < line.size() && (line[i] == '+' || line[i] == '-')) ++i;
    return i < line.size() && (std::isdigit(static_cast<unsigned char>(line[i])) || line[i] == '.');
}

} // namespace

void Dataset::validate() const {
    if (size() == 0) {
        throw InvalidInputError("Dataset: empty");
    }
    if (labels.rows() != size() || sample_ids.size() != size()) {
        throw DimensionError("Dataset: inputs, labels, and sample_ids disagree on row count");
    }
    std::unordered_set<std::uint64_t> seen(sample_ids.begin(), sample_ids.end());
    if (seen.size() != sample_ids.size()) {
        throw InvalidInputError("Dataset: sample_ids are not unique");
    }
    require_finite(inputs, "Dataset inputs");
}

void BlobSpec::validate() const {
    if (num_classes < 2) throw InvalidParameterError("BlobSpec: need at least 2 classes");
    if (dim < 1) throw InvalidParameterError("BlobSpec: dim must be at least 1");
    if (samples_per_class < 1) throw InvalidParameterError("BlobSpec: samples_per_class must be at least 1");
    if (!(noise_sigma > 0.0)) throw InvalidParameterError("BlobSpec: noise_sigma must be positive");
    if (!(center_scale > 0.0)) throw InvalidParameterError("BlobSpec: center_scale must be positive");
}

namespace {

Dataset sample_blob_points(const Matrix& centers, const BlobSpec& spec,
                           std::size_t per_class, SeededRng& rng, std::uint64_t id_base) {
    const std::size_t n = spec.num_classes * per_class;
    Matrix inputs(n, spec.dim);
    std::vector<std::size_t> row_class(n);
    std::vector<std::uint64_t> ids(n);
    std::size_t row = 0;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t s = 0; s < per_class; ++s, ++row) {
            auto out = inputs.row(row);
            const auto center = centers.row(c);
            for (std::size_t d = 0; d < spec.dim; ++d) {
                out[d] = center[d] + spec.noise_sigma * rng.normal();
            }
            row_class[row] = c;
            ids[row] = id_base + row;
        }
    }
    Dataset dataset{std::move(inputs),
                    LabelBatch(one_hot_rows(row_class, spec.num_classes)),
                    std::move(ids)};
    dataset.validate();
    return dataset;
}

} // namespace

BlobSplit generate_blob_split(const BlobSpec& spec, std::size_t test_per_class) {
    spec.validate();
    SeededRng center_rng(derive_seed(spec.seed, 0xC0));
    Matrix centers(spec.num_classes, spec.dim);
    for (std::size_t k = 0; k < centers.size(); ++k) {
        centers.data()[k] = spec.center_scale * center_rng.normal();
    }

    BlobSplit split;
    SeededRng train_rng(derive_seed(spec.seed, 0xC1));
    split.train = sample_blob_points(centers, spec, spec.samples_per_class, train_rng, 0);
    if (test_per_class > 0) {
        SeededRng test_rng(derive_seed(spec.seed, 0xC2));
        split.test = sample_blob_points(centers, spec, test_per_class, test_rng,
                                        split.train.size());
    }
    return split;
}

Dataset generate_blobs(const BlobSpec& spec) {
    return generate_blob_split(spec, 0).train;
}

Dataset read_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw Error("cannot open IDX images file: " + images_path);
    const std::uint32_t img_magic = read_be_u32(imgs, images_path, 0, "magic");
    if (img_magic != kIdxImagesMagic) {
        std::ostringstream os;
        os << images_path << ": bad magic 0x" << std::hex << img_magic << " at offset 0";
        throw FormatError(os.str());
    }
    const std::uint32_t count = read_be_u32(imgs, images_path, 4, "image count");
    const std::uint32_t rows = read_be_u32(imgs, images_path, 8, "row count");
    const std::uint32_t cols = read_be_u32(imgs, images_path, 12, "column count");
    if (count == 0 || rows == 0 || cols == 0) {
        throw FormatError(images_path + ": zero dimension in header");
    }
    const std::size_t pixel_count = static_cast<std::size_t>(count) * rows * cols;
    std::vector<unsigned char> pixels(pixel_count);
    if (!imgs.read(reinterpret_cast<char*>(pixels.data()),
                   static_cast<std::streamsize>(pixel_count))) {
        const std::size_t offset = 16 + static_cast<std::size_t>(imgs.gcount());
        throw FormatError(images_path + ": truncated pixel data at offset " +
                          std::to_string(offset));
    }

    std::ifstream lbls(labels_path, std::ios::binary);
    if (!lbls) throw Error("cannot open IDX labels file: " + labels_path);
    const std::uint32_t lbl_magic = read_be_u32(lbls, labels_path, 0, "magic");
    if (lbl_magic != kIdxLabelsMagic) {
        std::ostringstream os;
        os << labels_path << ": bad magic 0x" << std::hex << lbl_magic << " at offset 0";
        throw FormatError(os.str());
    }
    const std::uint32_t lbl_count = read_be_u32(lbls, labels_path, 4, "label count");
    if (lbl_count != count) {
        throw FormatError(labels_path + ": label count " + std::to_string(lbl_count) +
                          " does not match image count " + std::to_string(count));
    }
    std::vector<unsigned char> raw_labels(lbl_count);
    if (!lbls.read(reinterpret_cast<char*>(raw_labels.data()),
                   static_cast<std::streamsize>(lbl_count))) {
        const std::size_t offset = 8 + static_cast<std::size_t>(lbls.gcount());
        throw FormatError(labels_path + ": truncated label data at offset " +
                          std::to_string(offset));
    }

    Matrix inputs(count, static_cast<std::size_t>(rows) * cols);
    for (std::size_t k = 0; k < pixel_count; ++k) {
        inputs.data()[k] = static_cast<double>(pixels[k]) / 255.0;
    }
    std::vector<std::size_t> classes(count);
    std::size_t max_label = 0;
    for (std::size_t b = 0; b < count; ++b) {
        classes[b] = raw_labels[b];
        max_label = std::max(max_label, classes[b]);
    }
    const std::size_t num_classes = std::max<std::size_t>(max_label + 1, 2);

    std::vector<std::uint64_t> ids(count);
    std::iota(ids.begin(), ids.end(), 0);
    Dataset dataset{std::move(inputs), LabelBatch(one_hot_rows(classes, num_classes)),
                    std::move(ids)};
    dataset.validate();
    return dataset;
}

Dataset read_csv(const std::string& path, std::size_t num_classes) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open CSV file: " + path);

    std::vector<std::vector<double>> feature_rows;
    std::vector<std::size_t> classes;
    std::string line;
    std::size_t line_no = 0;
    std::size_t expected_features = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && !leading_field_numeric(line)) continue;  // header row

        std::istringstream row(line);
        std::string field;
        std::vector<double> values;
        while (std::getline(row, field, ',')) {
            try {
                std::size_t used = 0;
                const double v = std::stod(field, &used);
                while (used < field.size() &&
                       std::isspace(static_cast<unsigned char>(field[used]))) {
                    ++used;
                }
                if (used != field.size()) throw std::invalid_argument(field);
                values.push_back(v);
            } catch (const std::exception&) {
                throw FormatError(path + ":" + std::to_string(line_no) +
                                  ": field '" + field + "' is not numeric");
            }
        }
        if (values.size() < 2) {
            throw FormatError(path + ":" + std::to_string(line_no) +
                              ": need a label and at least one feature");
        }
        const double label = values.front();
        if (label < 0.0 || label != std::floor(label)) {
            throw FormatError(path + ":" + std::to_string(line_no) +
                              ": label must be a nonnegative integer");
        }
        if (num_classes > 0 && label >= static_cast<double>(num_classes)) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": label " +
                              std::to_string(static_cast<long long>(label)) +
                              " out of range for " + std::to_string(num_classes) + " classes");
        }
        if (expected_features == 0) {
            expected_features = values.size() - 1;
        } else if (values.size() - 1 != expected_features) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(expected_features) + " features, got " +
                              std::to_string(values.size() - 1));
        }
        classes.push_back(static_cast<std::size_t>(label));
        feature_rows.emplace_back(values.begin() + 1, values.end());
    }
    if (feature_rows.empty()) {
        throw FormatError(path + ": no data rows");
    }

    if (num_classes == 0) {
        const std::size_t max_label = *std::max_element(classes.begin(), classes.end());
        num_classes = std::max<std::size_t>(max_label + 1, 2);
    }
    Matrix inputs(feature_rows.size(), expected_features);
    for (std::size_t b = 0; b < feature_rows.size(); ++b) {
        auto out = inputs.row(b);
        for (std::size_t d = 0; d < expected_features; ++d) out[d] = feature_rows[b][d];
    }
    std::vector<std::uint64_t> ids(feature_rows.size());
    std::iota(ids.begin(), ids.end(), 0);
    Dataset dataset{std::move(inputs), LabelBatch(one_hot_rows(classes, num_classes)),
                    std::move(ids)};
    dataset.validate();
    return dataset;
}

std::vector<Batch> epoch_batches(const Dataset& dataset, std::size_t batch_size,
                                 std::uint64_t epoch_seed) {
    if (batch_size < 1) {
        throw InvalidParameterError("epoch_batches: batch_size must be at least 1");
    }
    const std::size_t n = dataset.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    SeededRng rng(epoch_seed);
    rng.shuffle(order);

    std::vector<Batch> batches;
    batches.reserve((n + batch_size - 1) / batch_size);
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t stop = std::min(start + batch_size, n);
        const std::size_t rows = stop - start;
        Matrix inputs(rows, dataset.dim());
        Matrix labels(rows, dataset.classes());
        std::vector<std::uint64_t> ids(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t src = order[start + r];
            const auto in = dataset.inputs.row(src);
            std::copy(in.begin(), in.end(), inputs.row(r).begin());
            const auto lab = dataset.labels.values().row(src);
            std::copy(lab.begin(), lab.end(), labels.row(r).begin());
            ids[r] = dataset.sample_ids[src];
        }
        batches.push_back(Batch{std::move(inputs), LabelBatch(std::move(labels)),
                                std::move(ids)});
    }
    return batches;
}

Batch mixup(const Batch& a, const Batch& b, double lam) {
    if (!(lam >= 0.0) || lam > 1.0) {
        throw InvalidParameterError("mixup: lam must lie in [0,1]");
    }
    if (!a.inputs.same_shape(b.inputs) || !a.labels.values().same_shape(b.labels.values())) {
        throw DimensionError("mixup: batch shapes differ");
    }
    Matrix inputs(a.inputs.rows(), a.inputs.cols());
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        inputs.data()[k] = lam * a.inputs.data()[k] + (1.0 - lam) * b.inputs.data()[k];
    }
    Matrix labels(a.labels.rows(), a.labels.classes());
    for (std::size_t k = 0; k < labels.size(); ++k) {
        labels.data()[k] =
            lam * a.labels.values().data()[k] + (1.0 - lam) * b.labels.values().data()[k];
    }
    return Batch{std::move(inputs), LabelBatch(std::move(labels)), a.sample_ids};
}

} // namespace kd
