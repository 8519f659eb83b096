#include "kd/model.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace kd {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    std::array<unsigned char, 4> buf{};
    for (int i = 0; i < 4; ++i) buf[static_cast<std::size_t>(i)] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
    os.write(reinterpret_cast<const char*>(buf.data()), 4);
}

std::uint32_t read_u32(std::istream& is, const std::string& path, const char* field) {
    std::array<unsigned char, 4> buf{};
    if (!is.read(reinterpret_cast<char*>(buf.data()), 4)) {
        throw FormatError(path + ": truncated while reading " + field);
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
}

void write_f64(std::ostream& os, const double* data, std::size_t count) {
    static_assert(std::numeric_limits<double>::is_iec559, "IEEE-754 doubles required");
    for (std::size_t k = 0; k < count; ++k) {
        std::uint64_t bits;
        std::memcpy(&bits, &data[k], 8);
        std::array<unsigned char, 8> buf{};
        for (int i = 0; i < 8; ++i) buf[static_cast<std::size_t>(i)] = static_cast<unsigned char>((bits >> (8 * i)) & 0xffu);
        os.write(reinterpret_cast<const char*>(buf.data()), 8);
    }
}

void read_f64(std::istream& is, double* data, std::size_t count, const std::string& path,
              const char* field) {
    for (std::size_t k = 0; k < count; ++k) {
        std::array<unsigned char, 8> buf{};
        if (!is.read(reinterpret_cast<char*>(buf.data()), 8)) {
            throw FormatError(path + ": truncated while reading " + field);
        }
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[static_cast<std::size_t>(i)]) << (8 * i);
        std::memcpy(&data[k], &bits, 8);
    }
}

constexpr char kCheckpointMagic[8] = {'K', 'D', 'M', 'O', 'D', 'E', 'L', '1'};

} // namespace

std::vector<std::size_t> ModelSpec::layer_dims() const {
    std::vector<std::size_t> dims;
    dims.reserve(hidden_dims.size() + 2);
    dims.push_back(input_dim);
    dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
    dims.push_back(num_classes);
    return dims;
}

void ModelSpec::validate() const {
    if (num_classes < 2) {
        throw InvalidParameterError("ModelSpec: num_classes must be at least 2");
    }
    if (input_dim < 1) {
        throw InvalidParameterError("ModelSpec: input_dim must be at least 1");
    }
    for (std::size_t h : hidden_dims) {
        if (h < 1) throw InvalidParameterError("ModelSpec: hidden dims must be at least 1");
    }
}

std::string ModelSpec::describe() const {
    std::ostringstream os;
    os << input_dim;
    for (std::size_t h : hidden_dims) os << "-" << h;
    os << "-" << num_classes;
    return os.str();
}

ModelSpec ModelParams::spec() const {
    if (weights.empty()) {
        throw ContractError("ModelParams: no layers");
    }
    ModelSpec spec;
    spec.input_dim = weights.front().rows();
    for (std::size_t l = 0; l + 1 < weights.size(); ++l) {
        spec.hidden_dims.push_back(weights[l].cols());
    }
    spec.num_classes = weights.back().cols();
    return spec;
}

void ModelParams::validate_against(const ModelSpec& expected) const {
    expected.validate();
    const std::vector<std::size_t> dims = expected.layer_dims();
    if (weights.size() != dims.size() - 1 || biases.size() != weights.size()) {
        throw DimensionError("ModelParams: layer count does not match spec " + expected.describe());
    }
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (weights[l].rows() != dims[l] || weights[l].cols() != dims[l + 1] ||
            biases[l].size() != dims[l + 1]) {
            throw DimensionError("ModelParams: layer " + std::to_string(l) +
                                 " shape does not match spec " + expected.describe());
        }
    }
}

ModelParams init_params(const ModelSpec& spec, SeededRng& rng) {
    spec.validate();
    const std::vector<std::size_t> dims = spec.layer_dims();
    ModelParams params;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const std::size_t fan_in = dims[l];
        const std::size_t fan_out = dims[l + 1];
        Matrix w(fan_in, fan_out);
        const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (std::size_t k = 0; k < w.size(); ++k) {
            w.data()[k] = scale * rng.normal();
        }
        params.weights.push_back(std::move(w));
        params.biases.emplace_back(fan_out, 0.0);
    }
    return params;
}

Matrix forward(const ModelParams& params, const Matrix& inputs, ForwardCache& cache) {
    if (params.weights.empty()) {
        throw ContractError("forward: model has no layers");
    }
    if (inputs.cols() != params.weights.front().rows()) {
        throw DimensionError("forward: input dim " + std::to_string(inputs.cols()) +
                             " does not match model input " +
                             std::to_string(params.weights.front().rows()));
    }
    require_finite(inputs, "forward inputs");

    cache.activations.clear();
    cache.pre_activations.clear();
    cache.params_version = params.version;
    cache.activations.push_back(inputs);

    const std::size_t layers = params.num_layers();
    for (std::size_t l = 0; l < layers; ++l) {
        Matrix pre = matmul(cache.activations.back(), params.weights[l]);
        for (std::size_t b = 0; b < pre.rows(); ++b) {
            auto row = pre.row(b);
            for (std::size_t j = 0; j < row.size(); ++j) row[j] += params.biases[l][j];
        }
        if (l + 1 < layers) {
            Matrix act = pre;
            for (std::size_t k = 0; k < act.size(); ++k) {
                if (act.data()[k] < 0.0) act.data()[k] = 0.0;
            }
            cache.pre_activations.push_back(std::move(pre));
            cache.activations.push_back(std::move(act));
        } else {
            cache.pre_activations.push_back(pre);
            require_finite(pre, "forward logits");
            return pre;
        }
    }
    throw ContractError("forward: unreachable");
}

Matrix forward(const ModelParams& params, const Matrix& inputs) {
    ForwardCache cache;
    return forward(params, inputs, cache);
}

ParamGrads backward(const ModelParams& params, const ForwardCache& cache,
                    const Matrix& dloss_dlogits) {
    if (cache.params_version != params.version) {
        throw ContractError("backward: forward cache is stale (params were updated since)");
    }
    const std::size_t layers = params.num_layers();
    if (cache.activations.size() != layers || cache.pre_activations.size() != layers) {
        throw ContractError("backward: cache does not match model depth");
    }
    if (dloss_dlogits.rows() != cache.activations.front().rows() ||
        dloss_dlogits.cols() != params.weights.back().cols()) {
        throw DimensionError("backward: upstream gradient shape mismatch");
    }

    ParamGrads grads = zero_grads_like(params);
    Matrix delta = dloss_dlogits;
    for (std::size_t li = layers; li-- > 0;) {
        grads.weights[li] = matmul_transpose_a(cache.activations[li], delta);
        grads.biases[li] = col_sum(delta);
        if (li > 0) {
            Matrix prev = matmul_transpose_b(delta, params.weights[li]);
            const Matrix& pre = cache.pre_activations[li - 1];
            for (std::size_t k = 0; k < prev.size(); ++k) {
                if (pre.data()[k] <= 0.0) prev.data()[k] = 0.0;
            }
            delta = std::move(prev);
        }
    }
    return grads;
}

ParamGrads zero_grads_like(const ModelParams& params) {
    ParamGrads grads;
    for (std::size_t l = 0; l < params.num_layers(); ++l) {
        grads.weights.emplace_back(params.weights[l].rows(), params.weights[l].cols());
        grads.biases.emplace_back(params.biases[l].size(), 0.0);
    }
    return grads;
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw Error("cannot open checkpoint for writing: " + path);
    }
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_u32(os, static_cast<std::uint32_t>(params.num_layers()));
    for (std::size_t l = 0; l < params.num_layers(); ++l) {
        write_u32(os, static_cast<std::uint32_t>(params.weights[l].rows()));
        write_u32(os, static_cast<std::uint32_t>(params.weights[l].cols()));
        write_f64(os, params.weights[l].data().data(), params.weights[l].size());
        write_f64(os, params.biases[l].data(), params.biases[l].size());
    }
    if (!os) {
        throw Error("write failure on checkpoint: " + path);
    }
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error("cannot open checkpoint: " + path);
    }
    char magic[sizeof(kCheckpointMagic)] = {};
    if (!is.read(magic, sizeof(magic)) ||
        std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw FormatError(path + ": not a KDMODEL1 checkpoint (bad magic at offset 0)");
    }
    const std::uint32_t layers = read_u32(is, path, "layer count");
    if (layers == 0 || layers > 64) {
        throw FormatError(path + ": implausible layer count " + std::to_string(layers));
    }
    ModelParams params;
    for (std::uint32_t l = 0; l < layers; ++l) {
        const std::uint32_t fan_in = read_u32(is, path, "layer fan_in");
        const std::uint32_t fan_out = read_u32(is, path, "layer fan_out");
        if (fan_in == 0 || fan_out == 0) {
            throw FormatError(path + ": zero dimension in layer " + std::to_string(l));
        }
        Matrix w(fan_in, fan_out);
        read_f64(is, w.data().data(), w.size(), path, "layer weights");
        std::vector<double> b(fan_out);
        read_f64(is, b.data(), b.size(), path, "layer biases");
        require_finite(w, "checkpoint weights");
        params.weights.push_back(std::move(w));
        params.biases.push_back(std::move(b));
    }
    is.peek();
    if (!is.eof()) {
        throw FormatError(path + ": trailing bytes after last layer");
    }
    return params;
}

std::uint64_t file_digest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error("cannot open file for digest: " + path);
    }
    std::uint64_t hash = 14695981039346656037ull;  // FNV-1a offset basis
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        const std::streamsize got = is.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            hash ^= static_cast<unsigned char>(buf[i]);
            hash *= 1099511628211ull;
        }
        if (is.eof()) break;
    }
    return hash;
}

} // namespace kd
