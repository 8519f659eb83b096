#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kd/error.hpp"
#include "kd/matrix.hpp"
#include "kd/rng.hpp"

namespace kd {

// Fully-connected ReLU network description. hidden_dims may be empty, which
// degenerates to a single linear layer input_dim -> num_classes.
struct ModelSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims;
    std::size_t num_classes = 0;

    // Layer widths including input and output: [input_dim, hidden..., num_classes].
    std::vector<std::size_t> layer_dims() const;
    void validate() const;
    std::string describe() const;
};

// Flat parameter store. weights[l] has shape fan_in x fan_out; biases[l] has
// fan_out entries. version increments on every optimizer update so forward
// caches can detect staleness.
struct ModelParams {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
    std::uint64_t version = 0;

    std::size_t num_layers() const { return weights.size(); }
    ModelSpec spec() const;
    void validate_against(const ModelSpec& spec) const;
};

struct ParamGrads {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
};

// Intermediate activations kept around for the backward pass. activations[0]
// is the input batch; pre_activations[l] is the linear output of layer l
// before ReLU (the last layer's entry equals the logits).
struct ForwardCache {
    std::vector<Matrix> activations;
    std::vector<Matrix> pre_activations;
    std::uint64_t params_version = 0;
};

// He-scaled normal init: weight ~ N(0, 2/fan_in), biases zero.
ModelParams init_params(const ModelSpec& spec, SeededRng& rng);

// Returns logits (B x C) and fills the cache for a subsequent backward call.
Matrix forward(const ModelParams& params, const Matrix& inputs, ForwardCache& cache);

// Logits only; no cache retained (evaluation path).
Matrix forward(const ModelParams& params, const Matrix& inputs);

// Backprop of d(loss)/d(logits) through the cached activations. Throws
// ContractError when the cache was produced by a different params version.
ParamGrads backward(const ModelParams& params, const ForwardCache& cache,
                    const Matrix& dloss_dlogits);

ParamGrads zero_grads_like(const ModelParams& params);

// Checkpoint layout (little-endian, documented in the README):
//   bytes 0-7   magic "KDMODEL1"
//   u32         layer count L
//   per layer   u32 fan_in, u32 fan_out,
//               fan_in*fan_out f64 weights (row-major), fan_out f64 biases
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

// FNV-1a 64-bit digest of a file's bytes; used to pin teacher caches to the
// exact checkpoint that produced them.
std::uint64_t file_digest(const std::string& path);

} // namespace kd
