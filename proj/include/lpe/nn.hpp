#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lpe/dataset.hpp"
#include "lpe/tensor.hpp"

namespace lpe {

enum class Activation { relu, tanh };

std::string_view to_string(Activation act);
Activation parse_activation(std::string_view name);

// Layer extents [d0, d1, ..., dL]; layer i maps d_i -> d_{i+1}. quantize_mask[i] says
// whether layer i's weight matrix takes part in quantization or perturbation.
struct ModelSpec {
    std::vector<std::size_t> layer_dims;
    Activation activation = Activation::relu;
    std::vector<bool> quantize_mask;

    // All hidden layers masked, final classifier left full precision.
    static ModelSpec mlp(std::vector<std::size_t> dims, Activation act = Activation::relu);

    std::size_t num_layers() const { return layer_dims.empty() ? 0 : layer_dims.size() - 1; }
    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t num_classes() const { return layer_dims.back(); }
    std::size_t parameter_count() const;

    void validate() const;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

std::string weight_name(std::size_t layer);
std::string bias_name(std::size_t layer);

// Named tensors layer_i/W [d_{i+1} x d_i] and layer_i/b [d_{i+1}].
struct Checkpoint {
    ModelSpec spec;
    std::map<std::string, Tensor> tensors;

    static Checkpoint zeros(const ModelSpec& spec);

    const Tensor& weight(std::size_t layer) const;
    const Tensor& bias(std::size_t layer) const;
    Tensor& weight(std::size_t layer);
    Tensor& bias(std::size_t layer);

    std::size_t parameter_count() const { return spec.parameter_count(); }

    // Every layer has exactly one W and one b of the right shape, and nothing else.
    void validate() const;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Logits [N x K].
Tensor forward(const Checkpoint& ckpt, const Tensor& x);

// forward with W replaced by W * mask (elementwise) on every layer whose mask is set.
// masks.size() must equal the number of layers.
Tensor forward_masked(const Checkpoint& ckpt, const Tensor& x, const std::vector<std::optional<Tensor>>& masks);

struct TrainConfig {
    float lr = 0.1f;
    std::size_t epochs = 50;
    std::size_t batch = 32;
    std::uint64_t seed = 0;
};

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
Checkpoint init_checkpoint(const ModelSpec& spec, std::uint64_t seed);

// Minibatch SGD on mean cross-entropy. Deterministic in (data, spec, cfg).
Checkpoint train_sgd(const Dataset& data, const ModelSpec& spec, const TrainConfig& cfg);

}  // namespace lpe
