#include "lpe/nn.hpp"

#include <algorithm>
#include <cmath>

#include "lpe/errors.hpp"
#include "lpe/rng.hpp"

namespace lpe {

void Dataset::validate() const {
    if (labels.empty()) throw DataError("dataset is empty");
    if (features.rank() != 2 || features.rows() != labels.size()) {
        throw DataError("dataset has " + std::to_string(labels.size()) + " labels but features of shape " +
                        shape_string(features.shape()));
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
            throw DataError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                            " outside [0, " + std::to_string(num_classes) + ")");
        }
    }
}

std::string_view to_string(Activation act) { return act == Activation::relu ? "relu" : "tanh"; }

Activation parse_activation(std::string_view name) {
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation '" + std::string(name) + "' (expected relu or tanh)");
}

ModelSpec ModelSpec::mlp(std::vector<std::size_t> dims, Activation act) {
    ModelSpec spec{std::move(dims), act, {}};
    if (spec.layer_dims.size() >= 2) {
        spec.quantize_mask.assign(spec.num_layers(), true);
        spec.quantize_mask.back() = false;
    }
    spec.validate();
    return spec;
}

std::size_t ModelSpec::parameter_count() const {
    std::size_t d = 0;
    for (std::size_t i = 0; i < num_layers(); ++i) d += layer_dims[i + 1] * (layer_dims[i] + 1);
    return d;
}

void ModelSpec::validate() const {
    if (layer_dims.size() < 2) throw ConfigError("model needs at least one linear layer (two extents)");
    for (auto d : layer_dims) {
        if (d == 0) throw ConfigError("layer extents must be >= 1");
    }
    if (quantize_mask.size() != num_layers()) {
        throw ConfigError("quantize_mask has " + std::to_string(quantize_mask.size()) + " entries for " +
                          std::to_string(num_layers()) + " layers");
    }
}

std::string weight_name(std::size_t layer) { return "layer_" + std::to_string(layer) + "/W"; }
std::string bias_name(std::size_t layer) { return "layer_" + std::to_string(layer) + "/b"; }

Checkpoint Checkpoint::zeros(const ModelSpec& spec) {
    spec.validate();
    Checkpoint ckpt{spec, {}};
    for (std::size_t i = 0; i < spec.num_layers(); ++i) {
        ckpt.tensors.emplace(weight_name(i), Tensor({spec.layer_dims[i + 1], spec.layer_dims[i]}));
        ckpt.tensors.emplace(bias_name(i), Tensor({spec.layer_dims[i + 1]}));
    }
    return ckpt;
}

namespace {

const Tensor& lookup(const std::map<std::string, Tensor>& tensors, const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("checkpoint has no tensor '" + name + "'");
    return it->second;
}

}  // namespace

const Tensor& Checkpoint::weight(std::size_t layer) const { return lookup(tensors, weight_name(layer)); }
const Tensor& Checkpoint::bias(std::size_t layer) const { return lookup(tensors, bias_name(layer)); }
Tensor& Checkpoint::weight(std::size_t layer) { return const_cast<Tensor&>(lookup(tensors, weight_name(layer))); }
Tensor& Checkpoint::bias(std::size_t layer) { return const_cast<Tensor&>(lookup(tensors, bias_name(layer))); }

void Checkpoint::validate() const {
    spec.validate();
    if (tensors.size() != 2 * spec.num_layers()) {
        throw FormatError("checkpoint has " + std::to_string(tensors.size()) + " tensors, expected " +
                          std::to_string(2 * spec.num_layers()));
    }
    for (std::size_t i = 0; i < spec.num_layers(); ++i) {
        const Shape w_shape{spec.layer_dims[i + 1], spec.layer_dims[i]};
        const Shape b_shape{spec.layer_dims[i + 1]};
        if (weight(i).shape() != w_shape) {
            throw FormatError(weight_name(i) + " has shape " + shape_string(weight(i).shape()) + ", expected " +
                              shape_string(w_shape));
        }
        if (bias(i).shape() != b_shape) {
            throw FormatError(bias_name(i) + " has shape " + shape_string(bias(i).shape()) + ", expected " +
                              shape_string(b_shape));
        }
    }
}

namespace {

void activate(Tensor& t, Activation act) {
    for (auto& v : t.mutable_data()) v = act == Activation::relu ? std::max(v, 0.0f) : std::tanh(v);
}

Tensor apply_mask(const Tensor& w, const Tensor& mask) {
    if (mask.shape() != w.shape()) {
        throw DimensionError("mask shape " + shape_string(mask.shape()) + " does not match weight " +
                             shape_string(w.shape()));
    }
    Tensor out = w;
    auto dst = out.mutable_data();
    auto m = mask.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (m[i] != 0.0f && m[i] != 1.0f) throw DimensionError("mask entries must be 0 or 1");
        dst[i] *= m[i];
    }
    return out;
}

Tensor run(const Checkpoint& ckpt, const Tensor& x, const std::vector<std::optional<Tensor>>* masks) {
    const auto& spec = ckpt.spec;
    if (x.rank() != 2 || x.cols() != spec.input_dim()) {
        throw DimensionError("input shape " + shape_string(x.shape()) + " does not match model input width " +
                             std::to_string(spec.input_dim()));
    }
    if (masks && masks->size() != spec.num_layers()) {
        throw DimensionError("got " + std::to_string(masks->size()) + " masks for " +
                             std::to_string(spec.num_layers()) + " layers");
    }
    Tensor h = x;
    for (std::size_t i = 0; i < spec.num_layers(); ++i) {
        if (masks && (*masks)[i]) {
            h = linear(h, apply_mask(ckpt.weight(i), *(*masks)[i]), ckpt.bias(i));
        } else {
            h = linear(h, ckpt.weight(i), ckpt.bias(i));
        }
        if (i + 1 < spec.num_layers()) activate(h, spec.activation);
    }
    return h;
}

}  // namespace

Tensor forward(const Checkpoint& ckpt, const Tensor& x) { return run(ckpt, x, nullptr); }

Tensor forward_masked(const Checkpoint& ckpt, const Tensor& x, const std::vector<std::optional<Tensor>>& masks) {
    return run(ckpt, x, &masks);
}

Checkpoint init_checkpoint(const ModelSpec& spec, std::uint64_t seed) {
    Checkpoint ckpt = Checkpoint::zeros(spec);
    for (std::size_t i = 0; i < spec.num_layers(); ++i) {
        const CounterRng rng(seed, static_cast<std::uint32_t>(i));
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.layer_dims[i]));
        auto w = ckpt.weight(i).mutable_data();
        auto b = ckpt.bias(i).mutable_data();
        for (std::size_t j = 0; j < w.size(); ++j) w[j] = static_cast<float>((2.0 * rng.uniform(j) - 1.0) * bound);
        for (std::size_t j = 0; j < b.size(); ++j) {
            b[j] = static_cast<float>((2.0 * rng.uniform(w.size() + j) - 1.0) * bound);
        }
    }
    return ckpt;
}

namespace {

constexpr std::uint32_t kShuffleStream = 0x5348554Bu;

Tensor gather_rows(const Tensor& src, std::span<const std::size_t> idx) {
    Tensor out({idx.size(), src.cols()});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        auto s = src.row(idx[r]);
        std::copy(s.begin(), s.end(), out.mutable_row(r).begin());
    }
    return out;
}

// One SGD step on the rows `idx`. Returns the batch mean cross-entropy before the update.
double sgd_step(Checkpoint& ckpt, const Dataset& data, std::span<const std::size_t> idx, float lr) {
    const auto& spec = ckpt.spec;
    const std::size_t layers = spec.num_layers();
    const std::size_t n = idx.size();

    std::vector<Tensor> acts;  // acts[i] = input of layer i
    acts.reserve(layers + 1);
    acts.push_back(gather_rows(data.features, idx));
    for (std::size_t i = 0; i < layers; ++i) {
        Tensor h = linear(acts.back(), ckpt.weight(i), ckpt.bias(i));
        if (i + 1 < layers) activate(h, spec.activation);
        acts.push_back(std::move(h));
    }

    Tensor delta = softmax(acts.back());
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const auto y = static_cast<std::size_t>(data.labels[idx[r]]);
        loss -= std::log(std::max(static_cast<double>(delta.at(r, y)), 1e-12));
        delta.at(r, y) -= 1.0f;
    }
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss)) return loss;
    const float inv_n = 1.0f / static_cast<float>(n);
    for (auto& v : delta.mutable_data()) v *= inv_n;

    for (std::size_t li = layers; li-- > 0;) {
        const Tensor& in = acts[li];
        Tensor& w = ckpt.weight(li);
        Tensor& b = ckpt.bias(li);
        const std::size_t out_dim = w.dim(0), in_dim = w.dim(1);

        Tensor grad_in;
        if (li > 0) {
            grad_in = Tensor({n, in_dim});
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t p = 0; p < in_dim; ++p) {
                    float acc = 0.0f;
                    for (std::size_t o = 0; o < out_dim; ++o) acc += delta.at(r, o) * w.at(o, p);
                    const float a = in.at(r, p);
                    const float deriv = spec.activation == Activation::relu ? (a > 0.0f ? 1.0f : 0.0f) : 1.0f - a * a;
                    grad_in.at(r, p) = acc * deriv;
                }
            }
        }
        for (std::size_t o = 0; o < out_dim; ++o) {
            float gb = 0.0f;
            for (std::size_t r = 0; r < n; ++r) gb += delta.at(r, o);
            b.mutable_data()[o] -= lr * gb;
            for (std::size_t p = 0; p < in_dim; ++p) {
                float gw = 0.0f;
                for (std::size_t r = 0; r < n; ++r) gw += delta.at(r, o) * in.at(r, p);
                w.at(o, p) -= lr * gw;
            }
        }
        if (li > 0) delta = std::move(grad_in);
    }
    return loss;
}

}  // namespace

Checkpoint train_sgd(const Dataset& data, const ModelSpec& spec, const TrainConfig& cfg) {
    data.validate();
    spec.validate();
    if (data.dim() != spec.input_dim()) {
        throw DimensionError("dataset width " + std::to_string(data.dim()) + " does not match model input width " +
                             std::to_string(spec.input_dim()));
    }
    if (data.num_classes > spec.num_classes()) {
        throw DataError("dataset has " + std::to_string(data.num_classes) + " classes but the model outputs " +
                        std::to_string(spec.num_classes()));
    }
    if (cfg.batch == 0) throw ConfigError("batch size must be >= 1");
    if (!(cfg.lr > 0.0f)) throw ConfigError("learning rate must be positive");

    Checkpoint ckpt = init_checkpoint(spec, cfg.seed);
    const std::size_t n = data.size();
    std::vector<std::size_t> order(n);
    const CounterRng shuffle_rng(cfg.seed, kShuffleStream);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        // Fisher-Yates driven by the counter stream, so the permutation is portable.
        for (std::size_t i = n - 1; i > 0; --i) {
            const auto j = static_cast<std::size_t>(shuffle_rng.uniform(epoch * n + i) * static_cast<double>(i + 1));
            std::swap(order[i], order[std::min(j, i)]);
        }
        for (std::size_t start = 0; start < n; start += cfg.batch) {
            const std::size_t len = std::min(cfg.batch, n - start);
            const double loss = sgd_step(ckpt, data, std::span<const std::size_t>(order).subspan(start, len), cfg.lr);
            if (!std::isfinite(loss)) {
                throw TrainingDivergedError("training diverged at epoch " + std::to_string(epoch) +
                                            " (non-finite loss); try a lower learning rate");
            }
        }
    }
    for (const auto& [name, t] : ckpt.tensors) {
        if (!t.all_finite()) {
            throw TrainingDivergedError("non-finite weights in " + name + " after training; try a lower learning rate");
        }
    }
    return ckpt;
}

}  // namespace lpe
