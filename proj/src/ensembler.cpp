#include "lpe/ensembler.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <type_traits>

#include "lpe/errors.hpp"
#include "lpe/rng.hpp"

namespace lpe {

std::string_view to_string(Method m) {
    switch (m) {
        case Method::lpe_bsr: return "lpe_bsr";
        case Method::rtn: return "rtn";
        case Method::gaussian: return "gaussian";
        case Method::mcd: return "mcd";
    }
    return "unknown";
}

Method parse_method(std::string_view name) {
    if (name == "lpe_bsr" || name == "bsr") return Method::lpe_bsr;
    if (name == "rtn") return Method::rtn;
    if (name == "gaussian") return Method::gaussian;
    if (name == "mcd") return Method::mcd;
    throw ConfigError("unknown ensemble method '" + std::string(name) + "' (expected bsr, rtn, gaussian or mcd)");
}

EnsembleSpec EnsembleSpec::lpe_bsr(int bits, std::size_t size, std::uint64_t seed) {
    return {Method::lpe_bsr, size, bits, std::nullopt, std::nullopt, seed};
}

EnsembleSpec EnsembleSpec::rtn(int bits) { return {Method::rtn, 1, bits, std::nullopt, std::nullopt, 0}; }

EnsembleSpec EnsembleSpec::gaussian(double sigma2, std::size_t size, std::uint64_t seed) {
    return {Method::gaussian, size, std::nullopt, sigma2, std::nullopt, seed};
}

EnsembleSpec EnsembleSpec::mcd(double drop_p, std::size_t size, std::uint64_t seed) {
    return {Method::mcd, size, std::nullopt, std::nullopt, drop_p, seed};
}

void EnsembleSpec::validate() const {
    const std::string name(to_string(method));
    if (size < 1 || size > kMaxEnsembleSize) {
        throw ConfigError("ensemble size " + std::to_string(size) + " outside [1, " +
                          std::to_string(kMaxEnsembleSize) + "]");
    }
    const bool wants_bits = method == Method::lpe_bsr || method == Method::rtn;
    if (wants_bits != bits.has_value()) {
        throw ConfigError(wants_bits ? name + " requires a bit width" : name + " does not take a bit width");
    }
    if ((method == Method::gaussian) != sigma2.has_value()) {
        throw ConfigError(method == Method::gaussian ? "gaussian requires sigma2" : name + " does not take sigma2");
    }
    if ((method == Method::mcd) != drop_p.has_value()) {
        throw ConfigError(method == Method::mcd ? "mcd requires drop_p" : name + " does not take drop_p");
    }
    if (bits && (*bits < kMinBits || *bits > kMaxBits)) {
        throw ConfigError("bit width " + std::to_string(*bits) + " outside [" + std::to_string(kMinBits) + ", " +
                          std::to_string(kMaxBits) + "]");
    }
    if (sigma2 && !(*sigma2 > 0.0 && std::isfinite(*sigma2))) throw ConfigError("sigma2 must be positive");
    if (drop_p && !(*drop_p > 0.0 && *drop_p < 1.0)) throw ConfigError("drop_p must lie in (0, 1)");
    if (method == Method::rtn && size != 1) {
        throw ConfigError("rtn is deterministic; ensemble size must be 1, got " + std::to_string(size));
    }
}

MemberSet MemberSet::single(Checkpoint ckpt) {
    ckpt.validate();
    MemberSet ms{std::nullopt, std::move(ckpt), {}};
    ms.members.push_back(Member{0, 0, {}});
    return ms;
}

Checkpoint MemberSet::materialize(std::size_t s) const {
    Checkpoint out = base;
    for (const auto& [layer, variant] : members.at(s).layers) {
        Tensor& w = out.weight(layer);
        if (const auto* q = std::get_if<QuantizedTensor>(&variant)) {
            w = dequantize(*q);
        } else if (const auto* dense = std::get_if<Tensor>(&variant)) {
            w = *dense;
        } else {
            const auto& keep = std::get<DropMask>(variant).keep;
            auto dst = w.mutable_data();
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] *= keep.data()[k];
        }
    }
    return out;
}

Tensor MemberSet::member_logits(std::size_t s, const Tensor& x) const {
    const Member& m = members.at(s);
    const bool only_masks = !m.layers.empty() && std::all_of(m.layers.begin(), m.layers.end(), [](const auto& kv) {
        return std::holds_alternative<DropMask>(kv.second);
    });
    if (only_masks) {
        std::vector<std::optional<Tensor>> masks(base.spec.num_layers());
        for (const auto& [layer, variant] : m.layers) masks[layer] = std::get<DropMask>(variant).keep;
        return forward_masked(base, x, masks);
    }
    return forward(materialize(s), x);
}

void MemberSet::validate() const {
    base.validate();
    if (members.empty()) throw ConfigError("member set is empty");
    if (spec) {
        spec->validate();
        if (spec->size != members.size()) {
            throw ConfigError("member set declares " + std::to_string(spec->size) + " members but holds " +
                              std::to_string(members.size()));
        }
    }
    std::vector<bool> seen(members.size(), false);
    for (std::size_t s = 0; s < members.size(); ++s) {
        const std::size_t idx = members[s].index;
        if (idx >= members.size() || seen[idx]) {
            throw ConfigError("member indices must be a permutation of 0.." + std::to_string(members.size() - 1));
        }
        seen[idx] = true;
        for (const auto& [layer, variant] : members[s].layers) {
            if (layer >= base.spec.num_layers()) {
                throw DimensionError("member " + std::to_string(s) + " replaces nonexistent layer " +
                                     std::to_string(layer));
            }
            const Shape& expected = base.weight(layer).shape();
            const Shape& got = std::visit(
                [](const auto& v) -> const Shape& {
                    using T = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<T, QuantizedTensor>) return v.shape;
                    else if constexpr (std::is_same_v<T, Tensor>) return v.shape();
                    else return v.keep.shape();
                },
                variant);
            if (got != expected) {
                throw DimensionError("member " + std::to_string(s) + " layer " + std::to_string(layer) + " has shape " +
                                     shape_string(got) + ", expected " + shape_string(expected));
            }
        }
    }
}

MemberSet generate_members(const Checkpoint& ckpt, const EnsembleSpec& spec, unsigned threads) {
    spec.validate();
    ckpt.validate();
    const ModelSpec& model = ckpt.spec;

    std::map<std::size_t, QuantGridSet> grids;
    if (spec.bits) {
        for (std::size_t i = 0; i < model.num_layers(); ++i) {
            if (model.quantize_mask[i]) grids.emplace(i, build_grids(ckpt.weight(i), *spec.bits));
        }
    }

    MemberSet ms{spec, ckpt, {}};
    ms.members.reserve(spec.size);
    for (std::size_t s = 0; s < spec.size; ++s) {
        Member member{s, spec.method == Method::rtn ? 0 : derive_seed(spec.base_seed, s), {}};
        for (std::size_t i = 0; i < model.num_layers(); ++i) {
            if (!model.quantize_mask[i]) continue;
            const Tensor& w = ckpt.weight(i);
            const CounterRng rng(member.seed, static_cast<std::uint32_t>(i));
            switch (spec.method) {
                case Method::rtn:
                    member.layers.emplace(i, rtn(w, grids.at(i)));
                    break;
                case Method::lpe_bsr:
                    member.layers.emplace(i, bsr_sample(w, grids.at(i), rng, threads));
                    break;
                case Method::gaussian: {
                    const double sigma = std::sqrt(*spec.sigma2);
                    Tensor noisy = w;
                    auto dst = noisy.mutable_data();
                    for (std::size_t k = 0; k < dst.size(); ++k) {
                        dst[k] = static_cast<float>(dst[k] + sigma * rng.normal(k));
                    }
                    member.layers.emplace(i, std::move(noisy));
                    break;
                }
                case Method::mcd: {
                    Tensor keep(w.shape());
                    auto dst = keep.mutable_data();
                    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = rng.uniform(k) < *spec.drop_p ? 0.0f : 1.0f;
                    member.layers.emplace(i, DropMask{std::move(keep)});
                    break;
                }
            }
        }
        ms.members.push_back(std::move(member));
    }
    return ms;
}

namespace {

// Member logits stacked by member index, whatever the storage order.
Tensor stack_logits(const MemberSet& ms, const Tensor& x) {
    const std::size_t n = x.rows(), k = ms.base.spec.num_classes();
    std::vector<std::size_t> order(ms.size());
    for (std::size_t pos = 0; pos < ms.size(); ++pos) order[pos] = pos;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return ms.members[a].index < ms.members[b].index; });
    Tensor all({ms.size(), n, k});
    for (std::size_t s = 0; s < ms.size(); ++s) {
        const Tensor z = ms.member_logits(order[s], x);
        std::copy(z.data().begin(), z.data().end(), all.mutable_data().begin() + static_cast<std::ptrdiff_t>(s * n * k));
    }
    return all;
}

void check_nonempty(const MemberSet& ms) {
    if (ms.members.empty()) throw ConfigError("cannot predict with an empty member set");
}

}  // namespace

PredictionBatch predict_prob_ensemble(const MemberSet& ms, const Tensor& x, bool keep_logits) {
    check_nonempty(ms);
    Tensor logits = stack_logits(ms, x);
    const std::size_t s_count = ms.size(), n = x.rows(), k = ms.base.spec.num_classes();
    std::vector<double> acc(n * k, 0.0);
    for (std::size_t s = 0; s < s_count; ++s) {
        const Tensor member({n, k}, std::vector<float>(logits.data().begin() + static_cast<std::ptrdiff_t>(s * n * k),
                                                       logits.data().begin() + static_cast<std::ptrdiff_t>((s + 1) * n * k)));
        const Tensor p = softmax(member);
        for (std::size_t j = 0; j < n * k; ++j) acc[j] += p.data()[j];
    }
    Tensor probs({n, k});
    for (std::size_t j = 0; j < n * k; ++j) probs.mutable_data()[j] = static_cast<float>(acc[j] / static_cast<double>(s_count));
    PredictionBatch out{std::move(probs), std::nullopt};
    if (keep_logits) out.member_logits = std::move(logits);
    return out;
}

PredictionBatch predict_logit_mean(const MemberSet& ms, const Tensor& x, bool keep_logits) {
    check_nonempty(ms);
    Tensor logits = stack_logits(ms, x);
    const std::size_t s_count = ms.size(), n = x.rows(), k = ms.base.spec.num_classes();
    std::vector<double> acc(n * k, 0.0);
    for (std::size_t s = 0; s < s_count; ++s) {
        for (std::size_t j = 0; j < n * k; ++j) acc[j] += logits.data()[s * n * k + j];
    }
    Tensor mean({n, k});
    for (std::size_t j = 0; j < n * k; ++j) mean.mutable_data()[j] = static_cast<float>(acc[j] / static_cast<double>(s_count));
    PredictionBatch out{softmax(mean), std::nullopt};
    if (keep_logits) out.member_logits = std::move(logits);
    return out;
}

std::uint64_t memory_budget(const MemberSet& ms) {
    constexpr std::uint64_t kFloatBits = 32;
    std::vector<bool> replaced(ms.base.spec.num_layers(), false);
    std::uint64_t bits = 0;
    for (const auto& member : ms.members) {
        for (const auto& [layer, variant] : member.layers) {
            replaced[layer] = true;
            if (const auto* q = std::get_if<QuantizedTensor>(&variant)) {
                bits += q->codes.size() * static_cast<std::uint64_t>(q->grids.bits) + q->grids.channels() * kFloatBits;
            } else if (const auto* dense = std::get_if<Tensor>(&variant)) {
                bits += dense->numel() * kFloatBits;
            } else {
                bits += std::get<DropMask>(variant).keep.numel() * kFloatBits;
            }
        }
    }
    for (std::size_t i = 0; i < ms.base.spec.num_layers(); ++i) {
        if (!replaced[i]) bits += ms.base.weight(i).numel() * kFloatBits;
        bits += ms.base.bias(i).numel() * kFloatBits;
    }
    return bits;
}

}  // namespace lpe
