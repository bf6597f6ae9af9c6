#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "lpe/nn.hpp"
#include "lpe/quantizer.hpp"
#include "lpe/tensor.hpp"

namespace lpe {

enum class Method { lpe_bsr, rtn, gaussian, mcd };

std::string_view to_string(Method m);
// Accepts the canonical names plus "bsr" as shorthand for lpe_bsr.
Method parse_method(std::string_view name);

constexpr std::size_t kMaxEnsembleSize = 64;

// bits is set for lpe_bsr/rtn, sigma2 for gaussian, drop_p for mcd, and nothing else.
struct EnsembleSpec {
    Method method = Method::lpe_bsr;
    std::size_t size = 1;
    std::optional<int> bits;
    std::optional<double> sigma2;
    std::optional<double> drop_p;
    std::uint64_t base_seed = 0;

    static EnsembleSpec lpe_bsr(int bits, std::size_t size, std::uint64_t seed);
    static EnsembleSpec rtn(int bits);
    static EnsembleSpec gaussian(double sigma2, std::size_t size, std::uint64_t seed);
    static EnsembleSpec mcd(double drop_p, std::size_t size, std::uint64_t seed);

    void validate() const;

    friend bool operator==(const EnsembleSpec&, const EnsembleSpec&) = default;
};

// Weight-level keep mask (entries 0 or 1) for the dropout baseline.
struct DropMask {
    Tensor keep;

    friend bool operator==(const DropMask&, const DropMask&) = default;
};

// A member's replacement for one layer's weight matrix.
using MemberLayer = std::variant<QuantizedTensor, Tensor, DropMask>;

struct Member {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    std::map<std::size_t, MemberLayer> layers;  // keyed by layer index

    friend bool operator==(const Member&, const Member&) = default;
};

// S variants of one checkpoint. Tensors a member does not replace come from `base`
// and are stored (and counted) once.
struct MemberSet {
    std::optional<EnsembleSpec> spec;  // empty for a plain full-precision model
    Checkpoint base;
    std::vector<Member> members;

    // One full-precision member with every tensor shared.
    static MemberSet single(Checkpoint ckpt);

    std::size_t size() const { return members.size(); }

    // Complete checkpoint of member s (mask layers are applied as W * keep).
    Checkpoint materialize(std::size_t s) const;
    Tensor member_logits(std::size_t s, const Tensor& x) const;

    void validate() const;

    friend bool operator==(const MemberSet&, const MemberSet&) = default;
};

// Builds members from `ckpt` on the layers its quantize_mask selects. Grids for BSR are built
// once from ckpt and shared by all members. Member s uses seed derive_seed(base_seed, s).
MemberSet generate_members(const Checkpoint& ckpt, const EnsembleSpec& spec, unsigned threads = 1);

struct PredictionBatch {
    Tensor probs;                        // [N x K]
    std::optional<Tensor> member_logits;  // [S x N x K]
};

// Mean of member softmax outputs, reduced in member index order.
PredictionBatch predict_prob_ensemble(const MemberSet& ms, const Tensor& x, bool keep_logits = false);

// Softmax of the mean member logits. Used for diversity analysis only.
PredictionBatch predict_logit_mean(const MemberSet& ms, const Tensor& x, bool keep_logits = false);

// Logical bits: per member, B per quantized code plus 32 per channel scale, or 32 per
// full-precision entry; plus 32 per shared base entry, counted once.
std::uint64_t memory_budget(const MemberSet& ms);

}  // namespace lpe
