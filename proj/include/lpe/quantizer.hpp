#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "lpe/rng.hpp"
#include "lpe/tensor.hpp"

namespace lpe {

constexpr int kMinBits = 2;
constexpr int kMaxBits = 8;

// Largest code magnitude of a symmetric INT-B grid: 2^(B-1) - 1.
constexpr int max_code(int bits) { return (1 << (bits - 1)) - 1; }

// One symmetric uniform grid per output channel (row of W). Channel c represents
// {m * scales[c] : |m| <= max_code(bits)}; an all-zero channel has scale 0.
struct QuantGridSet {
    int bits = 0;
    std::vector<float> scales;

    std::size_t channels() const { return scales.size(); }
    int max_code() const { return lpe::max_code(bits); }

    friend bool operator==(const QuantGridSet&, const QuantGridSet&) = default;
};

// Integer codes (one byte each regardless of B) plus the grids they index.
struct QuantizedTensor {
    Shape shape;
    std::vector<std::int8_t> codes;
    QuantGridSet grids;

    friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

// The value of `code` on a grid with resolution `scale`. All grid arithmetic goes
// through here so that quantize and dequantize agree bit for bit.
inline float grid_value(int code, float scale) { return static_cast<float>(code) * scale; }

// Per-row absmax / (2^(B-1) - 1). The float scale is nudged down by at most a few ulps
// when needed so that max_code * scale never exceeds the channel absmax.
QuantGridSet build_grids(const Tensor& w, int bits);

// Neighbouring grid points of w: lo <= w <= hi, equal iff w is on the grid.
struct Bracket {
    int lo_code = 0;
    int hi_code = 0;
    float lo = 0.0f;
    float hi = 0.0f;

    bool on_grid() const { return lo_code == hi_code; }
};

// Brackets w on the grid with resolution `scale` and codes in [-code_limit, code_limit].
// w is clamped to the representable range first. scale == 0 gives the degenerate {0, 0}.
Bracket bracket(float w, float scale, int code_limit);

// Floor and ceiling of w on an unbounded grid of resolution `scale`.
std::pair<float, float> floor_ceil(float w, float scale);

// Probability of choosing the ceiling under Bernoulli stochastic rounding: (w - lo) / (hi - lo).
double ceil_probability(float w, const Bracket& b);

// Round to nearest, halfway ties away from zero.
QuantizedTensor rtn(const Tensor& w, const QuantGridSet& grids);

// Bernoulli stochastic rounding; entry k of w draws from position k of `rng`, so the
// result does not depend on `threads`.
QuantizedTensor bsr_sample(const Tensor& w, const QuantGridSet& grids, const CounterRng& rng, unsigned threads = 1);

Tensor dequantize(const QuantizedTensor& q);

}  // namespace lpe
