#include "lpe/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <thread>

#include "lpe/errors.hpp"

namespace lpe {

namespace {

constexpr int kUnboundedCodes = 1 << 24;

void check_bits(int bits) {
    if (bits < kMinBits || bits > kMaxBits) {
        throw ConfigError("bit width " + std::to_string(bits) + " outside [" + std::to_string(kMinBits) + ", " +
                          std::to_string(kMaxBits) + "]");
    }
}

void check_matches(const Tensor& w, const QuantGridSet& grids) {
    check_bits(grids.bits);
    if (w.rank() != 2 || w.dim(0) != grids.channels()) {
        throw DimensionError("grids for " + std::to_string(grids.channels()) + " channels applied to tensor " +
                             shape_string(w.shape()));
    }
}

template <typename PickCode>
QuantizedTensor quantize_rows(const Tensor& w, const QuantGridSet& grids, unsigned threads, PickCode pick) {
    check_matches(w, grids);
    QuantizedTensor q{w.shape(), std::vector<std::int8_t>(w.numel()), grids};
    const std::size_t rows = w.dim(0), cols = w.dim(1);
    const int limit = grids.max_code();

    auto work = [&](std::size_t row_begin, std::size_t row_end) {
        for (std::size_t r = row_begin; r < row_end; ++r) {
            const float scale = grids.scales[r];
            for (std::size_t c = 0; c < cols; ++c) {
                const std::size_t k = r * cols + c;
                q.codes[k] = static_cast<std::int8_t>(pick(k, w.data()[k], bracket(w.data()[k], scale, limit)));
            }
        }
    };

    const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, rows);
    if (n_threads == 1) {
        work(0, rows);
        return q;
    }
    std::vector<std::jthread> pool;
    const std::size_t chunk = (rows + n_threads - 1) / n_threads;
    for (std::size_t begin = 0; begin < rows; begin += chunk) {
        pool.emplace_back(work, begin, std::min(rows, begin + chunk));
    }
    pool.clear();
    return q;
}

}  // namespace

QuantGridSet build_grids(const Tensor& w, int bits) {
    check_bits(bits);
    if (w.rank() != 2) throw DimensionError("build_grids expects a [C x D] weight, got " + shape_string(w.shape()));
    if (!w.all_finite()) throw DataError("cannot build grids over non-finite weights");
    const int limit = max_code(bits);
    QuantGridSet grids{bits, std::vector<float>(w.dim(0), 0.0f)};
    for (std::size_t c = 0; c < w.dim(0); ++c) {
        float absmax = 0.0f;
        for (float v : w.row(c)) absmax = std::max(absmax, std::fabs(v));
        if (absmax == 0.0f) continue;
        float scale = absmax / static_cast<float>(limit);
        while (grid_value(limit, scale) > absmax) scale = std::nextafter(scale, 0.0f);
        grids.scales[c] = scale;
    }
    return grids;
}

Bracket bracket(float w, float scale, int code_limit) {
    if (scale == 0.0f) return {};
    const float top = grid_value(code_limit, scale);
    w = std::clamp(w, -top, top);
    const double t = std::floor(static_cast<double>(w) / static_cast<double>(scale));
    int m = static_cast<int>(std::clamp(t, -static_cast<double>(code_limit), static_cast<double>(code_limit)));
    // The float division can be off by one code near grid points; settle on the exact floor.
    while (m > -code_limit && grid_value(m, scale) > w) --m;
    while (m < code_limit && grid_value(m + 1, scale) <= w) ++m;
    const float lo = grid_value(m, scale);
    if (lo == w) return {m, m, lo, lo};
    return {m, m + 1, lo, grid_value(m + 1, scale)};
}

std::pair<float, float> floor_ceil(float w, float scale) {
    const Bracket b = bracket(w, scale, kUnboundedCodes);
    return {b.lo, b.hi};
}

double ceil_probability(float w, const Bracket& b) {
    if (b.on_grid()) return 0.0;
    // Normalised by the actual spacing hi - lo so the two probabilities sum to one.
    return (static_cast<double>(w) - b.lo) / (static_cast<double>(b.hi) - b.lo);
}

QuantizedTensor rtn(const Tensor& w, const QuantGridSet& grids) {
    return quantize_rows(w, grids, 1, [](std::size_t, float v, const Bracket& b) {
        if (b.on_grid()) return b.lo_code;
        const double below = static_cast<double>(v) - b.lo;
        const double above = static_cast<double>(b.hi) - v;
        if (below < above) return b.lo_code;
        if (above < below) return b.hi_code;
        return v > 0.0f ? b.hi_code : b.lo_code;
    });
}

QuantizedTensor bsr_sample(const Tensor& w, const QuantGridSet& grids, const CounterRng& rng, unsigned threads) {
    return quantize_rows(w, grids, threads, [&rng](std::size_t k, float v, const Bracket& b) {
        if (b.on_grid()) return b.lo_code;
        // Out-of-range weights clamp onto the end codes, so off-grid v always lies inside (lo, hi).
        return rng.uniform(k) < ceil_probability(v, b) ? b.hi_code : b.lo_code;
    });
}

Tensor dequantize(const QuantizedTensor& q) {
    if (q.shape.size() != 2 || q.shape[0] != q.grids.channels() || q.codes.size() != shape_numel(q.shape)) {
        throw DimensionError("quantized tensor " + shape_string(q.shape) + " inconsistent with its " +
                             std::to_string(q.grids.channels()) + " channel grids and " +
                             std::to_string(q.codes.size()) + " codes");
    }
    Tensor out(q.shape);
    auto dst = out.mutable_data();
    const std::size_t cols = q.shape[1];
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = grid_value(q.codes[k], q.grids.scales[k / cols]);
    return out;
}

}  // namespace lpe
