#include "lpe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lpe/errors.hpp"

namespace lpe {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto extent : shape) n *= extent;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void check_extents(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
    for (auto extent : shape) {
        if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
    }
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    check_extents(shape_);
    data_.assign(shape_numel(shape_), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents(shape_);
    if (data_.size() != shape_numel(shape_)) {
        throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_string(shape_));
    }
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
    return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<float>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<float> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<float> values) {
    return Tensor({values.size()}, std::vector<float>(values));
}

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

std::size_t Tensor::rows() const { return shape_.empty() ? 0 : data_.size() / shape_.back(); }

std::span<const float> Tensor::row(std::size_t r) const {
    return std::span<const float>(data_).subspan(r * cols(), cols());
}

std::span<float> Tensor::mutable_row(std::size_t r) { return std::span<float>(data_).subspan(r * cols(), cols()); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    auto in_a = a.data();
    auto in_b = b.data();
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            float acc = 0.0f;
            for (std::size_t p = 0; p < k; ++p) acc += in_a[i * k + p] * in_b[p * n + j];
            dst[i * n + j] = acc;
        }
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
        throw DimensionError("linear shape mismatch: input " + shape_string(x.shape()) + " vs weight " +
                             shape_string(w.shape()));
    }
    if (bias.rank() != 1 || bias.dim(0) != w.dim(0)) {
        throw DimensionError("linear bias shape " + shape_string(bias.shape()) + " does not match weight " +
                             shape_string(w.shape()));
    }
    const std::size_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    Tensor out({n, out_dim});
    auto dst = out.mutable_data();
    auto wd = w.data();
    auto bd = bias.data();
    for (std::size_t i = 0; i < n; ++i) {
        auto xi = x.row(i);
        for (std::size_t o = 0; o < out_dim; ++o) {
            float acc = 0.0f;
            for (std::size_t p = 0; p < in; ++p) acc += xi[p] * wd[o * in + p];
            dst[i * out_dim + o] = acc + bd[o];
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose expects a matrix, got " + shape_string(a.shape()));
    Tensor out({a.dim(1), a.dim(0)});
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor softmax(const Tensor& z) {
    Tensor out(z.shape());
    const std::size_t k = z.cols();
    std::vector<double> e(k);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        auto in = z.row(r);
        auto dst = out.mutable_row(r);
        const double m = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            e[j] = std::exp(static_cast<double>(in[j]) - m);
            sum += e[j];
        }
        for (std::size_t j = 0; j < k; ++j) dst[j] = static_cast<float>(e[j] / sum);
    }
    return out;
}

namespace {

template <typename T>
double lse_impl(std::span<const T> z) {
    if (z.empty()) throw DimensionError("log_sum_exp of an empty row");
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto v : z) sum += std::exp(static_cast<double>(v) - m);
    return m + std::log(sum);
}

}  // namespace

double log_sum_exp(std::span<const float> z) { return lse_impl(z); }
double log_sum_exp(std::span<const double> z) { return lse_impl(z); }

Tensor log_sum_exp(const Tensor& z) {
    Shape lead(z.shape().begin(), z.shape().end() - 1);
    if (lead.empty()) lead = {1};
    Tensor out(lead);
    auto dst = out.mutable_data();
    for (std::size_t r = 0; r < z.rows(); ++r) dst[r] = static_cast<float>(log_sum_exp(z.row(r)));
    return out;
}

}  // namespace lpe
