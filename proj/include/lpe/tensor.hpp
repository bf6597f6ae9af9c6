#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace lpe {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major float32 array. Extents are strictly positive, and the data
// length always equals the product of the extents.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);  // zero-filled
    Tensor(Shape shape, std::vector<float> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor identity(std::size_t n);
    // 2-D literal, e.g. Tensor::matrix({{1, 2}, {3, 4}}).
    static Tensor matrix(std::initializer_list<std::initializer_list<float>> rows);
    static Tensor vector(std::initializer_list<float> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<const float> data() const { return data_; }
    std::span<float> mutable_data() { return data_; }
    const std::vector<float>& values() const { return data_; }

    // Trailing-axis view: rows() = numel / last extent.
    std::size_t rows() const;
    std::size_t cols() const;
    std::span<const float> row(std::size_t r) const;
    std::span<float> mutable_row(std::size_t r);

    float at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    float& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

    bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<float> data_;
};

// a[M x K] * b[K x N]. Each dot product is accumulated left to right in float.
Tensor matmul(const Tensor& a, const Tensor& b);

// x[N x in] * w[out x in]^T + bias[out], same fixed accumulation order as matmul.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor transpose(const Tensor& a);

// Row-wise over the trailing axis, max-shifted.
Tensor softmax(const Tensor& z);

// Reduces the trailing axis; result has the leading extents (or shape {1} for a vector).
Tensor log_sum_exp(const Tensor& z);

double log_sum_exp(std::span<const float> z);
double log_sum_exp(std::span<const double> z);

}  // namespace lpe
