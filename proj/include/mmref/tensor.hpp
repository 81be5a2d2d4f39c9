#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "mmref/error.hpp"

namespace mmref {

using Shape = std::vector<std::size_t>;

/// Dense row-major array of doubles.
///
/// Construction rejects non-finite values and a value count that does not
/// match the shape. Operators work on rank-2 tensors; a vector is a 1 x n row
/// and a scalar is 1 x 1.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape);
    static Tensor filled(Shape shape, double value);
    static Tensor scalar(double value) { return Tensor({1, 1}, {value}); }
    /// 1 x n row vector.
    static Tensor row(std::initializer_list<double> values);
    static Tensor row(std::span<const double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    /// Leading dimension of a rank-2 tensor.
    std::size_t rows() const;
    /// Trailing dimension of a rank-2 tensor.
    std::size_t cols() const;

    double operator()(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }
    double& operator()(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    std::span<const double> row_span(std::size_t r) const;
    std::span<double> row_span(std::size_t r);

    /// Single element of a 1 x 1 tensor.
    double item() const;

    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    /// Bitwise equality of shape and values.
    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<double> values_;
};

std::size_t shape_volume(const Shape& shape);

/// Throws ShapeError unless `t` is rank 2.
void require_matrix(const Tensor& t, const char* what);

/// Plain (non-differentiable) kernels shared by the graph and inference paths.
namespace kernels {

/// a (n x k) * b (k x m)
Tensor matmul(const Tensor& a, const Tensor& b);
/// a (n x k) * b^T where b is (m x k)
Tensor matmul_transposed(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Row-wise L2 normalization; rejects a zero-norm row naming its index.
Tensor l2_normalize_rows(const Tensor& a, const char* what = "l2_normalize_rows");
/// Cosine similarity between rows of a and rows of b.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

}  // namespace kernels

}  // namespace mmref
