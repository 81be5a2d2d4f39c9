#include "mmref/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mmref {

std::size_t shape_volume(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_volume(shape_) != values_.size()) {
        throw ShapeError("Tensor: shape " + shape_string(shape_) + " does not match " +
                         std::to_string(values_.size()) + " values");
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i])) {
            throw NumericError("Tensor: non-finite value at flat index " + std::to_string(i));
        }
    }
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
    const auto n = shape_volume(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::row(std::initializer_list<double> values) {
    return Tensor({1, values.size()}, std::vector<double>(values));
}

Tensor Tensor::row(std::span<const double> values) {
    return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("Tensor::matrix: ragged rows");
        v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(v));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

std::size_t Tensor::rows() const {
    require_matrix(*this, "rows");
    return shape_[0];
}

std::size_t Tensor::cols() const {
    require_matrix(*this, "cols");
    return shape_[1];
}

std::span<const double> Tensor::row_span(std::size_t r) const {
    return std::span<const double>(values_).subspan(r * shape_[1], shape_[1]);
}

std::span<double> Tensor::row_span(std::size_t r) {
    return std::span<double>(values_).subspan(r * shape_[1], shape_[1]);
}

double Tensor::item() const {
    if (values_.size() != 1) throw ShapeError("item: tensor " + shape_string(shape_) + " is not a scalar");
    return values_[0];
}

bool Tensor::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(what) + ": expected a rank-2 tensor, got " + shape_string(t.shape()));
    }
}

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
    }
    Tensor out = Tensor::zeros({n, m});
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    double* po = out.values().data();
    for (std::size_t i = 0; i < n; ++i) {
        double* orow = po + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double s = pa[i * k + p];
            const double* brow = pb + p * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += s * brow[j];
        }
    }
    return out;
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_transposed");
    require_matrix(b, "matmul_transposed");
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    if (b.cols() != k) {
        throw ShapeError("matmul_transposed: " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()) + "^T");
    }
    Tensor out = Tensor::zeros({n, m});
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    double* po = out.values().data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = pa + i * k;
        for (std::size_t j = 0; j < m; ++j) {
            const double* brow = pb + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            po[i * m + j] = s;
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    const std::size_t n = a.rows(), m = a.cols();
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out(j, i) = a(i, j);
    return out;
}

Tensor l2_normalize_rows(const Tensor& a, const char* what) {
    require_matrix(a, what);
    Tensor out = a;
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto row = out.row_span(r);
        double sq = 0.0;
        for (double v : row) sq += v * v;
        if (sq == 0.0) throw NumericError(std::string(what) + ": zero-norm row " + std::to_string(r));
        const double inv = 1.0 / std::sqrt(sq);
        for (double& v : row) v *= inv;
    }
    return out;
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    require_matrix(a, "cosine_similarity");
    require_matrix(b, "cosine_similarity");
    if (a.cols() != b.cols()) {
        throw ShapeError("cosine_similarity: feature width " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
    Tensor s = matmul_transposed(l2_normalize_rows(a, "cosine_similarity (lhs)"),
                                 l2_normalize_rows(b, "cosine_similarity (rhs)"));
    for (double& v : s.values()) v = std::clamp(v, -1.0, 1.0);
    return s;
}

}  // namespace kernels

}  // namespace mmref
