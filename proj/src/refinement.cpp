#include "mmref/refinement.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mmref {

Tensor project_to_reference_space(const Tensor& features, const Tensor& bank) {
    require_matrix(features, "project_to_reference_space");
    require_matrix(bank, "project_to_reference_space");
    if (features.cols() != bank.cols()) {
        throw ShapeError("project_to_reference_space: features " + shape_string(features.shape()) + " vs bank " +
                         shape_string(bank.shape()));
    }
    return kernels::matmul_transposed(features, bank);
}

Tensor reference_similarity(const Tensor& projected_queries, const Tensor& projected_gallery) {
    return kernels::cosine_similarity(projected_queries, projected_gallery);
}

Tensor final_similarity(const Tensor& align, const Tensor& ref, double w) {
    if (!align.same_shape(ref)) {
        throw ShapeError("final_similarity: " + shape_string(align.shape()) + " vs " + shape_string(ref.shape()));
    }
    if (!(w >= 0.0)) throw DomainError("final_similarity: weight must be >= 0");
    Tensor out = align;
    auto o = out.values();
    auto r = ref.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += w * r[i];
    return out;
}

ReferenceScorer::ReferenceScorer(Tensor bank, Route route) : bank_(std::move(bank)), route_(route) {
    require_matrix(bank_, "ReferenceScorer");
    gram_ = kernels::matmul(kernels::transpose(bank_), bank_);
}

ReferenceScorer::Route ReferenceScorer::route_for(std::size_t nq, std::size_t ng) const {
    if (route_ != Route::Auto) return route_;
    const double m = static_cast<double>(bank_.rows());
    const double d = static_cast<double>(bank_.cols());
    const double n = static_cast<double>(nq + ng);
    const double cross = static_cast<double>(nq) * static_cast<double>(ng);
    const double projection = n * d * m + cross * m;
    const double gram = n * d * d + n * d + cross * d;
    return gram < projection ? Route::Gram : Route::Projection;
}

Tensor ReferenceScorer::similarity(const Tensor& queries, const Tensor& gallery) const {
    require_matrix(queries, "reference_similarity");
    require_matrix(gallery, "reference_similarity");
    if (queries.cols() != bank_.cols() || gallery.cols() != bank_.cols()) {
        throw ShapeError("reference_similarity: queries " + shape_string(queries.shape()) + ", gallery " +
                         shape_string(gallery.shape()) + ", bank " + shape_string(bank_.shape()));
    }
    if (route_for(queries.rows(), gallery.rows()) == Route::Projection) {
        return reference_similarity(project_to_reference_space(queries, bank_),
                                    project_to_reference_space(gallery, bank_));
    }
    // <F_i R^T, F_j R^T> = F_i G F_j^T with G = R^T R.
    const Tensor qg = kernels::matmul(queries, gram_);
    Tensor gallery_scaled = gallery;
    const Tensor gg = kernels::matmul(gallery, gram_);
    for (std::size_t j = 0; j < gallery.rows(); ++j) {
        double sq = 0.0;
        auto row = gallery.row_span(j);
        auto grow = gg.row_span(j);
        for (std::size_t c = 0; c < row.size(); ++c) sq += row[c] * grow[c];
        if (!(sq > 0.0)) throw NumericError("reference_similarity (rhs): zero-norm row " + std::to_string(j));
        const double inv = 1.0 / std::sqrt(sq);
        for (double& v : gallery_scaled.row_span(j)) v *= inv;
    }
    Tensor qs = qg;
    for (std::size_t i = 0; i < queries.rows(); ++i) {
        double sq = 0.0;
        auto row = queries.row_span(i);
        auto qrow = qg.row_span(i);
        for (std::size_t c = 0; c < row.size(); ++c) sq += row[c] * qrow[c];
        if (!(sq > 0.0)) throw NumericError("reference_similarity (lhs): zero-norm row " + std::to_string(i));
        const double inv = 1.0 / std::sqrt(sq);
        for (double& v : qs.row_span(i)) v *= inv;
    }
    Tensor s = kernels::matmul_transposed(qs, gallery_scaled);
    for (double& v : s.values()) v = std::clamp(v, -1.0, 1.0);
    return s;
}

}  // namespace mmref
