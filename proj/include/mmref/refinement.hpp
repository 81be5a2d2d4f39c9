#pragma once

#include "mmref/tensor.hpp"

namespace mmref {

/// F (n x d) times R^T (m x d)^T. Rows are left unnormalized.
Tensor project_to_reference_space(const Tensor& features, const Tensor& bank);

/// Cosine similarity of projected queries against projected gallery items.
/// A zero projected row (a feature orthogonal to every reference) is rejected.
Tensor reference_similarity(const Tensor& projected_queries, const Tensor& projected_gallery);

/// S_align + w * S_ref elementwise.
Tensor final_similarity(const Tensor& align, const Tensor& ref, double w);

/// Computes S_ref for a frozen bank.
///
/// The projected inner products T R^T R I^T are evaluated either through the
/// explicit m-wide projections or through the d x d Gram matrix R^T R,
/// whichever needs fewer multiply-adds; both give the same matrix up to
/// rounding.
class ReferenceScorer {
public:
    enum class Route { Auto, Projection, Gram };

    explicit ReferenceScorer(Tensor bank, Route route = Route::Auto);

    Tensor similarity(const Tensor& queries, const Tensor& gallery) const;
    Route route_for(std::size_t n_queries, std::size_t n_gallery) const;

private:
    Tensor bank_;
    Tensor gram_;
    Route route_;
};

}  // namespace mmref
