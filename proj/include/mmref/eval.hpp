#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mmref/data.hpp"
#include "mmref/model.hpp"
#include "mmref/tensor.hpp"

namespace mmref {

/// Gallery indices by descending score; equal scores keep the lower index first.
std::vector<std::size_t> rank_gallery(std::span<const double> scores);

/// Percentage of queries with a relevant item (same label) in the top K.
double rank_at_k(const Tensor& similarity, std::span<const int> query_labels, std::span<const int> gallery_labels,
                 std::size_t k);

/// Mean over queries of average precision over all relevant items, in [0, 1].
double mean_average_precision(const Tensor& similarity, std::span<const int> query_labels,
                              std::span<const int> gallery_labels);

/// Per-query fraction of the top N sharing the query's class, averaged within
/// each class and then across classes, as a percentage.
double ap_at_n(const Tensor& similarity, std::span<const int> query_classes, std::span<const int> gallery_classes,
               std::size_t n);

enum class Direction { TextToImage, ImageToText };
const char* direction_name(Direction d);

struct RetrievalOptions {
    Direction direction = Direction::TextToImage;
    bool refine = false;
    double w = 0.5;
    std::size_t ap_n = 10;
};

struct RetrievalResult {
    std::vector<std::vector<std::size_t>> rankings;
    std::vector<std::vector<bool>> relevance;  ///< in ranked order
    std::map<std::string, double> metrics;     ///< R@1, R@5, R@10, mAP, AP@N
};

/// Ranks, relevance flags and every metric for a query x gallery score matrix.
RetrievalResult evaluate_similarity(const Tensor& similarity, std::span<const int> query_labels,
                                    std::span<const int> gallery_labels, std::size_t ap_n);

/// Unit-norm globals of every pair's text / image (no gradient tracking).
Tensor encode_texts(Model& model, std::span<const Pair> pairs);
Tensor encode_images(Model& model, std::span<const Pair> pairs);

/// Text queries against the image gallery of `pairs` (transposed for
/// image-to-text), optionally fused with the reference-based similarity.
RetrievalResult run_retrieval(Model& model, std::span<const Pair> pairs, const RetrievalOptions& options);

/// Scores for precomputed features; the scoring stage of run_retrieval.
Tensor retrieval_similarity(const Tensor& text_features, const Tensor& image_features, const Tensor* bank, double w);

/// exp of the mean masked-token cross-entropy, each text conditioned on its
/// own identity's reference. Texts are masked with `ratio` under `seed`.
double masked_perplexity(Model& model, std::span<const Pair> pairs, double ratio, std::uint64_t seed);

/// Fraction of masked tokens whose argmax prediction is correct.
double masked_accuracy(Model& model, std::span<const Pair> pairs, double ratio, std::uint64_t seed);

}  // namespace mmref
