#include "mmref/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmref/losses.hpp"
#include "mmref/refinement.hpp"
#include "mmref/rng.hpp"

namespace mmref {
namespace {

void check_labels(const Tensor& s, std::span<const int> q, std::span<const int> g, const char* what) {
    require_matrix(s, what);
    if (s.rows() != q.size() || s.cols() != g.size()) {
        throw ShapeError(std::string(what) + ": similarity " + shape_string(s.shape()) + " for " +
                         std::to_string(q.size()) + " queries and " + std::to_string(g.size()) + " gallery items");
    }
}

std::size_t relevant_count(int label, std::span<const int> gallery, std::size_t query) {
    const auto n = static_cast<std::size_t>(std::count(gallery.begin(), gallery.end(), label));
    if (n == 0) throw DomainError("query " + std::to_string(query) + " has no relevant gallery item");
    return n;
}

}  // namespace

std::vector<std::size_t> rank_gallery(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

double rank_at_k(const Tensor& s, std::span<const int> q, std::span<const int> g, std::size_t k) {
    check_labels(s, q, g, "rank_at_k");
    if (k == 0) throw DomainError("rank_at_k: K must be >= 1");
    if (q.empty()) throw DomainError("rank_at_k: no queries");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        relevant_count(q[i], g, i);
        const auto order = rank_gallery(s.row_span(i));
        const std::size_t top = std::min(k, order.size());
        for (std::size_t r = 0; r < top; ++r) {
            if (g[order[r]] == q[i]) {
                ++hits;
                break;
            }
        }
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(q.size());
}

double mean_average_precision(const Tensor& s, std::span<const int> q, std::span<const int> g) {
    check_labels(s, q, g, "mean_average_precision");
    if (q.empty()) throw DomainError("mean_average_precision: no queries");
    double total = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const std::size_t relevant = relevant_count(q[i], g, i);
        const auto order = rank_gallery(s.row_span(i));
        std::size_t found = 0;
        double ap = 0.0;
        for (std::size_t r = 0; r < order.size() && found < relevant; ++r) {
            if (g[order[r]] == q[i]) {
                ++found;
                ap += static_cast<double>(found) / static_cast<double>(r + 1);
            }
        }
        total += ap / static_cast<double>(relevant);
    }
    return total / static_cast<double>(q.size());
}

double ap_at_n(const Tensor& s, std::span<const int> q, std::span<const int> g, std::size_t n) {
    check_labels(s, q, g, "ap_at_n");
    if (n == 0) throw DomainError("ap_at_n: N must be >= 1");
    if (g.size() < n) {
        throw DomainError("ap_at_n: gallery of " + std::to_string(g.size()) + " is smaller than N=" + std::to_string(n));
    }
    if (q.empty()) throw DomainError("ap_at_n: no queries");
    std::map<int, std::pair<double, std::size_t>> per_class;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const auto order = rank_gallery(s.row_span(i));
        std::size_t match = 0;
        for (std::size_t r = 0; r < n; ++r) match += g[order[r]] == q[i] ? 1 : 0;
        auto& [sum, count] = per_class[q[i]];
        sum += static_cast<double>(match) / static_cast<double>(n);
        ++count;
    }
    double total = 0.0;
    for (const auto& [cls, acc] : per_class) total += acc.first / static_cast<double>(acc.second);
    return 100.0 * total / static_cast<double>(per_class.size());
}

const char* direction_name(Direction d) { return d == Direction::TextToImage ? "t2i" : "i2t"; }

RetrievalResult evaluate_similarity(const Tensor& s, std::span<const int> q, std::span<const int> g, std::size_t ap_n) {
    check_labels(s, q, g, "evaluate_similarity");
    RetrievalResult result;
    for (std::size_t i = 0; i < q.size(); ++i) {
        relevant_count(q[i], g, i);
        auto order = rank_gallery(s.row_span(i));
        std::vector<bool> rel(order.size());
        for (std::size_t r = 0; r < order.size(); ++r) rel[r] = g[order[r]] == q[i];
        result.rankings.push_back(std::move(order));
        result.relevance.push_back(std::move(rel));
    }
    result.metrics["R@1"] = rank_at_k(s, q, g, 1);
    result.metrics["R@5"] = rank_at_k(s, q, g, 5);
    result.metrics["R@10"] = rank_at_k(s, q, g, 10);
    result.metrics["mAP"] = mean_average_precision(s, q, g);
    result.metrics["AP@N"] = ap_at_n(s, q, g, ap_n);
    return result;
}

Tensor encode_texts(Model& model, std::span<const Pair> pairs) {
    if (pairs.empty()) throw DomainError("encode_texts: empty split");
    const std::size_t d = model.encoder.d;
    Tensor out = Tensor::zeros({pairs.size(), d});
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        Graph g;
        g.set_grad_enabled(false);
        const Tensor& f = model.text.encode(g, pairs[i].tokens).global.value();
        std::copy(f.values().begin(), f.values().end(), out.row_span(i).begin());
    }
    return out;
}

Tensor encode_images(Model& model, std::span<const Pair> pairs) {
    if (pairs.empty()) throw DomainError("encode_images: empty split");
    const std::size_t dim = pairs[0].image.size();
    std::vector<double> raw;
    raw.reserve(pairs.size() * dim);
    for (const Pair& p : pairs) {
        if (p.image.size() != dim) throw ShapeError("encode_images: ragged image features");
        raw.insert(raw.end(), p.image.begin(), p.image.end());
    }
    Graph g;
    g.set_grad_enabled(false);
    return model.image.encode(g, Tensor({pairs.size(), dim}, std::move(raw))).value();
}

Tensor retrieval_similarity(const Tensor& text_features, const Tensor& image_features, const Tensor* bank, double w) {
    Tensor s = kernels::cosine_similarity(text_features, image_features);
    if (!bank) return s;
    const ReferenceScorer scorer(*bank);
    return final_similarity(s, scorer.similarity(text_features, image_features), w);
}

RetrievalResult run_retrieval(Model& model, std::span<const Pair> pairs, const RetrievalOptions& options) {
    if (pairs.empty()) throw DomainError("run_retrieval: empty split");
    const Tensor texts = encode_texts(model, pairs);
    const Tensor images = encode_images(model, pairs);
    Tensor s = retrieval_similarity(texts, images, options.refine ? &model.bank.matrix() : nullptr, options.w);
    std::vector<int> labels;
    for (const Pair& p : pairs) labels.push_back(p.identity);
    if (options.direction == Direction::ImageToText) s = kernels::transpose(s);
    return evaluate_similarity(s, labels, labels, options.ap_n);
}

namespace {

template <typename F>
void for_each_masked(Model& model, std::span<const Pair> pairs, double ratio, std::uint64_t seed, F f) {
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        MaskedText masked = mask_tokens(pairs[i].tokens, ratio, derive_seed(seed, i));
        if (masked.positions.empty()) continue;
        Graph g;
        g.set_grad_enabled(false);
        TextEncoding enc = model.text.encode(g, masked.ids);
        const std::size_t row[] = {model.bank.row_of(pairs[i].identity)};
        Var reference = ops::select_rows(g.parameter(model.bank.parameter()), row);
        ReconstructionOutput out = model.reconstruction.forward(g, enc.tokens, reference, masked.positions);
        f(out, masked);
    }
}

}  // namespace

double masked_perplexity(Model& model, std::span<const Pair> pairs, double ratio, std::uint64_t seed) {
    double nll = 0.0;
    std::size_t count = 0;
    for_each_masked(model, pairs, ratio, seed, [&](const ReconstructionOutput& out, const MaskedText& m) {
        nll += static_cast<double>(m.targets.size()) * rec_loss_from_logits(out.logits, m.targets).value().item();
        count += m.targets.size();
    });
    if (count == 0) throw DomainError("masked_perplexity: nothing was masked");
    return std::exp(nll / static_cast<double>(count));
}

double masked_accuracy(Model& model, std::span<const Pair> pairs, double ratio, std::uint64_t seed) {
    std::size_t correct = 0, count = 0;
    for_each_masked(model, pairs, ratio, seed, [&](const ReconstructionOutput& out, const MaskedText& m) {
        const Tensor& logits = out.logits.value();
        for (std::size_t r = 0; r < m.targets.size(); ++r) {
            auto row = logits.row_span(r);
            const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
            correct += best == m.targets[r] ? 1 : 0;
            ++count;
        }
    });
    if (count == 0) throw DomainError("masked_accuracy: nothing was masked");
    return static_cast<double>(correct) / static_cast<double>(count);
}

}  // namespace mmref
