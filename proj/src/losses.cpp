#include "mmref/losses.hpp"

#include <algorithm>
#include <cmath>

#include "mmref/reference.hpp"

namespace mmref {
namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

void check_similarity(double s) {
    if (!(s >= -1.0 - 1e-9 && s <= 1.0 + 1e-9)) {
        throw DomainError("contrastive_loss: similarity " + std::to_string(s) + " outside [-1, 1]");
    }
}

// Bank rows scored against the representations, and the labels of those rows.
struct ReferenceRows {
    Var rows;
    std::vector<int> labels;
};

ReferenceRows gather_references(ReferenceBank& bank, Graph& g, std::span<const int> labels, NegativeScope scope) {
    if (scope == NegativeScope::Batch) {
        auto ids = distinct_in_order(labels);
        return ReferenceRows{bank.batch_rows(g, labels), std::move(ids)};
    }
    for (int label : labels) bank.row_of(label);
    return ReferenceRows{g.parameter(bank.parameter()), bank.identities()};
}

}  // namespace

void LossConfig::validate() const {
    if (!(tau_pos > 0.0) || !(tau_neg > 0.0)) throw DomainError("loss config: temperatures must be > 0");
    if (!(beta < alpha)) throw DomainError("loss config: need beta < alpha");
    if (lambda_fuse < 0.0 || lambda_rec < 0.0 || lambda_guide < 0.0) throw DomainError("loss config: negative weight");
    if (refine_weight < 0.0) throw DomainError("loss config: negative refinement weight");
}

PairPartition partition_by_label(std::span<const int> row_labels, std::span<const int> col_labels) {
    PairPartition p;
    for (std::size_t i = 0; i < row_labels.size(); ++i) {
        for (std::size_t j = 0; j < col_labels.size(); ++j) {
            (row_labels[i] == col_labels[j] ? p.positives : p.negatives).emplace_back(i, j);
        }
    }
    return p;
}

double contrastive_loss(std::span<const double> positives, std::span<const double> negatives, const LossConfig& cfg) {
    if (positives.empty() && negatives.empty()) throw DomainError("contrastive_loss: no pairs");
    double total = 0.0;
    for (double s : positives) {
        check_similarity(s);
        total += softplus(-cfg.tau_pos * (s - cfg.alpha));
    }
    for (double s : negatives) {
        check_similarity(s);
        total += softplus(cfg.tau_neg * (s - cfg.beta));
    }
    return total;
}

Var contrastive_loss(Var similarity, const PairPartition& partition, const LossConfig& cfg) {
    if (partition.positives.empty() && partition.negatives.empty()) throw DomainError("contrastive_loss: no pairs");
    for (double s : similarity.value().values()) check_similarity(s);
    std::vector<Var> terms;
    if (!partition.positives.empty()) {
        Var s = ops::select_elements(similarity, partition.positives);
        terms.push_back(ops::sum(ops::softplus(ops::scale(ops::shift(s, -cfg.alpha), -cfg.tau_pos))));
    }
    if (!partition.negatives.empty()) {
        Var s = ops::select_elements(similarity, partition.negatives);
        terms.push_back(ops::sum(ops::softplus(ops::scale(ops::shift(s, -cfg.beta), cfg.tau_neg))));
    }
    return terms.size() == 1 ? terms[0] : ops::add(terms[0], terms[1]);
}

Var align_loss(Var text_globals, Var image_globals, std::span<const int> labels, const LossConfig& cfg) {
    const std::size_t n = text_globals.rows();
    if (n == 0) throw DomainError("align_loss: empty batch");
    if (image_globals.rows() != n || labels.size() != n) {
        throw ShapeError("align_loss: " + std::to_string(n) + " texts, " + std::to_string(image_globals.rows()) +
                         " images, " + std::to_string(labels.size()) + " labels");
    }
    Var s = ops::cosine_similarity(text_globals, image_globals);
    return ops::scale(contrastive_loss(s, partition_by_label(labels, labels), cfg), 2.0 / static_cast<double>(n));
}

Var fuse_loss(ReferenceBank& bank, Var reps, std::span<const int> labels, const LossConfig& cfg) {
    if (reps.rows() != labels.size() || labels.empty()) {
        throw ShapeError("fuse_loss: " + std::to_string(reps.rows()) + " representations, " +
                         std::to_string(labels.size()) + " labels");
    }
    Graph& g = *reps.graph;
    ReferenceRows refs = gather_references(bank, g, labels, cfg.negatives);
    Var s = ops::cosine_similarity(refs.rows, ops::stop_gradient(reps));
    return ops::scale(contrastive_loss(s, partition_by_label(refs.labels, labels), cfg),
                      1.0 / static_cast<double>(labels.size()));
}

Var guide_loss(ReferenceBank& bank, Var reps, std::span<const int> labels, const LossConfig& cfg) {
    if (reps.rows() != labels.size() || labels.empty()) {
        throw ShapeError("guide_loss: " + std::to_string(reps.rows()) + " representations, " +
                         std::to_string(labels.size()) + " labels");
    }
    Graph& g = *reps.graph;
    ReferenceRows refs = gather_references(bank, g, labels, cfg.negatives);
    Var s = ops::cosine_similarity(reps, ops::stop_gradient(refs.rows));
    return ops::scale(contrastive_loss(s, partition_by_label(labels, refs.labels), cfg),
                      1.0 / static_cast<double>(labels.size()));
}

namespace {

void check_distribution_rows(const Tensor& p, std::span<const int> targets) {
    require_matrix(p, "rec_loss");
    if (p.rows() != targets.size()) {
        throw ShapeError("rec_loss: " + std::to_string(p.rows()) + " rows for " + std::to_string(targets.size()) +
                         " targets");
    }
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double total = 0.0;
        for (double v : p.row_span(r)) {
            if (v < 0.0) throw DomainError("rec_loss: negative probability in row " + std::to_string(r));
            total += v;
        }
        if (std::abs(total - 1.0) > 1e-9) throw DomainError("rec_loss: row " + std::to_string(r) + " does not sum to 1");
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= p.cols()) {
            throw DomainError("rec_loss: target " + std::to_string(targets[r]) + " outside vocabulary");
        }
    }
}

}  // namespace

double rec_loss(const Tensor& probabilities, std::span<const int> targets) {
    if (targets.empty()) return 0.0;
    check_distribution_rows(probabilities, targets);
    double total = 0.0;
    for (std::size_t r = 0; r < targets.size(); ++r) {
        total -= std::log(probabilities(r, static_cast<std::size_t>(targets[r])));
    }
    return total / static_cast<double>(targets.size());
}

Var rec_loss(Var probabilities, std::span<const int> targets) {
    Graph& g = *probabilities.graph;
    if (targets.empty()) return g.constant(Tensor::scalar(0.0));
    check_distribution_rows(probabilities.value(), targets);
    std::vector<Cell> cells;
    for (std::size_t r = 0; r < targets.size(); ++r) cells.emplace_back(r, static_cast<std::size_t>(targets[r]));
    return ops::scale(ops::sum(ops::log(ops::select_elements(probabilities, cells))),
                      -1.0 / static_cast<double>(targets.size()));
}

Var rec_loss_from_logits(Var logits, std::span<const int> targets) {
    Graph& g = *logits.graph;
    if (targets.empty()) return g.constant(Tensor::scalar(0.0));
    require_matrix(logits.value(), "rec_loss_from_logits");
    if (logits.rows() != targets.size()) {
        throw ShapeError("rec_loss_from_logits: " + std::to_string(logits.rows()) + " rows for " +
                         std::to_string(targets.size()) + " targets");
    }
    std::vector<Cell> cells;
    for (std::size_t r = 0; r < targets.size(); ++r) {
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= logits.cols()) {
            throw DomainError("rec_loss: target " + std::to_string(targets[r]) + " outside vocabulary");
        }
        cells.emplace_back(r, static_cast<std::size_t>(targets[r]));
    }
    // -log softmax(x)[y] = logsumexp(x) - x[y]
    Var nll = ops::sub(ops::sum(ops::row_logsumexp(logits)), ops::sum(ops::select_elements(logits, cells)));
    return ops::scale(nll, 1.0 / static_cast<double>(targets.size()));
}

Var total_loss(Graph& g, const LossParts& parts, const LossConfig& cfg) {
    Var total = parts.align ? *parts.align : g.constant(Tensor::scalar(0.0));
    auto add_weighted = [&](const std::optional<Var>& part, double weight) {
        if (part && weight != 0.0) total = ops::add(total, ops::scale(*part, weight));
    };
    add_weighted(parts.fuse, cfg.lambda_fuse);
    add_weighted(parts.rec, cfg.lambda_rec);
    add_weighted(parts.guide, cfg.lambda_guide);
    return total;
}

double total_loss(double align, double fuse, double rec, double guide, const LossConfig& cfg) {
    for (double v : {align, fuse, rec, guide}) {
        if (!std::isfinite(v)) throw NumericError("total_loss: non-finite part");
    }
    return align + cfg.lambda_fuse * fuse + cfg.lambda_rec * rec + cfg.lambda_guide * guide;
}

}  // namespace mmref
