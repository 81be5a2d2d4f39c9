#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "mmref/graph.hpp"

namespace mmref {

class ReferenceBank;

/// Which references act as negatives for the fusion and guidance losses.
enum class NegativeScope {
    Batch,  ///< references of the identities present in the batch
    Bank,   ///< every reference in the bank
};

struct LossConfig {
    double tau_pos = 10.0;
    double tau_neg = 40.0;
    double alpha = 0.6;
    double beta = 0.4;
    double lambda_fuse = 0.25;
    double lambda_rec = 0.25;
    double lambda_guide = 4.0;
    double refine_weight = 0.5;
    NegativeScope negatives = NegativeScope::Bank;

    void validate() const;
};

using Cell = std::pair<std::size_t, std::size_t>;

/// Positive / negative cells of a similarity matrix, split by label equality.
struct PairPartition {
    std::vector<Cell> positives;
    std::vector<Cell> negatives;
};

PairPartition partition_by_label(std::span<const int> row_labels, std::span<const int> col_labels);

/// Sum over positives of log(1 + e^{-tau_p (s - alpha)}) plus sum over
/// negatives of log(1 + e^{tau_n (s - beta)}).
double contrastive_loss(std::span<const double> positives, std::span<const double> negatives, const LossConfig& cfg);

/// Graph form over the cells of a similarity matrix.
Var contrastive_loss(Var similarity, const PairPartition& partition, const LossConfig& cfg);

/// (2/n) * contrastive loss over the full text-image cosine matrix.
Var align_loss(Var text_globals, Var image_globals, std::span<const int> labels, const LossConfig& cfg);

/// (1/2n) * contrastive loss over cos(R_batch, sg(E)); trains only the bank.
/// `reps` are the 2n uni-modal representations with their labels.
Var fuse_loss(ReferenceBank& bank, Var reps, std::span<const int> labels, const LossConfig& cfg);

/// (1/2n) * contrastive loss over cos(E, sg(R_batch)); trains only the encoders.
Var guide_loss(ReferenceBank& bank, Var reps, std::span<const int> labels, const LossConfig& cfg);

/// Mean over rows of -log p[row, target]. Rows must be distributions.
double rec_loss(const Tensor& probabilities, std::span<const int> targets);
Var rec_loss(Var probabilities, std::span<const int> targets);
/// Same quantity from unnormalized logits via log-softmax.
Var rec_loss_from_logits(Var logits, std::span<const int> targets);

struct LossParts {
    std::optional<Var> align;
    std::optional<Var> fuse;
    std::optional<Var> rec;
    std::optional<Var> guide;
};

/// L_align + lambda1 L_fuse + lambda2 L_rec + lambda3 L_guide (absent parts are 0).
Var total_loss(Graph& g, const LossParts& parts, const LossConfig& cfg);
double total_loss(double align, double fuse, double rec, double guide, const LossConfig& cfg);

}  // namespace mmref
