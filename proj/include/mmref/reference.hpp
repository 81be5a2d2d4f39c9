#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "mmref/encoders.hpp"
#include "mmref/graph.hpp"
#include "mmref/nn.hpp"

namespace mmref {

/// Labels in first-occurrence order without repeats.
std::vector<int> distinct_in_order(std::span<const int> labels);

/// Learnable m x d matrix with one row per training identity.
///
/// Rows are raw parameters; normalization only happens inside cosine scores.
class ReferenceBank {
public:
    ReferenceBank() = default;
    /// Rows for `identities` (in that order), drawn from N(0, 0.02^2).
    ReferenceBank(std::span<const int> identities, std::size_t d, std::uint64_t seed);

    std::size_t size() const { return identities_.size(); }
    std::size_t dim() const { return weights_.value.cols(); }

    std::size_t row_of(int identity) const;
    bool contains(int identity) const { return rows_.contains(identity); }
    const std::vector<int>& identities() const { return identities_; }

    Parameter& parameter() { return weights_; }
    const Tensor& matrix() const { return weights_.value; }

    /// One row per distinct label, in first-occurrence order.
    Var batch_rows(Graph& g, std::span<const int> labels);

    /// Replaces the matrix (same shape), e.g. when loading a checkpoint.
    void assign(const Tensor& values);

private:
    Parameter weights_;
    std::vector<int> identities_;
    std::unordered_map<int, std::size_t> rows_;
};

/// m rows of width d from a fresh seed; identities 0..m-1.
ReferenceBank init_reference_bank(std::size_t m, std::size_t d, std::uint64_t seed);

struct MaskedText {
    std::vector<int> ids;              ///< MASK on masked positions, original elsewhere
    std::vector<std::size_t> positions;  ///< sorted, unique
    std::vector<int> targets;          ///< original ids at `positions`
};

/// Number of positions masked for a sequence with `maskable` candidates.
std::size_t mask_count(std::size_t maskable, double ratio);

/// Replaces round(ratio * maskable) non-special tokens (at least one when
/// ratio > 0) with MASK, chosen uniformly without replacement.
MaskedText mask_tokens(std::span<const int> ids, double ratio, std::uint64_t seed);

struct ReconstructionOutput {
    Var hidden;         ///< L x d
    Var selected;       ///< |M| x d, rows of hidden at the masked positions
    Var logits;         ///< |M| x V
    Var probabilities;  ///< |M| x V
};

struct ReconstructionConfig {
    std::size_t d = 64;
    std::size_t vocab_size = 64;
    std::size_t n_heads = 4;
    std::size_t n_blocks = 3;
};

/// Masked-token reconstruction conditioned on one reference row.
///
/// Q goes through an input MLP, then each block runs self-attention, FFN1,
/// cross-attention against the key/value rows made from the reference by two
/// MLPs, and FFN2. A single linear head maps the masked rows to vocabulary logits.
class LocalReconstruction {
public:
    LocalReconstruction() = default;
    LocalReconstruction(const ReconstructionConfig& cfg, Rng& rng);

    ReconstructionOutput forward(Graph& g, Var masked_tokens, Var reference, std::span<const std::size_t> positions);

    void collect(ParameterList& out);
    const ReconstructionConfig& config() const { return cfg_; }

private:
    struct Block {
        nn::AttentionLayer self_attention;
        nn::FeedForward ffn1;
        nn::AttentionLayer cross_attention;
        nn::FeedForward ffn2;
    };

    ReconstructionConfig cfg_;
    nn::Linear query_in_;
    nn::Linear key_mlp_;
    nn::Linear value_mlp_;
    std::vector<Block> blocks_;
    nn::Linear head_;
};

}  // namespace mmref
