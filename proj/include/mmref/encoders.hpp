#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mmref/graph.hpp"
#include "mmref/nn.hpp"

namespace mmref {

/// Reserved token ids.
namespace tokens {
inline constexpr int kPad = 0;
inline constexpr int kMask = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kReserved = 4;

inline bool is_special(int id) { return id == kPad || id == kBos || id == kEos; }
}  // namespace tokens

struct EncoderConfig {
    std::size_t d = 64;
    std::size_t vocab_size = 64;
    std::size_t max_seq_len = 24;
    std::size_t n_blocks = 2;
    std::size_t n_heads = 4;
    std::size_t image_input_dim = 64;

    void validate() const;
};

struct TextEncoding {
    Var global;  ///< 1 x d, unit norm
    Var tokens;  ///< L x d block outputs before pooling
};

/// Token + learned position embeddings, self-attention blocks, pooling at the
/// EOS position, projection and L2 normalization.
class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(const EncoderConfig& cfg, Rng& rng);

    TextEncoding encode(Graph& g, std::span<const int> ids);
    /// n x d matrix of unit-norm globals; token embeddings appended to `token_out` when given.
    Var encode_batch(Graph& g, std::span<const std::vector<int>> sequences, std::vector<Var>* token_out = nullptr);

    void collect(ParameterList& out);
    const EncoderConfig& config() const { return cfg_; }

private:
    EncoderConfig cfg_;
    Parameter token_table_;
    Parameter position_table_;
    std::vector<nn::AttentionBlock> blocks_;
    nn::LayerNorm final_norm_;
    nn::Linear projection_;
};

/// Two-layer perceptron over raw image features, L2-normalized.
class ImageEncoder {
public:
    ImageEncoder() = default;
    ImageEncoder(const EncoderConfig& cfg, Rng& rng);

    /// raw: n x image_input_dim -> n x d
    Var encode(Graph& g, Var raw);
    Var encode(Graph& g, const Tensor& raw) { return encode(g, g.constant(raw)); }

    void collect(ParameterList& out);

private:
    EncoderConfig cfg_;
    nn::Linear hidden_;
    nn::Linear output_;
};

/// Index at which the text global is pooled: the last EOS, else the last token.
std::size_t pooling_position(std::span<const int> ids);

}  // namespace mmref
