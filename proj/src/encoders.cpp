#include "mmref/encoders.hpp"

#include <numeric>

namespace mmref {

void EncoderConfig::validate() const {
    if (d == 0 || n_heads == 0 || d % n_heads != 0) throw DomainError("encoder: d must be divisible by n-heads");
    if (max_seq_len < 2) throw DomainError("encoder: max-seq-len must be >= 2");
    if (vocab_size < static_cast<std::size_t>(tokens::kReserved)) {
        throw DomainError("encoder: vocab-size must be >= 4 (PAD, MASK, BOS, EOS)");
    }
    if (image_input_dim == 0) throw DomainError("encoder: image-input-dim must be > 0");
}

std::size_t pooling_position(std::span<const int> ids) {
    for (std::size_t i = ids.size(); i-- > 0;) {
        if (ids[i] == tokens::kEos) return i;
    }
    return ids.size() - 1;
}

TextEncoder::TextEncoder(const EncoderConfig& cfg, Rng& rng)
    : cfg_(cfg),
      token_table_("text.token_embedding", nn::gaussian({cfg.vocab_size, cfg.d}, 0.02, rng)),
      position_table_("text.position_embedding", nn::gaussian({cfg.max_seq_len, cfg.d}, 0.02, rng)),
      final_norm_("text.final_norm", cfg.d),
      projection_("text.projection", cfg.d, cfg.d, rng) {
    cfg_.validate();
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
        blocks_.emplace_back("text.block" + std::to_string(b), cfg.d, cfg.n_heads, rng);
    }
}

TextEncoding TextEncoder::encode(Graph& g, std::span<const int> ids) {
    if (ids.empty()) throw DomainError("encode_text: empty token sequence");
    if (ids.size() > cfg_.max_seq_len) {
        throw DomainError("encode_text: length " + std::to_string(ids.size()) + " exceeds max-seq-len " +
                          std::to_string(cfg_.max_seq_len));
    }
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) {
            throw DomainError("encode_text: out-of-vocabulary id " + std::to_string(id));
        }
    }
    std::vector<int> positions(ids.size());
    std::iota(positions.begin(), positions.end(), 0);
    Var x = ops::add(ops::embedding(g.parameter(token_table_), ids),
                     ops::embedding(g.parameter(position_table_), positions));
    for (auto& block : blocks_) x = block.forward(g, x);
    const std::size_t pool[] = {pooling_position(ids)};
    Var pooled = projection_.forward(g, final_norm_.forward(g, ops::select_rows(x, pool)));
    return TextEncoding{ops::l2_normalize_rows(pooled), x};
}

Var TextEncoder::encode_batch(Graph& g, std::span<const std::vector<int>> sequences, std::vector<Var>* token_out) {
    if (sequences.empty()) throw DomainError("encode_text: empty batch");
    std::vector<Var> globals;
    globals.reserve(sequences.size());
    for (const auto& seq : sequences) {
        TextEncoding enc = encode(g, seq);
        globals.push_back(enc.global);
        if (token_out) token_out->push_back(enc.tokens);
    }
    return ops::concat_rows(globals);
}

void TextEncoder::collect(ParameterList& out) {
    out.push_back(&token_table_);
    out.push_back(&position_table_);
    for (auto& b : blocks_) b.collect(out);
    final_norm_.collect(out);
    projection_.collect(out);
}

ImageEncoder::ImageEncoder(const EncoderConfig& cfg, Rng& rng)
    : cfg_(cfg),
      hidden_("image.hidden", cfg.image_input_dim, 2 * cfg.d, rng),
      output_("image.output", 2 * cfg.d, cfg.d, rng) {
    cfg_.validate();
}

Var ImageEncoder::encode(Graph& g, Var raw) {
    require_matrix(raw.value(), "encode_image");
    if (raw.cols() != cfg_.image_input_dim) {
        throw ShapeError("encode_image: input width " + std::to_string(raw.cols()) + ", expected " +
                         std::to_string(cfg_.image_input_dim));
    }
    return ops::l2_normalize_rows(output_.forward(g, ops::gelu(hidden_.forward(g, raw))));
}

void ImageEncoder::collect(ParameterList& out) {
    hidden_.collect(out);
    output_.collect(out);
}

}  // namespace mmref
