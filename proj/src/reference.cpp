#include "mmref/reference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace mmref {

std::vector<int> distinct_in_order(std::span<const int> labels) {
    std::vector<int> out;
    std::unordered_set<int> seen;
    for (int l : labels) {
        if (seen.insert(l).second) out.push_back(l);
    }
    return out;
}

ReferenceBank::ReferenceBank(std::span<const int> identities, std::size_t d, std::uint64_t seed)
    : identities_(identities.begin(), identities.end()) {
    if (identities.empty() || d == 0) throw DomainError("reference bank: need m, d >= 1");
    for (std::size_t r = 0; r < identities_.size(); ++r) {
        if (!rows_.emplace(identities_[r], r).second) {
            throw DomainError("reference bank: duplicate identity " + std::to_string(identities_[r]));
        }
    }
    Rng rng(seed);
    weights_ = Parameter("reference.bank", nn::gaussian({identities_.size(), d}, 0.02, rng));
}

std::size_t ReferenceBank::row_of(int identity) const {
    auto it = rows_.find(identity);
    if (it == rows_.end()) throw DomainError("reference bank: no row for identity " + std::to_string(identity));
    return it->second;
}

Var ReferenceBank::batch_rows(Graph& g, std::span<const int> labels) {
    std::vector<std::size_t> rows;
    for (int id : distinct_in_order(labels)) rows.push_back(row_of(id));
    return ops::select_rows(g.parameter(weights_), rows);
}

void ReferenceBank::assign(const Tensor& values) {
    if (!values.same_shape(weights_.value)) {
        throw ShapeError("reference bank: cannot assign " + shape_string(values.shape()) + " to " +
                         shape_string(weights_.value.shape()));
    }
    weights_.value = values;
}

ReferenceBank init_reference_bank(std::size_t m, std::size_t d, std::uint64_t seed) {
    std::vector<int> ids(m);
    std::iota(ids.begin(), ids.end(), 0);
    return ReferenceBank(ids, d, seed);
}

std::size_t mask_count(std::size_t maskable, double ratio) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw DomainError("mask_tokens: ratio must lie in [0, 1]");
    if (ratio == 0.0 || maskable == 0) return 0;
    const auto n = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(maskable)));
    return std::clamp<std::size_t>(n, 1, maskable);
}

MaskedText mask_tokens(std::span<const int> ids, double ratio, std::uint64_t seed) {
    if (ids.empty()) throw DomainError("mask_tokens: empty sequence");
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!tokens::is_special(ids[i]) && ids[i] != tokens::kMask) candidates.push_back(i);
    }
    const std::size_t count = mask_count(candidates.size(), ratio);
    Rng rng(seed);
    // Partial Fisher-Yates: the first `count` slots are a uniform sample.
    for (std::size_t i = 0; i < count; ++i) {
        std::swap(candidates[i], candidates[i + rng.index(candidates.size() - i)]);
    }
    candidates.resize(count);
    std::sort(candidates.begin(), candidates.end());

    MaskedText out;
    out.ids.assign(ids.begin(), ids.end());
    out.positions = std::move(candidates);
    for (std::size_t p : out.positions) {
        out.targets.push_back(ids[p]);
        out.ids[p] = tokens::kMask;
    }
    return out;
}

LocalReconstruction::LocalReconstruction(const ReconstructionConfig& cfg, Rng& rng)
    : cfg_(cfg),
      query_in_("reconstruction.query_mlp", cfg.d, cfg.d, rng),
      key_mlp_("reconstruction.key_mlp", cfg.d, cfg.d, rng),
      value_mlp_("reconstruction.value_mlp", cfg.d, cfg.d, rng),
      head_("reconstruction.head", cfg.d, cfg.vocab_size, rng) {
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
        const std::string name = "reconstruction.block" + std::to_string(b);
        blocks_.push_back(Block{nn::AttentionLayer(name + ".self", cfg.d, cfg.n_heads, rng),
                                nn::FeedForward(name + ".ffn1", cfg.d, 2 * cfg.d, rng),
                                nn::AttentionLayer(name + ".cross", cfg.d, cfg.n_heads, rng),
                                nn::FeedForward(name + ".ffn2", cfg.d, 2 * cfg.d, rng)});
    }
}

ReconstructionOutput LocalReconstruction::forward(Graph& g, Var masked_tokens, Var reference,
                                                  std::span<const std::size_t> positions) {
    require_matrix(masked_tokens.value(), "local_reconstruction");
    if (masked_tokens.cols() != cfg_.d || reference.shape() != Shape{1, cfg_.d}) {
        throw ShapeError("local_reconstruction: tokens " + shape_string(masked_tokens.shape()) + ", reference " +
                         shape_string(reference.shape()) + ", model width " + std::to_string(cfg_.d));
    }
    if (positions.empty()) throw DomainError("local_reconstruction: no masked positions");
    Var keys = key_mlp_.forward(g, reference);
    Var values = value_mlp_.forward(g, reference);
    Var h = query_in_.forward(g, masked_tokens);
    for (auto& block : blocks_) {
        h = block.self_attention.forward(g, h);
        h = block.ffn1.forward(g, h);
        h = block.cross_attention.forward(g, h, keys, values);
        h = block.ffn2.forward(g, h);
    }
    Var selected = ops::select_rows(h, positions);
    Var logits = head_.forward(g, selected);
    return ReconstructionOutput{h, selected, logits, ops::row_softmax(logits)};
}

void LocalReconstruction::collect(ParameterList& out) {
    query_in_.collect(out);
    key_mlp_.collect(out);
    value_mlp_.collect(out);
    for (auto& b : blocks_) {
        b.self_attention.collect(out);
        b.ffn1.collect(out);
        b.cross_attention.collect(out);
        b.ffn2.collect(out);
    }
    head_.collect(out);
}

}  // namespace mmref
