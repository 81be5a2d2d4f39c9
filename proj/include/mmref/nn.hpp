#pragma once

#include <cstddef>
#include <string>

#include "mmref/graph.hpp"
#include "mmref/rng.hpp"

namespace mmref::nn {

/// Gaussian-initialized table, used for token/position embeddings and the reference bank.
Tensor gaussian(Shape shape, double stddev, Rng& rng);

/// y = x W + b with W fan-in scaled.
class Linear {
public:
    Linear() = default;
    Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng);

    Var forward(Graph& g, Var x);
    void collect(ParameterList& out);

    std::size_t in_features() const { return weight_.value.rows(); }
    std::size_t out_features() const { return weight_.value.cols(); }

private:
    Parameter weight_;
    Parameter bias_;
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(const std::string& name, std::size_t d);

    Var forward(Graph& g, Var x);
    void collect(ParameterList& out);

private:
    Parameter gain_;
    Parameter shift_;
};

/// Projected multi-head attention.
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(const std::string& name, std::size_t d, std::size_t heads, Rng& rng);

    /// With a single key row the attention weights are identically 1, so every
    /// query receives the projected value row; the query/key projections are
    /// skipped in that case.
    Var forward(Graph& g, Var queries, Var keys, Var values);
    void collect(ParameterList& out);

private:
    std::size_t heads_ = 1;
    Linear query_, key_, value_, output_;
};

/// x -> LayerNorm(x + MHA(x, keys, values)); residual can be switched off.
class AttentionLayer {
public:
    AttentionLayer() = default;
    AttentionLayer(const std::string& name, std::size_t d, std::size_t heads, Rng& rng);

    Var forward(Graph& g, Var x, Var keys, Var values);
    Var forward(Graph& g, Var x) { return forward(g, x, x, x); }
    void collect(ParameterList& out);

    bool residual = true;

private:
    MultiHeadAttention attention_;
    LayerNorm norm_;
};

/// x -> LayerNorm(x + W2 gelu(W1 x)); residual can be switched off.
class FeedForward {
public:
    FeedForward() = default;
    FeedForward(const std::string& name, std::size_t d, std::size_t hidden, Rng& rng);

    Var forward(Graph& g, Var x);
    void collect(ParameterList& out);

    bool residual = true;

private:
    Linear up_, down_;
    LayerNorm norm_;
};

/// Attention layer followed by a feed-forward layer.
class AttentionBlock {
public:
    AttentionBlock() = default;
    AttentionBlock(const std::string& name, std::size_t d, std::size_t heads, Rng& rng);

    /// Self-attending when keys and values are the queries themselves.
    Var forward(Graph& g, Var queries, Var keys, Var values);
    Var forward(Graph& g, Var x) { return forward(g, x, x, x); }
    void collect(ParameterList& out);

    void set_residual(bool on) {
        attention_.residual = on;
        ffn_.residual = on;
    }

private:
    AttentionLayer attention_;
    FeedForward ffn_;
};

}  // namespace mmref::nn
