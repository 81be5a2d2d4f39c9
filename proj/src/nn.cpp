#include "mmref/nn.hpp"

#include <cmath>

namespace mmref::nn {

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.values()) v = rng.normal(0.0, stddev);
    return t;
}

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : weight_(name + ".weight", gaussian({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng)),
      bias_(name + ".bias", Tensor::zeros({1, out})) {}

Var Linear::forward(Graph& g, Var x) {
    if (x.cols() != in_features()) {
        throw ShapeError("linear '" + weight_.name + "': input " + shape_string(x.shape()) + " for weight " +
                         shape_string(weight_.value.shape()));
    }
    return ops::add_row(ops::matmul(x, g.parameter(weight_)), g.parameter(bias_));
}

void Linear::collect(ParameterList& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
}

LayerNorm::LayerNorm(const std::string& name, std::size_t d)
    : gain_(name + ".gain", Tensor::filled({1, d}, 1.0)), shift_(name + ".shift", Tensor::zeros({1, d})) {}

Var LayerNorm::forward(Graph& g, Var x) { return ops::layer_norm(x, g.parameter(gain_), g.parameter(shift_)); }

void LayerNorm::collect(ParameterList& out) {
    out.push_back(&gain_);
    out.push_back(&shift_);
}

MultiHeadAttention::MultiHeadAttention(const std::string& name, std::size_t d, std::size_t heads, Rng& rng)
    : heads_(heads),
      query_(name + ".query", d, d, rng),
      key_(name + ".key", d, d, rng),
      value_(name + ".value", d, d, rng),
      output_(name + ".output", d, d, rng) {
    if (heads == 0 || d % heads != 0) {
        throw ShapeError(name + ": width " + std::to_string(d) + " not divisible into " + std::to_string(heads) + " heads");
    }
}

Var MultiHeadAttention::forward(Graph& g, Var queries, Var keys, Var values) {
    if (keys.rows() != values.rows()) {
        throw ShapeError("attention: keys " + shape_string(keys.shape()) + " vs values " + shape_string(values.shape()));
    }
    if (keys.rows() == 1) {
        Var v = value_.forward(g, values);
        Var ones = g.constant(Tensor::filled({queries.rows(), 1}, 1.0));
        return output_.forward(g, ops::matmul(ones, v));
    }
    Var attended = ops::multi_head_attention(query_.forward(g, queries), key_.forward(g, keys),
                                             value_.forward(g, values), heads_);
    return output_.forward(g, attended);
}

void MultiHeadAttention::collect(ParameterList& out) {
    query_.collect(out);
    key_.collect(out);
    value_.collect(out);
    output_.collect(out);
}

AttentionLayer::AttentionLayer(const std::string& name, std::size_t d, std::size_t heads, Rng& rng)
    : attention_(name + ".attn", d, heads, rng), norm_(name + ".norm", d) {}

Var AttentionLayer::forward(Graph& g, Var x, Var keys, Var values) {
    Var a = attention_.forward(g, x, keys, values);
    return norm_.forward(g, residual ? ops::add(x, a) : a);
}

void AttentionLayer::collect(ParameterList& out) {
    attention_.collect(out);
    norm_.collect(out);
}

FeedForward::FeedForward(const std::string& name, std::size_t d, std::size_t hidden, Rng& rng)
    : up_(name + ".up", d, hidden, rng), down_(name + ".down", hidden, d, rng), norm_(name + ".norm", d) {}

Var FeedForward::forward(Graph& g, Var x) {
    Var h = down_.forward(g, ops::gelu(up_.forward(g, x)));
    return norm_.forward(g, residual ? ops::add(x, h) : h);
}

void FeedForward::collect(ParameterList& out) {
    up_.collect(out);
    down_.collect(out);
    norm_.collect(out);
}

AttentionBlock::AttentionBlock(const std::string& name, std::size_t d, std::size_t heads, Rng& rng)
    : attention_(name + ".mha", d, heads, rng), ffn_(name + ".ffn", d, 2 * d, rng) {}

Var AttentionBlock::forward(Graph& g, Var queries, Var keys, Var values) {
    return ffn_.forward(g, attention_.forward(g, queries, keys, values));
}

void AttentionBlock::collect(ParameterList& out) {
    attention_.collect(out);
    ffn_.collect(out);
}

}  // namespace mmref::nn
