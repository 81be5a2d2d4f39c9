#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmref/tensor.hpp"

namespace mmref {

/// A named learnable array with its gradient accumulator.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())) {}

    void zero_grad() { grad = Tensor::zeros(value.shape()); }
};

using ParameterList = std::vector<Parameter*>;

enum class OpKind {
    Constant,
    Leaf,
    Parameter,
    MatMul,
    Add,
    AddRow,
    Sub,
    Mul,
    Scale,
    Shift,
    Exp,
    Log,
    Softplus,
    Gelu,
    RowSoftmax,
    RowLogSumExp,
    LayerNorm,
    L2Normalize,
    Embedding,
    ConcatRows,
    ConcatCols,
    SliceCols,
    MeanRows,
    SelectRows,
    SelectElements,
    Transpose,
    Sum,
    StopGradient,
};

const char* op_name(OpKind kind);

class Graph;

/// Handle to a node of a Graph.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

/// Define-by-run reverse-mode tape.
///
/// Nodes are appended in evaluation order, so node ids are already a
/// topological order and backward is a single reverse sweep. A graph is built
/// for one step and discarded; it is not thread-safe.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, const Tensor& out_value, const Tensor& out_grad)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    /// Differentiable input whose gradient is read back with grad().
    Var leaf(Tensor value);
    /// Binds a parameter; repeated binds of the same parameter return the same node.
    Var parameter(Parameter& p);

    /// Appends an operator output. Rejects non-finite results naming the op.
    Var record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
    std::size_t size() const { return nodes_.size(); }

    /// Reverse sweep from a 1 x 1 node. Gradients of bound parameters are
    /// added into Parameter::grad.
    void backward(Var loss);

    /// Gradient of the last backward() w.r.t. any node (zeros if unreached).
    Tensor grad(Var v) const;

    /// Called from backward rules: adds `g` into the gradient buffer of node `id`.
    void accumulate(std::size_t id, const Tensor& g);
    void accumulate(std::size_t id, Tensor&& g);

    /// Disables recording of backward rules (inference only).
    void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
    bool grad_enabled() const { return grad_enabled_; }

private:
    struct Node {
        OpKind kind;
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<bool> has_grad_;
    std::unordered_map<Parameter*, std::size_t> bound_;
    bool grad_enabled_ = true;
};

/// Differentiable operator catalog. Every operator validates its shapes and
/// throws ShapeError naming the operands on mismatch.
namespace ops {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
/// a (n x m) + bias (1 x m) broadcast over rows.
Var add_row(Var a, Var bias);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// a + s elementwise.
Var shift(Var a, double s);
Var exp(Var a);
Var log(Var a);
/// log(1 + e^x), overflow-safe.
Var softplus(Var a);
/// tanh-approximated GELU.
Var gelu(Var a);
Var row_softmax(Var a);
/// n x m -> n x 1
Var row_logsumexp(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Rejects zero-norm rows.
Var l2_normalize_rows(Var a);
/// Rows of `table` at `ids`.
Var embedding(Var table, std::span<const int> ids);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t start, std::size_t count);
/// n x m -> 1 x m
Var mean_rows(Var a);
Var select_rows(Var a, std::span<const std::size_t> rows);
/// Gathers (row, col) entries into a 1 x k row.
Var select_elements(Var a, std::span<const std::pair<std::size_t, std::size_t>> at);
Var transpose(Var a);
/// -> 1 x 1
Var sum(Var a);
Var mean(Var a);
/// Identity forward, zero backward.
Var stop_gradient(Var a);

/// Rows of a against rows of b; rejects zero-norm rows (no epsilon).
Var cosine_similarity(Var a, Var b);

/// Scaled dot-product attention without projections; d must split evenly into heads.
Var multi_head_attention(Var queries, Var keys, Var values, std::size_t heads);

}  // namespace ops

}  // namespace mmref
