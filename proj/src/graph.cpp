#include "mmref/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mmref {

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Constant: return "constant";
        case OpKind::Leaf: return "leaf";
        case OpKind::Parameter: return "parameter";
        case OpKind::MatMul: return "matmul";
        case OpKind::Add: return "add";
        case OpKind::AddRow: return "add_row";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::Shift: return "shift";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        case OpKind::Softplus: return "softplus";
        case OpKind::Gelu: return "gelu";
        case OpKind::RowSoftmax: return "row_softmax";
        case OpKind::RowLogSumExp: return "row_logsumexp";
        case OpKind::LayerNorm: return "layer_norm";
        case OpKind::L2Normalize: return "l2_normalize_rows";
        case OpKind::Embedding: return "embedding";
        case OpKind::ConcatRows: return "concat_rows";
        case OpKind::ConcatCols: return "concat_cols";
        case OpKind::SliceCols: return "slice_cols";
        case OpKind::MeanRows: return "mean_rows";
        case OpKind::SelectRows: return "select_rows";
        case OpKind::SelectElements: return "select_elements";
        case OpKind::Transpose: return "transpose";
        case OpKind::Sum: return "sum";
        case OpKind::StopGradient: return "stop_gradient";
    }
    return "unknown";
}

const Tensor& Var::value() const { return graph->value(*this); }

Var Graph::constant(Tensor value) {
    if (!value.all_finite()) throw NumericError("constant: non-finite input");
    nodes_.push_back(Node{OpKind::Constant, std::move(value), {}, nullptr, false});
    return Var{this, nodes_.size() - 1};
}

Var Graph::leaf(Tensor value) {
    if (!value.all_finite()) throw NumericError("leaf: non-finite input");
    nodes_.push_back(Node{OpKind::Leaf, std::move(value), {}, nullptr, grad_enabled_});
    return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(Parameter& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return Var{this, it->second};
    if (!p.value.all_finite()) throw NumericError("parameter '" + p.name + "' holds non-finite values");
    nodes_.push_back(Node{OpKind::Parameter, p.value, {}, nullptr, grad_enabled_});
    bound_.emplace(&p, nodes_.size() - 1);
    return Var{this, nodes_.size() - 1};
}

Var Graph::record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    if (!value.all_finite()) throw NumericError(std::string("non-finite output from op '") + op_name(kind) + "'");
    bool live = false;
    if (grad_enabled_ && backward) {
        for (auto id : inputs) live = live || nodes_.at(id).requires_grad;
    }
    if (!live) backward = nullptr;
    nodes_.push_back(Node{kind, std::move(value), std::move(inputs), std::move(backward), live});
    return Var{this, nodes_.size() - 1};
}

void Graph::backward(Var loss) {
    const Tensor& out = value(loss);
    if (out.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_string(out.shape()));
    grads_.assign(nodes_.size(), Tensor());
    has_grad_.assign(nodes_.size(), false);
    grads_[loss.id] = Tensor::filled(out.shape(), 1.0);
    has_grad_[loss.id] = true;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        Node& node = nodes_[id];
        if (!has_grad_[id] || !node.backward) continue;
        node.backward(*this, node.value, grads_[id]);
    }
    for (auto& [param, id] : bound_) {
        if (!has_grad_[id]) continue;
        if (!param->grad.same_shape(param->value)) param->zero_grad();
        auto dst = param->grad.values();
        auto src = grads_[id].values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
}

Tensor Graph::grad(Var v) const {
    if (v.id < has_grad_.size() && has_grad_[v.id]) return grads_[v.id];
    return Tensor::zeros(value(v).shape());
}

void Graph::accumulate(std::size_t id, const Tensor& g) {
    if (!nodes_[id].requires_grad) return;
    if (!g.same_shape(nodes_[id].value)) {
        throw ShapeError(std::string("gradient shape ") + shape_string(g.shape()) + " for node of shape " +
                         shape_string(nodes_[id].value.shape()) + " (" + op_name(nodes_[id].kind) + ")");
    }
    if (!has_grad_[id]) {
        grads_[id] = g;
        has_grad_[id] = true;
        return;
    }
    auto dst = grads_[id].values();
    auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Graph::accumulate(std::size_t id, Tensor&& g) {
    if (!nodes_[id].requires_grad) return;
    if (!has_grad_[id] && g.same_shape(nodes_[id].value)) {
        grads_[id] = std::move(g);
        has_grad_[id] = true;
        return;
    }
    accumulate(id, static_cast<const Tensor&>(g));
}

namespace ops {
namespace {

Graph& graph_of(Var a) {
    if (!a.graph) throw Error("operation on a detached Var");
    return *a.graph;
}

void same_graph(Var a, Var b) {
    if (a.graph != b.graph) throw Error("operands belong to different graphs");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

template <typename F>
Tensor map_values(const Tensor& a, F f) {
    Tensor out = a;
    for (double& v : out.values()) v = f(v);
    return out;
}

// d(out)/d(in) evaluated from the input value, times out_grad.
template <typename D>
Var unary(OpKind kind, Var a, Tensor value, D derivative) {
    Graph& g = graph_of(a);
    const std::size_t ia = a.id;
    return g.record(kind, std::move(value), {ia},
                    [ia, derivative](Graph& gr, const Tensor& out, const Tensor& og) {
                        const Tensor& x = gr.value(Var{&gr, ia});
                        Tensor d = og;
                        auto dv = d.values();
                        auto xv = x.values();
                        auto ov = out.values();
                        for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= derivative(xv[i], ov[i]);
                        gr.accumulate(ia, std::move(d));
                    });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var matmul(Var a, Var b) {
    same_graph(a, b);
    Graph& g = graph_of(a);
    Tensor out = kernels::matmul(a.value(), b.value());
    const std::size_t ia = a.id, ib = b.id;
    return g.record(OpKind::MatMul, std::move(out), {ia, ib}, [ia, ib](Graph& gr, const Tensor&, const Tensor& og) {
        const Tensor& av = gr.value(Var{&gr, ia});
        const Tensor& bv = gr.value(Var{&gr, ib});
        if (gr.requires_grad(Var{&gr, ia})) gr.accumulate(ia, kernels::matmul_transposed(og, bv));
        if (gr.requires_grad(Var{&gr, ib})) gr.accumulate(ib, kernels::matmul(kernels::transpose(av), og));
    });
}

Var add(Var a, Var b) {
    same_graph(a, b);
    require_same_shape("add", a.value(), b.value());
    Tensor out = a.value();
    auto ov = out.values();
    auto bv = b.value().values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
    const std::size_t ia = a.id, ib = b.id;
    return graph_of(a).record(OpKind::Add, std::move(out), {ia, ib}, [ia, ib](Graph& gr, const Tensor&, const Tensor& og) {
        gr.accumulate(ia, og);
        gr.accumulate(ib, og);
    });
}

Var add_row(Var a, Var bias) {
    same_graph(a, bias);
    require_matrix(a.value(), "add_row");
    require_matrix(bias.value(), "add_row");
    if (bias.rows() != 1 || bias.cols() != a.cols()) {
        throw ShapeError("add_row: bias " + shape_string(bias.shape()) + " for input " + shape_string(a.shape()));
    }
    Tensor out = a.value();
    const auto bv = bias.value().values();
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row_span(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
    }
    const std::size_t ia = a.id, ib = bias.id;
    return graph_of(a).record(OpKind::AddRow, std::move(out), {ia, ib}, [ia, ib](Graph& gr, const Tensor&, const Tensor& og) {
        gr.accumulate(ia, og);
        if (!gr.requires_grad(Var{&gr, ib})) return;
        Tensor gb = Tensor::zeros({1, og.cols()});
        for (std::size_t r = 0; r < og.rows(); ++r) {
            auto row = og.row_span(r);
            for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c];
        }
        gr.accumulate(ib, std::move(gb));
    });
}

Var sub(Var a, Var b) {
    same_graph(a, b);
    require_same_shape("sub", a.value(), b.value());
    Tensor out = a.value();
    auto ov = out.values();
    auto bv = b.value().values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] -= bv[i];
    const std::size_t ia = a.id, ib = b.id;
    return graph_of(a).record(OpKind::Sub, std::move(out), {ia, ib}, [ia, ib](Graph& gr, const Tensor&, const Tensor& og) {
        gr.accumulate(ia, og);
        if (gr.requires_grad(Var{&gr, ib})) gr.accumulate(ib, map_values(og, [](double v) { return -v; }));
    });
}

Var mul(Var a, Var b) {
    same_graph(a, b);
    require_same_shape("mul", a.value(), b.value());
    Tensor out = a.value();
    auto ov = out.values();
    auto bv = b.value().values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] *= bv[i];
    const std::size_t ia = a.id, ib = b.id;
    return graph_of(a).record(OpKind::Mul, std::move(out), {ia, ib}, [ia, ib](Graph& gr, const Tensor&, const Tensor& og) {
        const auto av = gr.value(Var{&gr, ia}).values();
        const auto bv2 = gr.value(Var{&gr, ib}).values();
        if (gr.requires_grad(Var{&gr, ia})) {
            Tensor ga = og;
            for (std::size_t i = 0; i < bv2.size(); ++i) ga[i] *= bv2[i];
            gr.accumulate(ia, std::move(ga));
        }
        if (gr.requires_grad(Var{&gr, ib})) {
            Tensor gb = og;
            for (std::size_t i = 0; i < av.size(); ++i) gb[i] *= av[i];
            gr.accumulate(ib, std::move(gb));
        }
    });
}

Var scale(Var a, double s) {
    const std::size_t ia = a.id;
    return graph_of(a).record(OpKind::Scale, map_values(a.value(), [s](double v) { return v * s; }), {ia},
                              [ia, s](Graph& gr, const Tensor&, const Tensor& og) {
                                  gr.accumulate(ia, map_values(og, [s](double v) { return v * s; }));
                              });
}

Var shift(Var a, double s) {
    const std::size_t ia = a.id;
    return graph_of(a).record(OpKind::Shift, map_values(a.value(), [s](double v) { return v + s; }), {ia},
                              [ia](Graph& gr, const Tensor&, const Tensor& og) { gr.accumulate(ia, og); });
}

Var exp(Var a) {
    return unary(OpKind::Exp, a, map_values(a.value(), [](double v) { return std::exp(v); }),
                 [](double, double y) { return y; });
}

Var log(Var a) {
    for (std::size_t i = 0; i < a.value().size(); ++i) {
        if (a.value()[i] <= 0.0) throw NumericError("log: non-positive input at flat index " + std::to_string(i));
    }
    return unary(OpKind::Log, a, map_values(a.value(), [](double v) { return std::log(v); }),
                 [](double x, double) { return 1.0 / x; });
}

Var softplus(Var a) {
    return unary(
        OpKind::Softplus, a,
        map_values(a.value(), [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }),
        [](double x, double) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        });
}

Var gelu(Var a) {
    return unary(
        OpKind::Gelu, a,
        map_values(a.value(),
                   [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }),
        [](double x, double) {
            const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
        });
}

Var row_softmax(Var a) {
    require_matrix(a.value(), "row_softmax");
    Tensor out = a.value();
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row_span(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (double& v : row) {
            v = std::exp(v - mx);
            total += v;
        }
        for (double& v : row) v /= total;
    }
    const std::size_t ia = a.id;
    return graph_of(a).record(OpKind::RowSoftmax, std::move(out), {ia}, [ia](Graph& gr, const Tensor& y, const Tensor& og) {
        Tensor gx = og;
        for (std::size_t r = 0; r < y.rows(); ++r) {
            auto yr = y.row_span(r);
            auto gr_row = gx.row_span(r);
            double dot = 0.0;
            for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * gr_row[c];
            for (std::size_t c = 0; c < yr.size(); ++c) gr_row[c] = yr[c] * (gr_row[c] - dot);
        }
        gr.accumulate(ia, std::move(gx));
    });
}

Var row_logsumexp(Var a) {
    require_matrix(a.value(), "row_logsumexp");
    const Tensor& x = a.value();
    Tensor out = Tensor::zeros({x.rows(), 1});
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = x.row_span(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (double v : row) total += std::exp(v - mx);
        out(r, 0) = mx + std::log(total);
    }
    const std::size_t ia = a.id;
    return graph_of(a).record(OpKind::RowLogSumExp, std::move(out), {ia}, [ia](Graph& gr, const Tensor& y, const Tensor& og) {
        const Tensor& xv = gr.value(Var{&gr, ia});
        Tensor gx = Tensor::zeros(xv.shape());
        for (std::size_t r = 0; r < xv.rows(); ++r) {
            for (std::size_t c = 0; c < xv.cols(); ++c) gx(r, c) = og(r, 0) * std::exp(xv(r, c) - y(r, 0));
        }
        gr.accumulate(ia, std::move(gx));
    });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    same_graph(x, gamma);
    same_graph(x, beta);
    require_matrix(x.value(), "layer_norm");
    const std::size_t d = x.cols();
    if (gamma.shape() != Shape{1, d} || beta.shape() != Shape{1, d}) {
        throw ShapeError("layer_norm: gain " + shape_string(gamma.shape()) + " / bias " +
                         shape_string(beta.shape()) + " for input " + shape_string(x.shape()));
    }
    const Tensor& xv = x.value();
    const auto gv = gamma.value().values();
    const auto bv = beta.value().values();
    Tensor out = Tensor::zeros(xv.shape());
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        auto row = xv.row_span(r);
        double mu = 0.0;
        for (double v : row) mu += v;
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (double v : row) var += (v - mu) * (v - mu);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < d; ++c) out(r, c) = (row[c] - mu) * inv * gv[c] + bv[c];
    }
    const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
    return graph_of(x).record(
        OpKind::LayerNorm, std::move(out), {ix, ig, ib}, [ix, ig, ib, eps](Graph& gr, const Tensor&, const Tensor& og) {
            const Tensor& xin = gr.value(Var{&gr, ix});
            const auto gam = gr.value(Var{&gr, ig}).values();
            const std::size_t n = xin.rows(), dd = xin.cols();
            Tensor gx = Tensor::zeros(xin.shape());
            Tensor gg = Tensor::zeros({1, dd});
            Tensor gb = Tensor::zeros({1, dd});
            std::vector<double> xhat(dd), dxhat(dd);
            for (std::size_t r = 0; r < n; ++r) {
                auto row = xin.row_span(r);
                double mu = 0.0;
                for (double v : row) mu += v;
                mu /= static_cast<double>(dd);
                double var = 0.0;
                for (double v : row) var += (v - mu) * (v - mu);
                var /= static_cast<double>(dd);
                const double inv = 1.0 / std::sqrt(var + eps);
                double mean_d = 0.0, mean_dx = 0.0;
                for (std::size_t c = 0; c < dd; ++c) {
                    xhat[c] = (row[c] - mu) * inv;
                    dxhat[c] = og(r, c) * gam[c];
                    gg[c] += og(r, c) * xhat[c];
                    gb[c] += og(r, c);
                    mean_d += dxhat[c];
                    mean_dx += dxhat[c] * xhat[c];
                }
                mean_d /= static_cast<double>(dd);
                mean_dx /= static_cast<double>(dd);
                for (std::size_t c = 0; c < dd; ++c) gx(r, c) = inv * (dxhat[c] - mean_d - xhat[c] * mean_dx);
            }
            gr.accumulate(ix, std::move(gx));
            gr.accumulate(ig, std::move(gg));
            gr.accumulate(ib, std::move(gb));
        });
}

Var l2_normalize_rows(Var a) {
    Tensor out = kernels::l2_normalize_rows(a.value());
    const std::size_t ia = a.id;
    return graph_of(a).record(OpKind::L2Normalize, std::move(out), {ia}, [ia](Graph& gr, const Tensor& y, const Tensor& og) {
        const Tensor& x = gr.value(Var{&gr, ia});
        Tensor gx = Tensor::zeros(x.shape());
        for (std::size_t r = 0; r < x.rows(); ++r) {
            auto xr = x.row_span(r);
            auto yr = y.row_span(r);
            auto gr_row = og.row_span(r);
            double sq = 0.0, dot = 0.0;
            for (std::size_t c = 0; c < xr.size(); ++c) {
                sq += xr[c] * xr[c];
                dot += gr_row[c] * yr[c];
            }
            const double inv = 1.0 / std::sqrt(sq);
            for (std::size_t c = 0; c < xr.size(); ++c) gx(r, c) = (gr_row[c] - yr[c] * dot) * inv;
        }
        gr.accumulate(ia, std::move(gx));
    });
}

Var embedding(Var table, std::span<const int> ids) {
    require_matrix(table.value(), "embedding");
    const Tensor& t = table.value();
    const std::size_t d = t.cols();
    Tensor out = Tensor::zeros({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= t.rows()) {
            throw DomainError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(t.rows()) + " rows");
        }
        auto src = t.row_span(static_cast<std::size_t>(ids[i]));
        std::copy(src.begin(), src.end(), out.row_span(i).begin());
    }
    const std::size_t it = table.id;
    std::vector<int> idv(ids.begin(), ids.end());
    return graph_of(table).record(OpKind::Embedding, std::move(out), {it},
                                  [it, idv = std::move(idv)](Graph& gr, const Tensor&, const Tensor& og) {
                                      Tensor gt = Tensor::zeros(gr.value(Var{&gr, it}).shape());
                                      for (std::size_t i = 0; i < idv.size(); ++i) {
                                          auto dst = gt.row_span(static_cast<std::size_t>(idv[i]));
                                          auto src = og.row_span(i);
                                          for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
                                      }
                                      gr.accumulate(it, std::move(gt));
                                  });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t d = parts[0].cols();
    std::size_t n = 0;
    std::vector<std::size_t> ids;
    for (const Var& p : parts) {
        same_graph(parts[0], p);
        if (p.cols() != d) {
            throw ShapeError("concat_rows: width " + shape_string(p.shape()) + " vs " + shape_string(parts[0].shape()));
        }
        n += p.rows();
        ids.push_back(p.id);
    }
    std::vector<double> values;
    values.reserve(n * d);
    for (const Var& p : parts) values.insert(values.end(), p.value().values().begin(), p.value().values().end());
    return graph_of(parts[0]).record(OpKind::ConcatRows, Tensor({n, d}, std::move(values)), ids,
                                     [ids](Graph& gr, const Tensor&, const Tensor& og) {
                                         std::size_t offset = 0;
                                         for (auto id : ids) {
                                             const Tensor& v = gr.value(Var{&gr, id});
                                             const std::size_t count = v.size();
                                             if (gr.requires_grad(Var{&gr, id})) {
                                                 auto src = og.values().subspan(offset, count);
                                                 gr.accumulate(id, Tensor(v.shape(), std::vector<double>(src.begin(), src.end())));
                                             }
                                             offset += count;
                                         }
                                     });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t n = parts[0].rows();
    std::size_t d = 0;
    std::vector<std::size_t> ids;
    for (const Var& p : parts) {
        same_graph(parts[0], p);
        if (p.rows() != n) {
            throw ShapeError("concat_cols: height " + shape_string(p.shape()) + " vs " + shape_string(parts[0].shape()));
        }
        d += p.cols();
        ids.push_back(p.id);
    }
    Tensor out = Tensor::zeros({n, d});
    std::size_t offset = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < v.cols(); ++c) out(r, offset + c) = v(r, c);
        offset += v.cols();
    }
    return graph_of(parts[0]).record(OpKind::ConcatCols, std::move(out), ids, [ids](Graph& gr, const Tensor&, const Tensor& og) {
        std::size_t off = 0;
        for (auto id : ids) {
            const Tensor& v = gr.value(Var{&gr, id});
            if (gr.requires_grad(Var{&gr, id})) {
                Tensor gp = Tensor::zeros(v.shape());
                for (std::size_t r = 0; r < v.rows(); ++r)
                    for (std::size_t c = 0; c < v.cols(); ++c) gp(r, c) = og(r, off + c);
                gr.accumulate(id, std::move(gp));
            }
            off += v.cols();
        }
    });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
    require_matrix(a.value(), "slice_cols");
    if (start + count > a.cols() || count == 0) {
        throw ShapeError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") outside " + shape_string(a.shape()));
    }
    const Tensor& x = a.value();
    Tensor out = Tensor::zeros({x.rows(), count});
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) out(r, c) = x(r, start + c);
    const std::size_t ia = a.id;
    return graph_of(a).record(OpKind::SliceCols, std::move(out), {ia}, [ia, start, count](Graph& gr, const Tensor&, const Tensor& og) {
        Tensor gx = Tensor::zeros(gr.value(Var{&gr, ia}).shape());
        for (std::size_t r = 0; r < og.rows(); ++r)
            for (std::size_t c = 0; c < count; ++c) gx(r, start + c) = og(r, c);
        gr.accumulate(ia, std::move(gx));
    });
}

Var mean_rows(Var a) {
    require_matrix(a.value(), "mean_rows");
    const Tensor& x = a.value();
    if (x.rows() == 0) throw ShapeError("mean_rows: empty input");
    Tensor out = Tensor::zeros({1, x.cols()});
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x(r, c);
    const double inv = 1.0 / static_cast<double>(x.rows());
    for (double& v : out.values()) v *= inv;
    const std::size_t ia = a.id;
    return graph_of(a).record(OpKind::MeanRows, std::move(out), {ia}, [ia, inv](Graph& gr, const Tensor&, const Tensor& og) {
        Tensor gx = Tensor::zeros(gr.value(Var{&gr, ia}).shape());
        for (std::size_t r = 0; r < gx.rows(); ++r)
            for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) = og[c] * inv;
        gr.accumulate(ia, std::move(gx));
    });
}

Var select_rows(Var a, std::span<const std::size_t> rows) {
    require_matrix(a.value(), "select_rows");
    const Tensor& x = a.value();
    if (rows.empty()) throw ShapeError("select_rows: empty selection");
    Tensor out = Tensor::zeros({rows.size(), x.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= x.rows()) {
            throw ShapeError("select_rows: row " + std::to_string(rows[i]) + " outside " + shape_string(x.shape()));
        }
        auto src = x.row_span(rows[i]);
        std::copy(src.begin(), src.end(), out.row_span(i).begin());
    }
    const std::size_t ia = a.id;
    std::vector<std::size_t> sel(rows.begin(), rows.end());
    return graph_of(a).record(OpKind::SelectRows, std::move(out), {ia}, [ia, sel = std::move(sel)](Graph& gr, const Tensor&, const Tensor& og) {
        Tensor gx = Tensor::zeros(gr.value(Var{&gr, ia}).shape());
        for (std::size_t i = 0; i < sel.size(); ++i) {
            auto dst = gx.row_span(sel[i]);
            auto src = og.row_span(i);
            for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
        }
        gr.accumulate(ia, std::move(gx));
    });
}

Var select_elements(Var a, std::span<const std::pair<std::size_t, std::size_t>> at) {
    require_matrix(a.value(), "select_elements");
    const Tensor& x = a.value();
    if (at.empty()) throw ShapeError("select_elements: empty selection");
    Tensor out = Tensor::zeros({1, at.size()});
    for (std::size_t i = 0; i < at.size(); ++i) {
        if (at[i].first >= x.rows() || at[i].second >= x.cols()) {
            throw ShapeError("select_elements: (" + std::to_string(at[i].first) + ", " + std::to_string(at[i].second) +
                             ") outside " + shape_string(x.shape()));
        }
        out[i] = x(at[i].first, at[i].second);
    }
    const std::size_t ia = a.id;
    std::vector<std::pair<std::size_t, std::size_t>> sel(at.begin(), at.end());
    return graph_of(a).record(OpKind::SelectElements, std::move(out), {ia},
                              [ia, sel = std::move(sel)](Graph& gr, const Tensor&, const Tensor& og) {
                                  Tensor gx = Tensor::zeros(gr.value(Var{&gr, ia}).shape());
                                  for (std::size_t i = 0; i < sel.size(); ++i) gx(sel[i].first, sel[i].second) += og[i];
                                  gr.accumulate(ia, std::move(gx));
                              });
}

Var transpose(Var a) {
    const std::size_t ia = a.id;
    return graph_of(a).record(OpKind::Transpose, kernels::transpose(a.value()), {ia},
                              [ia](Graph& gr, const Tensor&, const Tensor& og) { gr.accumulate(ia, kernels::transpose(og)); });
}

Var sum(Var a) {
    double total = 0.0;
    for (double v : a.value().values()) total += v;
    const std::size_t ia = a.id;
    return graph_of(a).record(OpKind::Sum, Tensor::scalar(total), {ia}, [ia](Graph& gr, const Tensor&, const Tensor& og) {
        gr.accumulate(ia, Tensor::filled(gr.value(Var{&gr, ia}).shape(), og.item()));
    });
}

Var mean(Var a) {
    if (a.value().empty()) throw ShapeError("mean: empty input");
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var stop_gradient(Var a) {
    return graph_of(a).record(OpKind::StopGradient, a.value(), {a.id}, nullptr);
}

Var cosine_similarity(Var a, Var b) {
    same_graph(a, b);
    require_matrix(a.value(), "cosine_similarity");
    require_matrix(b.value(), "cosine_similarity");
    if (a.cols() != b.cols()) {
        throw ShapeError("cosine_similarity: feature width " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    return matmul(l2_normalize_rows(a), transpose(l2_normalize_rows(b)));
}

Var multi_head_attention(Var queries, Var keys, Var values, std::size_t heads) {
    same_graph(queries, keys);
    same_graph(queries, values);
    const std::size_t d = queries.cols();
    if (heads == 0 || d % heads != 0) {
        throw ShapeError("multi_head_attention: width " + std::to_string(d) + " not divisible into " +
                         std::to_string(heads) + " heads");
    }
    if (keys.cols() != d || values.cols() != d || keys.rows() != values.rows()) {
        throw ShapeError("multi_head_attention: queries " + shape_string(queries.shape()) + ", keys " +
                         shape_string(keys.shape()) + ", values " + shape_string(values.shape()));
    }
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Var qh = heads == 1 ? queries : slice_cols(queries, h * dh, dh);
        Var kh = heads == 1 ? keys : slice_cols(keys, h * dh, dh);
        Var vh = heads == 1 ? values : slice_cols(values, h * dh, dh);
        Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
        outs.push_back(matmul(row_softmax(scores), vh));
    }
    return heads == 1 ? outs[0] : concat_cols(outs);
}

}  // namespace ops

}  // namespace mmref
