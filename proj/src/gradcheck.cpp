#include "mmref/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmref/rng.hpp"

namespace mmref {
namespace {

double checked_value(Var v) {
    const double x = v.value().item();
    if (!std::isfinite(x)) throw NumericError("finite difference: non-finite evaluation");
    return x;
}

void consider(GradCheckResult& result, double analytic, double numeric, const std::string& input, std::size_t index) {
    const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
    ++result.coordinates_checked;
    if (result.coordinates_checked == 1 || err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_input = input;
        result.worst_index = index;
    }
}

}  // namespace

GradCheckResult finite_difference_check(const LeafFunction& f, std::span<const Tensor> point, double step,
                                        std::span<const bool> live) {
    if (!(step > 0.0)) throw DomainError("finite difference: step must be > 0");
    if (!live.empty() && live.size() != point.size()) throw DomainError("finite difference: live mask size mismatch");

    auto evaluate = [&](std::span<const Tensor> at, bool with_grad, std::vector<Tensor>* grads) {
        Graph g;
        std::vector<Var> leaves;
        leaves.reserve(at.size());
        for (const Tensor& t : at) leaves.push_back(g.leaf(t));
        Var out = f(g, leaves);
        const double value = checked_value(out);
        if (with_grad) {
            g.backward(out);
            for (const Var& l : leaves) grads->push_back(g.grad(l));
        }
        return value;
    };

    std::vector<Tensor> analytic;
    evaluate(point, true, &analytic);

    GradCheckResult result;
    std::vector<Tensor> probe(point.begin(), point.end());
    for (std::size_t k = 0; k < probe.size(); ++k) {
        if (!live.empty() && !live[k]) continue;
        for (std::size_t i = 0; i < probe[k].size(); ++i) {
            const double original = probe[k][i];
            probe[k][i] = original + step;
            const double plus = evaluate(probe, false, nullptr);
            probe[k][i] = original - step;
            const double minus = evaluate(probe, false, nullptr);
            probe[k][i] = original;
            consider(result, analytic[k][i], (plus - minus) / (2.0 * step), "input " + std::to_string(k), i);
        }
    }
    return result;
}

GradCheckResult finite_difference_check(const std::function<Var(Graph&, Var)>& f, const Tensor& point, double step) {
    const Tensor points[] = {point};
    return finite_difference_check([&](Graph& g, std::span<const Var> leaves) { return f(g, leaves[0]); }, points, step);
}

GradCheckResult parameter_gradient_check(const std::function<Var(Graph&)>& build, const ParameterList& params,
                                         double step, std::size_t max_coords_per_param, std::uint64_t seed) {
    if (!(step > 0.0)) throw DomainError("finite difference: step must be > 0");
    for (Parameter* p : params) p->zero_grad();
    {
        Graph g;
        Var out = build(g);
        checked_value(out);
        g.backward(out);
    }
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) analytic.push_back(p->grad);

    auto evaluate = [&] {
        Graph g;
        g.set_grad_enabled(false);
        return checked_value(build(g));
    };

    GradCheckResult result;
    Rng rng(seed);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter& p = *params[k];
        std::vector<std::size_t> coords(p.value.size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (max_coords_per_param != 0 && coords.size() > max_coords_per_param) {
            rng.shuffle(std::span<std::size_t>(coords));
            coords.resize(max_coords_per_param);
        }
        for (std::size_t i : coords) {
            const double original = p.value[i];
            p.value[i] = original + step;
            const double plus = evaluate();
            p.value[i] = original - step;
            const double minus = evaluate();
            p.value[i] = original;
            consider(result, analytic[k][i], (plus - minus) / (2.0 * step), p.name, i);
        }
    }
    return result;
}

}  // namespace mmref
