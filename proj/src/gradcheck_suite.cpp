#include "mmref/gradcheck_suite.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>

#include "mmref/encoders.hpp"
#include "mmref/losses.hpp"
#include "mmref/nn.hpp"
#include "mmref/reference.hpp"
#include "mmref/rng.hpp"

namespace mmref {
namespace {

// Small step: the contrastive terms have temperatures up to 40, and the
// truncation error of a central difference grows with their third derivative.
constexpr double kStep = 1e-5;

Tensor random(Shape shape, std::uint64_t seed, std::uint64_t trial, double scale = 1.0) {
    Rng rng(derive_seed(seed, trial));
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.values()) v = scale * rng.normal();
    return t;
}

Tensor positive(Shape shape, std::uint64_t seed, std::uint64_t trial) {
    Rng rng(derive_seed(seed, trial));
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.values()) v = 0.5 + rng.uniform();
    return t;
}

/// Contracts a matrix with fixed random weights so every output entry gets a distinct cotangent.
Var project(Var out, std::uint64_t seed, std::uint64_t trial) {
    Graph& g = *out.graph;
    return ops::sum(ops::mul(out, g.constant(random(out.shape(), seed, trial))));
}

using PointFn = std::function<std::vector<Tensor>(std::uint64_t)>;

GradCheckItem op_item(const std::string& name, PointFn point, std::function<Var(std::span<const Var>)> f,
                      std::uint64_t seed) {
    return {"op " + name, [point = std::move(point), f = std::move(f), seed](std::uint64_t t) {
                return finite_difference_check(
                    [&](Graph&, std::span<const Var> x) { return project(f(x), seed, t); }, point(t), kStep);
            }};
}

const std::vector<int> kLabels = {3, 5, 3, 8};

/// Reports the largest |gradient| reaching `target` through a stop-gradient edge.
GradCheckResult zero_gradient(const std::string& what, const std::function<Var(Graph&)>& build,
                              const std::function<Var(Graph&)>& target_of) {
    Graph g;
    Var loss = build(g);
    g.backward(loss);
    const Tensor grad = g.grad(target_of(g));
    GradCheckResult r;
    r.worst_input = what;
    r.coordinates_checked = grad.size();
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (std::abs(grad[i]) > r.max_relative_error) {
            r.max_relative_error = std::abs(grad[i]);
            r.worst_index = i;
        }
    }
    return r;
}

}  // namespace

bool GradCheckReport::passed() const {
    for (const auto& l : lines) {
        if (!l.passed) return false;
    }
    return !lines.empty();
}

std::vector<GradCheckItem> default_gradcheck_items() {
    std::vector<GradCheckItem> items;
    auto a = [](std::uint64_t t) { return random({3, 4}, 1, t); };
    auto b = [](std::uint64_t t) { return random({3, 4}, 2, t); };
    auto bias = [](std::uint64_t t) { return random({1, 4}, 4, t); };

    items.push_back(op_item("matmul", [=](auto t) { return std::vector{a(t), random({4, 5}, 3, t)}; },
                            [](auto x) { return ops::matmul(x[0], x[1]); }, 10));
    items.push_back(op_item("add", [=](auto t) { return std::vector{a(t), b(t)}; },
                            [](auto x) { return ops::add(x[0], x[1]); }, 11));
    items.push_back(op_item("add_row", [=](auto t) { return std::vector{a(t), bias(t)}; },
                            [](auto x) { return ops::add_row(x[0], x[1]); }, 12));
    items.push_back(op_item("sub", [=](auto t) { return std::vector{a(t), b(t)}; },
                            [](auto x) { return ops::sub(x[0], x[1]); }, 13));
    items.push_back(op_item("mul", [=](auto t) { return std::vector{a(t), b(t)}; },
                            [](auto x) { return ops::mul(x[0], x[1]); }, 14));
    items.push_back(op_item("scale", [=](auto t) { return std::vector{a(t)}; },
                            [](auto x) { return ops::scale(x[0], -1.7); }, 15));
    items.push_back(op_item("shift", [=](auto t) { return std::vector{a(t)}; },
                            [](auto x) { return ops::mul(ops::shift(x[0], 0.3), x[0]); }, 16));
    items.push_back(op_item("exp", [=](auto t) { return std::vector{a(t)}; }, [](auto x) { return ops::exp(x[0]); }, 17));
    items.push_back(op_item("log", [](auto t) { return std::vector{positive({3, 4}, 5, t)}; },
                            [](auto x) { return ops::log(x[0]); }, 18));
    items.push_back(op_item("softplus", [](auto t) { return std::vector{random({3, 4}, 6, t, 4.0)}; },
                            [](auto x) { return ops::softplus(x[0]); }, 19));
    items.push_back(op_item("gelu", [](auto t) { return std::vector{random({3, 4}, 7, t, 2.0)}; },
                            [](auto x) { return ops::gelu(x[0]); }, 20));
    items.push_back(op_item("row_softmax", [=](auto t) { return std::vector{a(t)}; },
                            [](auto x) { return ops::row_softmax(x[0]); }, 21));
    items.push_back(op_item("row_logsumexp", [=](auto t) { return std::vector{a(t)}; },
                            [](auto x) { return ops::row_logsumexp(x[0]); }, 22));
    items.push_back(op_item("layer_norm", [=](auto t) { return std::vector{a(t), positive({1, 4}, 8, t), bias(t)}; },
                            [](auto x) { return ops::layer_norm(x[0], x[1], x[2]); }, 23));
    items.push_back(op_item("l2_normalize_rows", [=](auto t) { return std::vector{a(t)}; },
                            [](auto x) { return ops::l2_normalize_rows(x[0]); }, 24));
    items.push_back(op_item("embedding", [](auto t) { return std::vector{random({6, 4}, 9, t)}; }, [](auto x) {
        const int ids[] = {2, 0, 2, 5};
        return ops::embedding(x[0], ids);
    }, 25));
    items.push_back(op_item("concat_rows", [=](auto t) { return std::vector{a(t), random({2, 4}, 26, t)}; },
                            [](auto x) { return ops::concat_rows(x); }, 27));
    items.push_back(op_item("concat_cols", [=](auto t) { return std::vector{a(t), random({3, 2}, 28, t)}; },
                            [](auto x) { return ops::concat_cols(x); }, 29));
    items.push_back(op_item("slice_cols", [=](auto t) { return std::vector{a(t)}; },
                            [](auto x) { return ops::slice_cols(x[0], 1, 2); }, 30));
    items.push_back(op_item("mean_rows", [=](auto t) { return std::vector{a(t)}; },
                            [](auto x) { return ops::mean_rows(x[0]); }, 31));
    items.push_back(op_item("select_rows", [=](auto t) { return std::vector{a(t)}; }, [](auto x) {
        const std::size_t rows[] = {2, 2, 0};
        return ops::select_rows(x[0], rows);
    }, 32));
    items.push_back(op_item("select_elements", [=](auto t) { return std::vector{a(t)}; }, [](auto x) {
        const std::pair<std::size_t, std::size_t> at[] = {{0, 1}, {2, 3}, {0, 1}};
        return ops::select_elements(x[0], at);
    }, 33));
    items.push_back(op_item("transpose", [=](auto t) { return std::vector{a(t)}; },
                            [](auto x) { return ops::transpose(x[0]); }, 34));
    items.push_back(op_item("sum", [=](auto t) { return std::vector{a(t)}; },
                            [](auto x) { return ops::mul(ops::sum(x[0]), ops::sum(x[0])); }, 35));
    items.push_back(op_item("mean", [=](auto t) { return std::vector{a(t)}; },
                            [](auto x) { return ops::mul(ops::mean(x[0]), ops::mean(x[0])); }, 36));
    items.push_back(op_item("cosine_similarity", [=](auto t) { return std::vector{a(t), random({5, 4}, 37, t)}; },
                            [](auto x) { return ops::cosine_similarity(x[0], x[1]); }, 38));
    items.push_back(op_item("multi_head_attention",
                            [](auto t) {
                                return std::vector{random({3, 4}, 39, t), random({5, 4}, 40, t), random({5, 4}, 41, t)};
                            },
                            [](auto x) { return ops::multi_head_attention(x[0], x[1], x[2], 2); }, 42));

    const LossConfig cfg;
    items.push_back({"loss contrastive", [cfg](std::uint64_t t) {
        const std::vector<int> rows = {1, 2, 1}, cols = {2, 1, 3, 1};
        return finite_difference_check(
            [&](Graph&, std::span<const Var> x) {
                return contrastive_loss(ops::cosine_similarity(x[0], x[1]), partition_by_label(rows, cols), cfg);
            },
            std::vector<Tensor>{random({3, 4}, 50, t), random({4, 4}, 51, t)}, kStep);
    }});
    items.push_back({"loss align", [cfg](std::uint64_t t) {
        return finite_difference_check(
            [&](Graph&, std::span<const Var> x) {
                return align_loss(ops::l2_normalize_rows(x[0]), ops::l2_normalize_rows(x[1]), kLabels, cfg);
            },
            std::vector<Tensor>{random({4, 5}, 52, t), random({4, 5}, 53, t)}, kStep);
    }});

    // Bank-side losses share a small bank over identities {3, 5, 8, 9}, redrawn per trial.
    auto bank = std::make_shared<ReferenceBank>(std::vector<int>{3, 5, 8, 9}, 5, 54);
    auto bank_at = [bank](std::uint64_t t) -> ReferenceBank& {
        bank->assign(random({4, 5}, 55, t));
        return *bank;
    };
    auto reps = [](std::uint64_t t) { return random({4, 5}, 56, t); };
    items.push_back({"loss fuse (bank)", [cfg, bank_at, reps](std::uint64_t t) {
        ReferenceBank& bk = bank_at(t);
        const Tensor r = reps(t);
        return parameter_gradient_check([&](Graph& g) { return fuse_loss(bk, g.constant(r), kLabels, cfg); },
                                        {&bk.parameter()}, kStep);
    }});
    items.push_back({"loss guide (features)", [cfg, bank_at, reps](std::uint64_t t) {
        ReferenceBank& bk = bank_at(t);
        return finite_difference_check(
            [&](Graph&, std::span<const Var> x) { return guide_loss(bk, x[0], kLabels, cfg); },
            std::vector<Tensor>{reps(t)}, kStep);
    }});
    items.push_back({"loss fuse batch-scope negatives", [cfg, bank_at, reps](std::uint64_t t) {
        LossConfig narrow = cfg;
        narrow.negatives = NegativeScope::Batch;
        ReferenceBank& bk = bank_at(t);
        const Tensor r = reps(t);
        return parameter_gradient_check([&](Graph& g) { return fuse_loss(bk, g.constant(r), kLabels, narrow); },
                                        {&bk.parameter()}, kStep);
    }});
    items.push_back({"stop-gradient fuse -> features", [cfg, bank_at, reps](std::uint64_t t) {
        ReferenceBank& bk = bank_at(t);
        const Tensor r = reps(t);
        std::optional<Var> leaf;
        return zero_gradient("features",
                             [&](Graph& g) {
                                 leaf = g.leaf(r);
                                 return fuse_loss(bk, *leaf, kLabels, cfg);
                             },
                             [&](Graph&) { return *leaf; });
    }, 0.0});
    items.push_back({"stop-gradient guide -> bank", [cfg, bank_at, reps](std::uint64_t t) {
        ReferenceBank& bk = bank_at(t);
        const Tensor r = reps(t);
        return zero_gradient("bank", [&](Graph& g) { return guide_loss(bk, g.leaf(r), kLabels, cfg); },
                             [&](Graph& g) { return g.parameter(bk.parameter()); });
    }, 0.0});
    items.push_back({"loss rec (probabilities)", [](std::uint64_t t) {
        const int targets[] = {1, 4, 0};
        return finite_difference_check(
            [&](Graph&, std::span<const Var> x) { return rec_loss(ops::row_softmax(x[0]), targets); },
            std::vector<Tensor>{random({3, 6}, 57, t)}, kStep);
    }});
    items.push_back({"loss rec (logits)", [](std::uint64_t t) {
        const int targets[] = {2, 2, 5};
        return finite_difference_check(
            [&](Graph&, std::span<const Var> x) { return rec_loss_from_logits(x[0], targets); },
            std::vector<Tensor>{random({3, 6}, 58, t, 3.0)}, kStep);
    }});
    items.push_back({"loss total", [cfg](std::uint64_t t) {
        return finite_difference_check(
            [&](Graph& g, std::span<const Var> x) {
                LossParts parts{ops::mean(ops::exp(x[0])), ops::sum(ops::mul(x[0], x[0])), ops::sum(x[0]),
                                ops::mean(ops::softplus(x[0]))};
                return total_loss(g, parts, cfg);
            },
            std::vector<Tensor>{random({2, 3}, 59, t)}, kStep);
    }});

    // Modules: fixed weights, fresh inputs and probe coordinates per trial.
    EncoderConfig enc{8, 12, 8, 1, 2, 10};
    Rng rng60(60), rng63(63), rng67(67), rng73(73);
    auto text = std::make_shared<TextEncoder>(enc, rng60);
    items.push_back({"module text encoder", [text](std::uint64_t t) {
        ParameterList params;
        text->collect(params);
        Rng rng(derive_seed(61, t));
        std::vector<std::vector<int>> seqs;
        for (std::size_t len : {4u, 6u}) {
            std::vector<int> s = {tokens::kBos};
            for (std::size_t i = 2; i < len; ++i) s.push_back(4 + static_cast<int>(rng.index(8)));
            s.push_back(tokens::kEos);
            seqs.push_back(std::move(s));
        }
        return parameter_gradient_check(
            [&](Graph& g) { return project(text->encode_batch(g, seqs), 61, t); }, params, kStep, 4,
            derive_seed(62, t));
    }});
    auto image = std::make_shared<ImageEncoder>(enc, rng63);
    items.push_back({"module image encoder", [image](std::uint64_t t) {
        ParameterList params;
        image->collect(params);
        const Tensor raw = random({3, 10}, 64, t);
        return parameter_gradient_check([&](Graph& g) { return project(image->encode(g, raw), 65, t); }, params,
                                        kStep, 4, derive_seed(66, t));
    }});
    auto rec = std::make_shared<LocalReconstruction>(ReconstructionConfig{8, 12, 2, 2}, rng67);
    items.push_back({"module local reconstruction", [rec](std::uint64_t t) {
        ParameterList params;
        rec->collect(params);
        const Tensor q = random({5, 8}, 68, t), r = random({1, 8}, 69, t);
        const std::size_t positions[] = {1, 3};
        const int targets[] = {4, 9};
        return parameter_gradient_check(
            [&](Graph& g) {
                auto out = rec->forward(g, g.constant(q), g.constant(r), positions);
                return rec_loss_from_logits(out.logits, targets);
            },
            params, kStep, 4, derive_seed(70, t));
    }});
    items.push_back({"module reconstruction inputs", [rec](std::uint64_t t) {
        const std::size_t positions[] = {0, 2};
        const int targets[] = {1, 7};
        return finite_difference_check(
            [&](Graph& g, std::span<const Var> x) {
                return rec_loss_from_logits(rec->forward(g, x[0], x[1], positions).logits, targets);
            },
            std::vector<Tensor>{random({4, 8}, 71, t), random({1, 8}, 72, t)}, kStep);
    }});
    auto block = std::make_shared<nn::AttentionBlock>("block", 8, 2, rng73);
    items.push_back({"module attention block", [block](std::uint64_t t) {
        return finite_difference_check(
            [&](Graph& g, std::span<const Var> x) { return project(block->forward(g, x[0], x[1], x[1]), 74, t); },
            std::vector<Tensor>{random({3, 8}, 75, t), random({4, 8}, 76, t)}, kStep);
    }});
    return items;
}

GradCheckReport run_gradchecks(std::span<const GradCheckItem> items, std::size_t trials) {
    if (trials == 0) throw DomainError("run_gradchecks: need at least one trial");
    GradCheckReport report;
    const auto start = std::chrono::steady_clock::now();
    for (const GradCheckItem& item : items) {
        GradCheckLine line{item.name, 0.0, item.tolerance, 0, 0, false};
        try {
            for (std::uint64_t t = 0; t < trials; ++t) {
                const GradCheckResult r = item.run(t);
                if (!(r.max_relative_error <= line.error)) line.error = r.max_relative_error;
                line.coordinates += r.coordinates_checked;
                ++line.trials;
            }
            line.passed = line.coordinates > 0 && std::isfinite(line.error) &&
                          (item.tolerance == 0.0 ? line.error == 0.0 : line.error < item.tolerance);
        } catch (const std::exception&) {
            line.error = std::numeric_limits<double>::infinity();
        }
        report.lines.push_back(line);
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

std::string format_gradcheck(const GradCheckReport& report) {
    std::ostringstream out;
    for (const auto& l : report.lines) {
        out << (l.passed ? "PASS " : "FAIL ") << std::left << std::setw(36) << l.name << std::right
            << std::scientific << std::setprecision(3) << l.error << "  (tol " << l.tolerance << ", "
            << l.coordinates << " coords, " << l.trials << " trials)\n";
    }
    out << std::defaultfloat << (report.passed() ? "all passed" : "FAILURES") << " in " << std::fixed
        << std::setprecision(2) << report.seconds << " s\n";
    return out.str();
}

}  // namespace mmref
