// Acceptance run: one PASS/FAIL line per criterion, tolerances fixed below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>

#include "metric_oracles.hpp"
#include "mmref/gradcheck_suite.hpp"
#include "mmref/losses.hpp"
#include "mmref/trainer.hpp"

using namespace mmref;
namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr std::size_t kGradTrials = 20;
constexpr double kGradSeconds = 60.0;
constexpr double kAnchorTolerance = 1e-9;
constexpr double kRotationTolerance = 1e-9;
constexpr double kRefineOverhead = 0.10;
constexpr double kAblationMinutes = 15.0;
constexpr double kMMRefSlack = 0.5;
constexpr double kTotalGain = 2.0;
constexpr std::uint64_t kEvalMaskSeed = 777;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
    failures += pass ? 0 : 1;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << std::endl;
}

std::string fmt(double v, int precision = 3) {
    std::ostringstream out;
    out << std::setprecision(precision) << v;
    return out.str();
}

Tensor normal_tensor(Shape shape, Rng& rng) {
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.values()) v = rng.normal();
    return t;
}

Tensor orthonormal(std::size_t d, Rng& rng) {
    Tensor q = normal_tensor({d, d}, rng);
    for (std::size_t i = 0; i < d; ++i) {
        auto row = q.row_span(i);
        for (std::size_t j = 0; j < i; ++j) {
            auto prev = q.row_span(j);
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += row[c] * prev[c];
            for (std::size_t c = 0; c < d; ++c) row[c] -= dot * prev[c];
        }
        double n = 0.0;
        for (double v : row) n += v * v;
        for (double& v : row) v /= std::sqrt(n);
    }
    return q;
}

void gradient_suite() {
    const auto items = default_gradcheck_items();
    const GradCheckReport r = run_gradchecks(items, kGradTrials);
    double worst = 0.0;
    std::size_t trials = kGradTrials;
    for (const auto& l : r.lines) {
        if (l.tolerance > 0.0) worst = std::max(worst, l.error);
        trials = std::min(trials, l.trials);
    }
    bool tolerances = true;
    for (const GradCheckItem& item : items) tolerances &= item.tolerance == 0.0 || item.tolerance <= kGradTolerance;
    const bool pass = r.passed() && tolerances && trials >= kGradTrials && r.seconds < kGradSeconds;
    if (!pass) std::cout << format_gradcheck(r);
    report(1, pass,
           std::to_string(r.lines.size()) + " checks x " + std::to_string(trials) + " trials, worst rel err " +
               fmt(worst) + ", " + fmt(r.seconds) + " s");
}

void stop_gradients(const Corpus& corpus, const RunConfig& cfg) {
    Model model(cfg.encoder, corpus.identities(Split::Train), 5);
    ParameterList encoders = model.encoder_parameters();
    bool clean = true;
    for (std::uint64_t b = 0; b < 10; ++b) {
        const PairBatch batch = sample_batch(corpus, cfg.identities_per_batch, cfg.pairs_per_identity, 100 + b);
        std::vector<int> labels = batch.labels;
        labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
        for (bool fuse : {true, false}) {
            for (Parameter* p : model.parameters()) p->zero_grad();
            Graph g;
            const Var both[] = {model.text.encode_batch(g, batch.texts), model.image.encode(g, batch.images)};
            Var reps = ops::concat_rows(both);
            g.backward(fuse ? fuse_loss(model.bank, reps, labels, cfg.loss) : guide_loss(model.bank, reps, labels, cfg.loss));
            if (fuse) {
                for (Parameter* p : encoders) {
                    for (double v : p->grad.values()) clean &= v == 0.0;
                }
            } else {
                for (double v : model.bank.parameter().grad.values()) clean &= v == 0.0;
            }
        }
    }
    report(2, clean, "dL_fuse/d(encoders) and dL_guide/d(bank) exactly zero on 10 batches");
}

void loss_anchors() {
    const LossConfig cfg;
    const double ln2 = std::numbers::ln2;
    const double pos[] = {cfg.alpha}, neg[] = {cfg.beta};
    const double cl = contrastive_loss(pos, neg, cfg);

    ReferenceBank bank(std::vector<int>{0}, 4, 1);
    bank.assign(Tensor::row({1.0, 0.0, 0.0, 0.0}));
    const double s = std::sqrt(1.0 - cfg.alpha * cfg.alpha);
    const Tensor reps = Tensor::matrix({{cfg.alpha, s, 0.0, 0.0}, {cfg.alpha, 0.0, s, 0.0}});
    const int labels[] = {0, 0};
    Graph g;
    const double fuse = fuse_loss(bank, g.constant(reps), labels, cfg).value().item();
    const double guide = guide_loss(bank, g.constant(reps), labels, cfg).value().item();

    const std::size_t v = 10;
    const double rec = rec_loss_from_logits(g.constant(Tensor::zeros({3, v})), std::vector<int>{0, 4, 9}).value().item();

    const double e1 = std::abs(cl - 2 * ln2), e2 = std::max(std::abs(fuse - ln2), std::abs(guide - ln2));
    const double e3 = std::abs(rec - std::log(static_cast<double>(v)));
    report(3, e1 <= kAnchorTolerance && e2 <= kAnchorTolerance && e3 <= kAnchorTolerance,
           "errors " + fmt(e1) + ", " + fmt(e2) + ", " + fmt(e3));
}

void metric_oracles() {
    Rng rng(2024);
    bool exact = true;
    for (int trial = 0; trial < 20; ++trial) {
        const oracle::Instance in = oracle::random_instance(rng);
        for (std::size_t k : {1u, 5u, 10u}) exact &= rank_at_k(in.s, in.ql, in.gl, k) == oracle::oracle_recall(in.s, in.ql, in.gl, k);
        exact &= mean_average_precision(in.s, in.ql, in.gl) == oracle::oracle_map(in.s, in.ql, in.gl);
        const std::size_t n = 1 + rng.index(in.s.cols());
        exact &= ap_at_n(in.s, in.ql, in.gl, n) == oracle::oracle_ap_at_n(in.s, in.ql, in.gl, n);
    }
    report(4, exact, "R@K, mAP, AP@N equal brute force on 20 instances up to 50x50");
}

void refinement(const RunConfig& base) {
    RunConfig cfg = base;
    cfg.corpus.test_identities = 250;  // 1,000-item gallery
    const Corpus corpus = generate_corpus(cfg.corpus);
    Model model(cfg.encoder, corpus.identities(Split::Train), 9);
    std::span<const Pair> test = corpus.test;

    const Tensor t = encode_texts(model, test);
    const Tensor i = encode_images(model, test);
    std::vector<int> labels;
    for (const Pair& p : test) labels.push_back(p.identity);
    Rng rng(31);
    const Tensor q = orthonormal(cfg.encoder.d, rng);
    double gap = 0.0;
    for (bool transpose : {false, true}) {
        auto metrics = [&](const Tensor* bank) {
            Tensor s = retrieval_similarity(t, i, bank, cfg.loss.refine_weight);
            if (transpose) s = kernels::transpose(s);
            return evaluate_similarity(s, labels, labels, cfg.ap_n).metrics;
        };
        const auto plain = metrics(nullptr), refined = metrics(&q);
        for (const auto& [name, value] : plain) gap = std::max(gap, std::abs(refined.at(name) - value));
    }

    // End-to-end retrieval over the gallery with and without the refinement stage; best of 5.
    auto best_time = [&](bool refine) {
        double best = 1e300;
        for (int rep = 0; rep < 5; ++rep) {
            const auto start = Clock::now();
            run_retrieval(model, test, RetrievalOptions{Direction::TextToImage, refine, cfg.loss.refine_weight, cfg.ap_n});
            best = std::min(best, seconds_since(start));
        }
        return best;
    };
    const double plain = best_time(false), refined = best_time(true);
    const double overhead = (refined - plain) / plain;
    report(5, gap <= kRotationTolerance && overhead < kRefineOverhead,
           "orthonormal-bank metric gap " + fmt(gap) + "; overhead " + fmt(100 * overhead) + "% (" + fmt(plain) +
               " s -> " + fmt(refined) + " s, 1000-item gallery)");
}

void ablation_criteria(const RunConfig& cfg, const Corpus& corpus) {
    const std::uint64_t seeds[] = {0, 1, 2};
    std::vector<double> ppl_a, ppl_c;
    const auto start = Clock::now();
    const AblationReport r = ablate(cfg, corpus, seeds, &std::cerr, [&](AblationRow row, std::uint64_t, Trainer& t) {
        if (row == AblationRow::Baseline) return;
        const double ppl = masked_perplexity(t.model(), corpus.train, cfg.mask_ratio, kEvalMaskSeed);
        (row == AblationRow::A ? ppl_a : ppl_c).push_back(ppl);
    });
    const double minutes = seconds_since(start) / 60.0;
    std::cout << format_report(r);

    const double base = r.rows[0].mean(), a = r.rows[1].mean(), c = r.rows[3].mean(), full = r.rows[4].mean();
    const bool ordering = base < a && a <= c && full >= c - kMMRefSlack && full - base >= kTotalGain;
    report(6, ordering && minutes < kAblationMinutes,
           "R@1 Baseline " + fmt(base, 4) + ", A " + fmt(a, 4) + ", C " + fmt(c, 4) + ", MMRef " + fmt(full, 4) +
               ", gain " + fmt(full - base) + ", " + fmt(minutes) + " min");

    double w0 = 0, w3 = 0, w5 = 0;
    for (std::size_t k = 0; k < sweep_weights().size(); ++k) {
        if (sweep_weights()[k] == 0.0) w0 = r.sweep[k].mean();
        if (sweep_weights()[k] == 0.3) w3 = r.sweep[k].mean();
        if (sweep_weights()[k] == 0.5) w5 = r.sweep[k].mean();
    }
    report(7, w3 >= w0 && w5 >= w0, "R@1 w=0 " + fmt(w0, 4) + ", w=0.3 " + fmt(w3, 4) + ", w=0.5 " + fmt(w5, 4));

    // The lambda_rec = 0 run is row A: its reconstruction term contributes exactly zero gradient.
    const OverfitResult o = overfit_identity(cfg, corpus, 0, 500);
    auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    const double pa = mean(ppl_a), pc = mean(ppl_c);
    report(8, o.accuracy == 1.0 && pc < pa,
           "overfit accuracy " + fmt(o.accuracy) + " after 500 steps; masked perplexity lambda2=0.25 " + fmt(pc, 4) +
               " vs lambda2=0 " + fmt(pa, 4));
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void determinism() {
    const fs::path dir = fs::temp_directory_path() / "mmref_acceptance";
    const char* files[] = {"corpus.bin", "r/metrics.jsonl", "r/metrics.csv", "r/final.ckpt", "r/config.ini"};
    std::vector<std::vector<std::string>> runs;
    std::string detail;
    for (int run = 0; run < 2; ++run) {
        fs::remove_all(dir);
        fs::create_directories(dir);
        const std::string cli = MMREF_CLI;
        const std::string gen = cli + " generate-corpus --out " + (dir / "corpus.bin").string() + " > /dev/null";
        const std::string train = cli + " train --epochs 3 --eval-every 1 --seed 4 --corpus " +
                                  (dir / "corpus.bin").string() + " --output-dir " + dir.string() +
                                  " --run-id r > /dev/null";
        if (std::system(gen.c_str()) != 0 || std::system(train.c_str()) != 0) detail = " command failed";
        runs.emplace_back();
        for (const char* f : files) runs.back().push_back(slurp(dir / f));
    }
    fs::remove_all(dir);
    for (std::size_t k = 0; k < std::size(files); ++k) {
        if (runs[0][k].empty() || runs[0][k] != runs[1][k]) detail += std::string(" differs: ") + files[k];
    }
    report(9, detail.empty(),
           detail.empty() ? "generate-corpus and train reruns byte-identical (corpus, metrics, checkpoint, config)" : detail);
}

void masking_protocol() {
    Rng rng(10);
    std::size_t mismatches = 0;
    for (int n = 0; n < 10000; ++n) {
        std::vector<int> ids = {tokens::kBos};
        const std::size_t len = rng.index(30);
        for (std::size_t k = 0; k < len; ++k) ids.push_back(rng.bernoulli(0.1) ? tokens::kPad : 4 + static_cast<int>(rng.index(60)));
        ids.push_back(tokens::kEos);
        std::size_t maskable = 0;
        for (int t : ids) maskable += t >= 4;
        const std::size_t expected = maskable == 0 ? 0 : std::max<std::size_t>(1, static_cast<std::size_t>(std::round(0.15 * maskable)));
        mismatches += mask_tokens(ids, 0.15, rng.next_u64()).positions.size() != expected;
    }
    report(10, mismatches == 0, "10000 sequences, " + std::to_string(mismatches) + " count mismatches");
}

}  // namespace

int main() {
    try {
        const RunConfig cfg = desk_preset();
        const Corpus corpus = generate_corpus(cfg.corpus);
        gradient_suite();
        stop_gradients(corpus, cfg);
        loss_anchors();
        metric_oracles();
        refinement(cfg);
        ablation_criteria(cfg, corpus);
        determinism();
        masking_protocol();
    } catch (const std::exception& e) {
        std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
        return 2;
    }
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
