#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "metric_oracles.hpp"
#include "mmref/eval.hpp"
#include "mmref/rng.hpp"

using namespace mmref;
using namespace oracle;

TEST(Ranking, DescendingWithIndexTieBreak) {
    const double scores[] = {0.2, 0.9, 0.2, 0.5};
    EXPECT_EQ(rank_gallery(scores), (std::vector<std::size_t>{1, 3, 0, 2}));
}

TEST(Metrics, PerfectAndAdversarial) {
    const Tensor s = Tensor::matrix({{0.9, 0.1, 0.0}, {0.1, 0.9, 0.0}});
    const std::vector<int> ql = {0, 1}, gl = {0, 1, 2};
    EXPECT_EQ(rank_at_k(s, ql, gl, 1), 100.0);
    EXPECT_EQ(mean_average_precision(s, ql, gl), 1.0);
    const Tensor bad = Tensor::matrix({{-1.0, 0.5, 0.6}, {0.5, -1.0, 0.6}});
    EXPECT_EQ(rank_at_k(bad, ql, gl, 1), 0.0);
    EXPECT_EQ(rank_at_k(bad, ql, gl, 2), 0.0);
    EXPECT_EQ(rank_at_k(bad, ql, gl, 3), 100.0);
}

TEST(Metrics, SingleRelevantAtRankTwoGivesHalf) {
    const Tensor s = Tensor::matrix({{0.1, 0.8}});
    EXPECT_EQ(mean_average_precision(s, std::vector<int>{0}, std::vector<int>{0, 1}), 0.5);
}

TEST(Metrics, QueryWithoutRelevantItemRejected) {
    const Tensor s = Tensor::matrix({{0.1, 0.8}, {0.3, 0.2}});
    try {
        rank_at_k(s, std::vector<int>{0, 7}, std::vector<int>{0, 1}, 1);
        FAIL() << "expected DomainError";
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("query 1"), std::string::npos) << e.what();
    }
    EXPECT_THROW(mean_average_precision(s, std::vector<int>{0, 7}, std::vector<int>{0, 1}), DomainError);
    EXPECT_THROW(rank_at_k(s, std::vector<int>{0, 1}, std::vector<int>{0, 1}, 0), DomainError);
}

TEST(Metrics, ApAtNCases) {
    const Tensor s = Tensor::matrix({{0.9, 0.8, 0.1, 0.0}, {0.0, 0.1, 0.9, 0.8}});
    const std::vector<int> ql = {0, 1}, gl = {0, 0, 1, 1};
    EXPECT_EQ(ap_at_n(s, ql, gl, 2), 100.0);
    EXPECT_EQ(ap_at_n(s, ql, gl, 4), 50.0);
    EXPECT_THROW(ap_at_n(s, ql, gl, 5), DomainError);
    // N = 1 collapses to a class-averaged top-1 match rate.
    EXPECT_EQ(ap_at_n(s, ql, gl, 1), rank_at_k(s, ql, gl, 1));
}

TEST(Metrics, MatchBruteForceOracles) {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const Instance in = random_instance(rng);
        for (std::size_t k : {1u, 5u, 10u}) {
            EXPECT_EQ(rank_at_k(in.s, in.ql, in.gl, k), oracle_recall(in.s, in.ql, in.gl, k)) << "trial " << trial;
        }
        EXPECT_EQ(mean_average_precision(in.s, in.ql, in.gl), oracle_map(in.s, in.ql, in.gl)) << "trial " << trial;
        const std::size_t n = 1 + rng.index(in.s.cols());
        EXPECT_EQ(ap_at_n(in.s, in.ql, in.gl, n), oracle_ap_at_n(in.s, in.ql, in.gl, n)) << "trial " << trial;
    }
}

TEST(Metrics, InvariantUnderIncreasingTransforms) {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const Instance in = random_instance(rng);
        Tensor t = in.s;
        for (double& v : t.values()) v = std::exp(3.0 * v) - 7.0;
        const std::size_t n = std::min<std::size_t>(3, in.s.cols());
        const auto a = evaluate_similarity(in.s, in.ql, in.gl, n);
        const auto b = evaluate_similarity(t, in.ql, in.gl, n);
        EXPECT_EQ(a.metrics, b.metrics);
        EXPECT_EQ(a.rankings, b.rankings);
    }
}

TEST(Metrics, RecallIsMonotoneInK) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const Instance in = random_instance(rng);
        const auto r = evaluate_similarity(in.s, in.ql, in.gl, 1).metrics;
        EXPECT_LE(r.at("R@1"), r.at("R@5"));
        EXPECT_LE(r.at("R@5"), r.at("R@10"));
        EXPECT_GE(r.at("mAP"), 0.0);
        EXPECT_LE(r.at("mAP"), 1.0);
    }
}

TEST(Metrics, ResultHoldsPermutationsAndRelevance) {
    Rng rng(4);
    const Instance in = random_instance(rng);
    const auto r = evaluate_similarity(in.s, in.ql, in.gl, 1);
    ASSERT_EQ(r.rankings.size(), in.s.rows());
    for (std::size_t q = 0; q < in.s.rows(); ++q) {
        std::vector<std::size_t> sorted = r.rankings[q];
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t j = 0; j < sorted.size(); ++j) EXPECT_EQ(sorted[j], j);
        for (std::size_t j = 0; j < sorted.size(); ++j) EXPECT_EQ(r.relevance[q][j], in.gl[r.rankings[q][j]] == in.ql[q]);
    }
}

namespace {

struct RetrievalFixture : ::testing::Test {
    RetrievalFixture() {
        CorpusConfig c;
        c.train_identities = 16;
        c.test_identities = 10;
        corpus = generate_corpus(c);
        model = std::make_unique<Model>(EncoderConfig{16, 64, 24, 1, 4, c.image_dim()}, corpus.identities(Split::Train), 5);
    }
    Corpus corpus;
    std::unique_ptr<Model> model;
};

}  // namespace

TEST_F(RetrievalFixture, DeterministicAndGatedByRefineFlag) {
    RetrievalOptions plain;
    const auto a = run_retrieval(*model, corpus.test, plain);
    const auto b = run_retrieval(*model, corpus.test, plain);
    EXPECT_EQ(a.metrics, b.metrics);
    EXPECT_EQ(a.rankings, b.rankings);
    plain.w = 0.9;
    EXPECT_EQ(run_retrieval(*model, corpus.test, plain).metrics, a.metrics);
    EXPECT_THROW(run_retrieval(*model, std::span<const Pair>{}, plain), DomainError);
}

TEST_F(RetrievalFixture, OrthonormalBankLeavesMetricsUnchanged) {
    Rng rng(6);
    Tensor q = Tensor::zeros({16, 16});
    for (double& v : q.values()) v = rng.normal();
    for (std::size_t i = 0; i < 16; ++i) {
        auto row = q.row_span(i);
        for (std::size_t j = 0; j < i; ++j) {
            auto prev = q.row_span(j);
            double dot = 0.0;
            for (std::size_t c = 0; c < 16; ++c) dot += row[c] * prev[c];
            for (std::size_t c = 0; c < 16; ++c) row[c] -= dot * prev[c];
        }
        double n = 0.0;
        for (double v : row) n += v * v;
        for (double& v : row) v /= std::sqrt(n);
    }
    model->bank.assign(q);
    for (Direction dir : {Direction::TextToImage, Direction::ImageToText}) {
        RetrievalOptions base{dir, false, 0.5, 10};
        RetrievalOptions refined{dir, true, 0.5, 10};
        const auto a = run_retrieval(*model, corpus.test, base).metrics;
        const auto b = run_retrieval(*model, corpus.test, refined).metrics;
        for (const auto& [name, value] : a) EXPECT_NEAR(b.at(name), value, 1e-9) << name;
    }
}

TEST_F(RetrievalFixture, ImageToTextUsesTheTransposedScores) {
    const Tensor t = encode_texts(*model, corpus.test);
    const Tensor i = encode_images(*model, corpus.test);
    std::vector<int> labels;
    for (const Pair& p : corpus.test) labels.push_back(p.identity);
    const Tensor s = retrieval_similarity(t, i, &model->bank.matrix(), 0.5);
    const auto expected = evaluate_similarity(kernels::transpose(s), labels, labels, 10);
    const auto got = run_retrieval(*model, corpus.test, RetrievalOptions{Direction::ImageToText, true, 0.5, 10});
    EXPECT_EQ(got.metrics, expected.metrics);
    EXPECT_EQ(got.rankings, expected.rankings);
}
