#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mmref/config.hpp"
#include "mmref/losses.hpp"
#include "mmref/optim.hpp"
#include "mmref/reference.hpp"
#include "mmref/rng.hpp"
#include "mmref/trainer.hpp"

using namespace mmref;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.values()) v = rng.normal();
    return t;
}

std::vector<int> sequence_with(std::size_t maskable) {
    std::vector<int> ids = {tokens::kBos};
    for (std::size_t i = 0; i < maskable; ++i) ids.push_back(4 + static_cast<int>(i % 20));
    ids.push_back(tokens::kEos);
    return ids;
}

}  // namespace

TEST(Bank, ShapeAndDeterminism) {
    const ReferenceBank a = init_reference_bank(7, 5, 42);
    const ReferenceBank b = init_reference_bank(7, 5, 42);
    EXPECT_EQ(a.matrix().shape(), (Shape{7, 5}));
    EXPECT_EQ(a.matrix(), b.matrix());
    EXPECT_NE(a.matrix(), init_reference_bank(7, 5, 43).matrix());
}

TEST(Bank, InitialStandardDeviation) {
    const ReferenceBank bank = init_reference_bank(200, 50, 3);
    double sum = 0.0, sq = 0.0;
    for (double v : bank.matrix().values()) sum += v;
    const double mean = sum / 1e4;
    for (double v : bank.matrix().values()) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / (1e4 - 1));
    EXPECT_GE(sd, 0.018);
    EXPECT_LE(sd, 0.022);
}

TEST(Bank, BatchRowsDedupInFirstOccurrenceOrder) {
    const int ids[] = {3, 5, 9};
    ReferenceBank bank(ids, 4, 1);
    Graph g;
    Var rows = bank.batch_rows(g, std::vector<int>{5, 5, 9, 9});
    ASSERT_EQ(rows.value().rows(), 2u);
    for (std::size_t c = 0; c < 4; ++c) {
        EXPECT_EQ(rows.value()(0, c), bank.matrix()(1, c));
        EXPECT_EQ(rows.value()(1, c), bank.matrix()(2, c));
    }
    Var one = bank.batch_rows(g, std::vector<int>{3});
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(one.value()(0, c), bank.matrix()(0, c));
    EXPECT_THROW(bank.batch_rows(g, std::vector<int>{4}), DomainError);
    EXPECT_THROW(bank.row_of(100), DomainError);
}

TEST(Bank, GradientReachesOnlyGatheredRows) {
    const int ids[] = {0, 1, 2, 3};
    ReferenceBank bank(ids, 3, 2);
    bank.parameter().zero_grad();
    {
        Graph g;
        g.backward(ops::sum(bank.batch_rows(g, std::vector<int>{2, 0, 2})));
    }
    const Tensor& grad = bank.parameter().grad;
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(grad(r, c), (r == 0 || r == 2) ? 1.0 : 0.0);
    }
}

namespace {

std::vector<bool> rows_changed_by_fuse_step(NegativeScope scope) {
    Rng rng(5);
    const int ids[] = {0, 1, 2, 3, 4, 5};
    ReferenceBank bank(ids, 6, 9);
    const Tensor before = bank.matrix();
    const std::vector<int> labels = {1, 1, 4, 4, 1, 1, 4, 4};
    LossConfig cfg;
    cfg.negatives = scope;
    {
        Graph g;
        Var reps = g.leaf(random_tensor({8, 6}, rng));
        bank.parameter().zero_grad();
        g.backward(fuse_loss(bank, reps, labels, cfg));
    }
    Adam adam;
    adam.step({&bank.parameter()}, 1e-2);
    std::vector<bool> changed(6, false);
    for (std::size_t r = 0; r < 6; ++r) {
        for (std::size_t c = 0; c < 6; ++c) changed[r] = changed[r] || bank.matrix()(r, c) != before(r, c);
    }
    return changed;
}

}  // namespace

TEST(Bank, FuseThenAdamChangesOnlyBatchRows) {
    const auto changed = rows_changed_by_fuse_step(NegativeScope::Batch);
    for (std::size_t r = 0; r < 6; ++r) EXPECT_EQ(changed[r], r == 1 || r == 4) << "row " << r;
}

TEST(Bank, BankScopeMovesEveryRow) {
    const auto changed = rows_changed_by_fuse_step(NegativeScope::Bank);
    for (std::size_t r = 0; r < 6; ++r) EXPECT_TRUE(changed[r]) << "row " << r;
}

TEST(Bank, GuideThenAdamLeavesBankUnchanged) {
    Rng rng(6);
    const int ids[] = {0, 1, 2};
    ReferenceBank bank(ids, 5, 4);
    const Tensor before = bank.matrix();
    {
        Graph g;
        Var reps = g.leaf(random_tensor({4, 5}, rng));
        bank.parameter().zero_grad();
        g.backward(guide_loss(bank, reps, std::vector<int>{0, 2, 0, 2}, LossConfig{}));
    }
    Adam adam;
    adam.step({&bank.parameter()}, 1e-2);
    EXPECT_EQ(bank.matrix(), before);
}

TEST(Masking, TwentyMaskableAtFifteenPercentMasksThree) {
    const auto ids = sequence_with(20);
    const MaskedText m = mask_tokens(ids, 0.15, 7);
    EXPECT_EQ(m.positions.size(), 3u);
    EXPECT_EQ(m.targets.size(), 3u);
}

TEST(Masking, RatioZeroIsNoOp) {
    const auto ids = sequence_with(10);
    const MaskedText m = mask_tokens(ids, 0.0, 7);
    EXPECT_TRUE(m.positions.empty());
    EXPECT_EQ(m.ids, ids);
}

TEST(Masking, SeededReproduction) {
    const auto ids = sequence_with(20);
    EXPECT_EQ(mask_tokens(ids, 0.15, 11).positions, mask_tokens(ids, 0.15, 11).positions);
    int differing = 0;
    for (std::uint64_t s = 0; s < 20; ++s) differing += mask_tokens(ids, 0.15, s).positions != mask_tokens(ids, 0.15, s + 100).positions;
    EXPECT_GE(differing, 15);
}

TEST(Masking, RejectsBadArguments) {
    const auto ids = sequence_with(5);
    EXPECT_THROW(mask_tokens(ids, -0.1, 1), DomainError);
    EXPECT_THROW(mask_tokens(ids, 1.5, 1), DomainError);
    EXPECT_THROW(mask_tokens(std::vector<int>{}, 0.15, 1), DomainError);
}

TEST(Masking, StructuralProperties) {
    Rng rng(8);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<int> ids;
        const std::size_t len = 1 + rng.index(24);
        for (std::size_t i = 0; i < len; ++i) ids.push_back(static_cast<int>(rng.index(30)));
        const double ratio = rng.uniform();
        const MaskedText m = mask_tokens(ids, ratio, rng.index(1000));
        std::size_t maskable = 0;
        for (int t : ids) maskable += !tokens::is_special(t) && t != tokens::kMask;
        EXPECT_EQ(m.positions.size(), mask_count(maskable, ratio));
        EXPECT_TRUE(std::is_sorted(m.positions.begin(), m.positions.end()));
        EXPECT_EQ(std::set<std::size_t>(m.positions.begin(), m.positions.end()).size(), m.positions.size());
        ASSERT_EQ(m.ids.size(), ids.size());
        std::set<std::size_t> masked(m.positions.begin(), m.positions.end());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (masked.contains(i)) {
                EXPECT_FALSE(tokens::is_special(ids[i]));
                EXPECT_EQ(m.ids[i], tokens::kMask);
            } else {
                EXPECT_EQ(m.ids[i], ids[i]);
            }
        }
        for (std::size_t k = 0; k < m.positions.size(); ++k) EXPECT_EQ(m.targets[k], ids[m.positions[k]]);
    }
}

TEST(Masking, CountRule) {
    EXPECT_EQ(mask_count(20, 0.15), 3u);
    EXPECT_EQ(mask_count(1, 0.15), 1u);
    EXPECT_EQ(mask_count(3, 0.15), 1u);
    EXPECT_EQ(mask_count(10, 0.15), 2u);
    EXPECT_EQ(mask_count(0, 0.15), 0u);
    EXPECT_EQ(mask_count(7, 1.0), 7u);
}

TEST(Reconstruction, ShapesAndDistributions) {
    Rng rng(9);
    LocalReconstruction rec(ReconstructionConfig{8, 11, 2, 3}, rng);
    for (std::size_t nm = 1; nm <= 5; ++nm) {
        Graph g;
        std::vector<std::size_t> positions;
        for (std::size_t i = 0; i < nm; ++i) positions.push_back(i);
        ReconstructionOutput out = rec.forward(g, g.constant(random_tensor({6, 8}, rng)),
                                               g.constant(random_tensor({1, 8}, rng)), positions);
        EXPECT_EQ(out.hidden.value().shape(), (Shape{6, 8}));
        EXPECT_EQ(out.selected.value().shape(), (Shape{nm, 8}));
        EXPECT_EQ(out.probabilities.value().shape(), (Shape{nm, 11}));
        for (std::size_t r = 0; r < nm; ++r) {
            double s = 0.0;
            for (double p : out.probabilities.value().row_span(r)) s += p;
            EXPECT_NEAR(s, 1.0, 1e-12);
            for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(out.selected.value()(r, c), out.hidden.value()(positions[r], c));
        }
    }
}

TEST(Reconstruction, SingleWordVocabularyIsCertain) {
    Rng rng(10);
    LocalReconstruction rec(ReconstructionConfig{8, 1, 2, 1}, rng);
    Graph g;
    const std::size_t positions[] = {0, 2};
    ReconstructionOutput out =
        rec.forward(g, g.constant(random_tensor({4, 8}, rng)), g.constant(random_tensor({1, 8}, rng)), positions);
    for (double p : out.probabilities.value().values()) EXPECT_EQ(p, 1.0);
    EXPECT_EQ(rec_loss(out.probabilities.value(), std::vector<int>{0, 0}), 0.0);
}

TEST(Reconstruction, RejectsDimensionMismatch) {
    Rng rng(11);
    LocalReconstruction rec(ReconstructionConfig{8, 5, 2, 1}, rng);
    Graph g;
    const std::size_t positions[] = {0};
    EXPECT_THROW(rec.forward(g, g.constant(random_tensor({4, 6}, rng)), g.constant(random_tensor({1, 8}, rng)), positions),
                 ShapeError);
    EXPECT_THROW(rec.forward(g, g.constant(random_tensor({4, 8}, rng)), g.constant(random_tensor({1, 6}, rng)), positions),
                 ShapeError);
}

TEST(Reconstruction, GradientReachesTheReference) {
    Rng rng(12);
    LocalReconstruction rec(ReconstructionConfig{8, 5, 2, 1}, rng);
    Graph g;
    Var ref = g.leaf(random_tensor({1, 8}, rng));
    const std::size_t positions[] = {1};
    ReconstructionOutput out = rec.forward(g, g.constant(random_tensor({3, 8}, rng)), ref, positions);
    g.backward(rec_loss_from_logits(out.logits, std::vector<int>{2}));
    double mass = 0.0;
    const Tensor grad = g.grad(ref);
    for (double v : grad.values()) mass += std::abs(v);
    EXPECT_GT(mass, 0.0);
}

TEST(Reconstruction, OverfitsOneSentence) {
    RunConfig cfg = desk_preset();
    cfg.corpus.train_identities = 8;
    cfg.corpus.test_identities = 2;
    const Corpus corpus = generate_corpus(cfg.corpus);
    const OverfitResult r = overfit_identity(cfg, corpus, 0, 500);
    EXPECT_EQ(r.steps, 500u);
    EXPECT_EQ(r.accuracy, 1.0) << "final loss " << r.final_loss;
}
