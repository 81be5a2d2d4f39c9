#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "mmref/trainer.hpp"

using namespace mmref;

namespace {

RunConfig small_config() {
    RunConfig c = desk_preset();
    c.corpus.train_identities = 12;
    c.corpus.test_identities = 6;
    c.encoder.d = 16;
    c.encoder.n_blocks = 1;
    c.identities_per_batch = 4;
    c.epochs = 3;
    c.warmup_epochs = 1;
    return c;
}

struct TrainerTest : ::testing::Test {
    RunConfig cfg = small_config();
    Corpus corpus = generate_corpus(cfg.corpus);
};

void train(Trainer& t) {
    while (!t.done()) t.step();
}

}  // namespace

TEST_F(TrainerTest, StepCountsFollowTheSchedule) {
    Trainer t(cfg, corpus);
    EXPECT_EQ(t.steps_per_epoch(), 3u);
    EXPECT_EQ(t.total_steps(), 9u);
    const StepReport first = t.step();
    EXPECT_EQ(first.step, 1u);
    EXPECT_GT(first.lr, 0.0);
    EXPECT_GT(first.align, 0.0);
    EXPECT_EQ(first.total, total_loss(first.align, first.fuse, first.rec, first.guide, cfg.loss));
}

TEST_F(TrainerTest, BaselineLeavesTheBankUntouched) {
    cfg.flags = ablation_flags(AblationRow::Baseline);
    Trainer t(cfg, corpus);
    const Tensor before = t.model().bank.matrix();
    train(t);
    EXPECT_EQ(t.model().bank.matrix(), before);
}

TEST_F(TrainerTest, FullModelMovesTheBank) {
    Trainer t(cfg, corpus);
    const Tensor before = t.model().bank.matrix();
    train(t);
    EXPECT_NE(t.model().bank.matrix(), before);
}

TEST_F(TrainerTest, RejectsFlagViolationsAndMismatchedCorpus) {
    cfg.flags = AblationFlags{true, false, false, false};
    EXPECT_THROW(Trainer(cfg, corpus), DomainError);
    RunConfig other = small_config();
    other.corpus.background_dims = 4;
    EXPECT_THROW(Trainer(other, corpus), DomainError);
}

TEST_F(TrainerTest, RerunIsBitIdentical) {
    Trainer a(cfg, corpus), b(cfg, corpus);
    std::vector<StepReport> ha, hb;
    while (!a.done()) ha.push_back(a.step());
    while (!b.done()) hb.push_back(b.step());
    EXPECT_EQ(ha, hb);
    EXPECT_EQ(a.checkpoint(), b.checkpoint());
    EXPECT_EQ(a.evaluate(true, 0.5), b.evaluate(true, 0.5));
}

TEST_F(TrainerTest, ResumeContinuesTheSameTrajectory) {
    Trainer full(cfg, corpus);
    std::vector<StepReport> reference;
    while (!full.done()) reference.push_back(full.step());

    Trainer first(cfg, corpus);
    for (int i = 0; i < 4; ++i) first.step();
    std::stringstream buf;
    write_checkpoint(buf, first.checkpoint());

    Trainer second(cfg, corpus);
    second.resume(read_checkpoint(buf));
    std::vector<StepReport> tail;
    while (!second.done()) tail.push_back(second.step());
    ASSERT_EQ(tail.size(), reference.size() - 4);
    for (std::size_t i = 0; i < tail.size(); ++i) EXPECT_EQ(tail[i], reference[i + 4]);
    EXPECT_EQ(second.checkpoint(), full.checkpoint());

    RunConfig other_seed = cfg;
    other_seed.seed = 1;
    Trainer mismatch(other_seed, corpus);
    EXPECT_THROW(mismatch.resume(full.checkpoint()), DomainError);
}

TEST_F(TrainerTest, ZeroReconstructionWeightMatchesRowA) {
    RunConfig a = cfg;
    a.flags = ablation_flags(AblationRow::A);
    RunConfig c = cfg;
    c.flags = ablation_flags(AblationRow::C);
    c.loss.lambda_rec = 0.0;
    Trainer ta(a, corpus), tc(c, corpus);
    train(ta);
    train(tc);
    EXPECT_EQ(ta.checkpoint(), tc.checkpoint());
    EXPECT_EQ(ta.evaluate(true, 0.5), tc.evaluate(true, 0.5));
}

TEST_F(TrainerTest, MetricRowsCarryEveryField) {
    Trainer t(cfg, corpus);
    train(t);
    const auto rows = t.evaluate(true, 0.3);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_FALSE(rows[0].refined);
    EXPECT_TRUE(rows[2].refined);
    EXPECT_EQ(rows[2].w, 0.3);
    EXPECT_EQ(rows[1].direction, Direction::ImageToText);
    for (const MetricRow& r : rows) {
        EXPECT_EQ(r.step, 9u);
        EXPECT_EQ(r.metrics.size(), 5u);
        const auto j = nlohmann::json::parse(metric_json(r));
        for (const char* key : {"run-id", "seed", "step", "R@1", "R@5", "R@10", "mAP", "AP@N", "direction", "refined", "w"}) {
            EXPECT_TRUE(j.contains(key)) << key;
        }
        std::size_t commas = 0;
        for (char ch : metric_csv(r)) commas += ch == ',';
        EXPECT_EQ(commas, 10u);
    }
    EXPECT_EQ(metric_csv_header(), "run-id,seed,step,R@1,R@5,R@10,mAP,AP@N,direction,refined,w");
}

TEST_F(TrainerTest, RunTrainingWritesMetricsAndCheckpoint) {
    const auto dir = std::filesystem::temp_directory_path() / "mmref_trainer_test";
    std::filesystem::remove_all(dir);
    cfg.eval_every = 1;
    Trainer t(cfg, corpus);
    TrainOutcome out;
    {
        MetricSink sink(dir.string());
        out = run_training(t, &sink, (dir / "final.ckpt").string());
    }
    EXPECT_EQ(out.history.size(), 9u);
    // Evaluations after epochs 1 and 2, then the final one; four rows each.
    EXPECT_EQ(out.log.size(), 12u);
    std::ifstream csv(dir / "metrics.csv");
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, metric_csv_header());
    std::size_t lines = 0;
    while (std::getline(csv, line)) ++lines;
    EXPECT_EQ(lines, 12u);
    EXPECT_EQ(load_checkpoint((dir / "final.ckpt").string()), t.checkpoint());
    std::filesystem::remove_all(dir);
}

TEST_F(TrainerTest, NonFiniteAbortNamesTheStep) {
    cfg.peak_lr = 1e300;
    Trainer t(cfg, corpus);
    try {
        train(t);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("step "), std::string::npos) << msg;
        EXPECT_NE(msg.find("(epoch "), std::string::npos) << msg;
    }
}

TEST_F(TrainerTest, AblationReportShape) {
    cfg.epochs = 2;
    std::vector<std::pair<AblationRow, std::uint64_t>> hooked;
    const std::uint64_t seeds[] = {0, 1};
    const AblationReport r = ablate(cfg, corpus, seeds, nullptr,
                                    [&](AblationRow row, std::uint64_t seed, Trainer&) { hooked.emplace_back(row, seed); });
    ASSERT_EQ(r.rows.size(), 5u);
    const char* names[] = {"Baseline", "A", "B", "C", "MMRef"};
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(r.rows[i].label, names[i]);
        EXPECT_EQ(r.rows[i].r1.size(), 2u);
    }
    ASSERT_EQ(r.sweep.size(), sweep_weights().size());
    EXPECT_EQ(r.runs, 2u * (5 + 6));
    EXPECT_EQ(hooked.size(), 6u);
    EXPECT_EQ(hooked[0].first, AblationRow::Baseline);
    EXPECT_EQ(hooked[5].second, 1u);
    // The w = 0 sweep entry is the unrefined score of the full model's run.
    EXPECT_EQ(r.sweep[0].r1, r.rows[3].r1);
    EXPECT_FALSE(format_report(r).empty());
}

TEST(AblationCell, PopulationStatistics) {
    const AblationCell c{"x", {1.0, 3.0}};
    EXPECT_EQ(c.mean(), 2.0);
    EXPECT_EQ(c.stddev(), 1.0);
}

TEST(OverfitIdentity, RejectsUnknownIdentity) {
    RunConfig cfg = small_config();
    const Corpus corpus = generate_corpus(cfg.corpus);
    EXPECT_THROW(overfit_identity(cfg, corpus, 15, 1), DomainError);
}
