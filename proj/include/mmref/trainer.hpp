#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mmref/checkpoint.hpp"
#include "mmref/config.hpp"
#include "mmref/data.hpp"
#include "mmref/eval.hpp"
#include "mmref/model.hpp"
#include "mmref/optim.hpp"

namespace mmref {

struct MetricRow {
    std::string run_id;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    Direction direction = Direction::TextToImage;
    bool refined = false;
    double w = 0.0;
    std::map<std::string, double> metrics;

    friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

std::string metric_json(const MetricRow& row);
std::string metric_csv_header();
std::string metric_csv(const MetricRow& row);

struct StepReport {
    std::uint64_t step = 0;  ///< 1-based index of the update just applied
    double lr = 0.0;
    double total = 0.0;
    double align = 0.0;
    double fuse = 0.0;
    double rec = 0.0;
    double guide = 0.0;

    friend bool operator==(const StepReport&, const StepReport&) = default;
};

/// One training run. Batches and masks are derived from (seed, step), so a run
/// restored from a checkpoint continues on the identical trajectory.
class Trainer {
public:
    Trainer(const RunConfig& cfg, const Corpus& corpus);

    StepReport step();
    bool done() const { return step_ >= total_steps_; }

    std::uint64_t step_count() const { return step_; }
    std::uint64_t total_steps() const { return total_steps_; }
    std::size_t steps_per_epoch() const { return steps_per_epoch_; }

    /// Test-split retrieval in both directions, unrefined and, when asked, refined with weight w.
    std::vector<MetricRow> evaluate(bool refined, double w);

    Checkpoint checkpoint();
    void resume(const Checkpoint& ckpt);

    Model& model() { return *model_; }
    const RunConfig& config() const { return cfg_; }
    const Corpus& corpus() const { return corpus_; }

private:
    StepReport step_impl();
    const PairBatch& batch_for(std::uint64_t step);

    RunConfig cfg_;
    const Corpus& corpus_;
    std::unique_ptr<Model> model_;
    Adam adam_;
    ScheduleConfig schedule_;
    std::size_t steps_per_epoch_ = 0;
    std::uint64_t total_steps_ = 0;
    std::uint64_t step_ = 0;
    std::optional<std::uint64_t> cached_epoch_;
    std::vector<PairBatch> epoch_;
};

/// Appends metric rows to <dir>/metrics.jsonl and <dir>/metrics.csv.
class MetricSink {
public:
    explicit MetricSink(const std::string& dir);
    void append(const MetricRow& row);

private:
    std::ofstream json_;
    std::ofstream csv_;
};

struct TrainOutcome {
    std::vector<StepReport> history;
    std::vector<MetricRow> log;
};

/// Runs the remaining steps with periodic and final evaluation. When `sink`
/// is given, metric rows are appended there; with `checkpoint_path`, the final
/// state is saved.
TrainOutcome run_training(Trainer& trainer, MetricSink* sink = nullptr, const std::string& checkpoint_path = "");

struct OverfitResult {
    std::size_t steps = 0;
    double final_loss = 0.0;
    double accuracy = 0.0;  ///< lowest masked accuracy over the evaluation maskings
};

/// Trains only the reconstruction objective on the first train sentence of one
/// identity at a constant learning rate, with a fresh masking every step, then scores masked-token accuracy under
/// `eval_maskings` fresh masking seeds.
OverfitResult overfit_identity(const RunConfig& cfg, const Corpus& corpus, int identity, std::size_t steps,
                               std::size_t eval_maskings = 8);

/// Rows of the ablation table, in report order.
enum class AblationRow { Baseline, A, B, C, Full };
const char* ablation_row_name(AblationRow r);
AblationFlags ablation_flags(AblationRow r);

struct AblationCell {
    std::string label;      ///< row name, or "w=<value>"
    std::vector<double> r1;  ///< t2i R@1 per seed
    double mean() const;
    double stddev() const;  ///< population standard deviation
};

struct AblationReport {
    std::vector<AblationCell> rows;   ///< Baseline, A, B, C, MMRef
    std::vector<AblationCell> sweep;  ///< one per w on the full model
    std::size_t runs = 0;             ///< evaluated (configuration, seed) cells
};

const std::vector<double>& sweep_weights();

/// Called after each trained configuration (Baseline, A or C) with its finished trainer.
using AblationHook = std::function<void(AblationRow, std::uint64_t seed, Trainer&)>;

/// Trains Baseline, A and C per seed; B and MMRef are the refined evaluations
/// of A and C, which share their training runs. The sweep reuses C.
AblationReport ablate(const RunConfig& base, const Corpus& corpus, std::span<const std::uint64_t> seeds,
                      std::ostream* progress = nullptr, const AblationHook& on_trained = {});

std::string format_report(const AblationReport& report);

}  // namespace mmref
