#include "mmref/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "mmref/losses.hpp"
#include "mmref/rng.hpp"

namespace mmref {
namespace {

enum SeedTag : std::uint64_t { kModelInit = 21, kEpochOrder = 22, kMasking = 23, kOverfitEval = 24 };

const char* const kMetricNames[] = {"R@1", "R@5", "R@10", "mAP", "AP@N"};

std::string format_double(double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

}  // namespace

std::string metric_json(const MetricRow& row) {
    nlohmann::ordered_json j;
    j["run-id"] = row.run_id;
    j["seed"] = row.seed;
    j["step"] = row.step;
    for (const char* name : kMetricNames) j[name] = row.metrics.at(name);
    j["direction"] = direction_name(row.direction);
    j["refined"] = row.refined;
    j["w"] = row.w;
    return j.dump();
}

std::string metric_csv_header() { return "run-id,seed,step,R@1,R@5,R@10,mAP,AP@N,direction,refined,w"; }

std::string metric_csv(const MetricRow& row) {
    std::ostringstream out;
    out << row.run_id << ',' << row.seed << ',' << row.step;
    for (const char* name : kMetricNames) out << ',' << format_double(row.metrics.at(name));
    out << ',' << direction_name(row.direction) << ',' << (row.refined ? "true" : "false") << ','
        << format_double(row.w);
    return out.str();
}

Trainer::Trainer(const RunConfig& cfg, const Corpus& corpus) : cfg_(cfg), corpus_(corpus), adam_(cfg.adam) {
    cfg_.validate();
    if (corpus.config.image_dim() != cfg_.encoder.image_input_dim ||
        corpus.config.vocab_size() > cfg_.encoder.vocab_size ||
        corpus.config.max_tokens() > cfg_.encoder.max_seq_len) {
        throw DomainError("trainer: corpus does not fit the encoder configuration");
    }
    if (corpus.config.pairs_per_identity < cfg_.pairs_per_identity) {
        throw DomainError("trainer: corpus has fewer pairs per identity than the batch needs");
    }
    const auto ids = corpus.identities(Split::Train);
    model_ = std::make_unique<Model>(cfg_.encoder, ids, derive_seed(cfg_.seed, kModelInit));
    steps_per_epoch_ = batches_per_epoch(corpus, cfg_.identities_per_batch);
    schedule_ = cfg_.schedule(steps_per_epoch_);
    schedule_.validate();
    total_steps_ = static_cast<std::uint64_t>(schedule_.total_steps());
}

const PairBatch& Trainer::batch_for(std::uint64_t step) {
    const std::uint64_t epoch = step / steps_per_epoch_;
    if (cached_epoch_ != epoch) {
        epoch_ = epoch_batches(corpus_, cfg_.identities_per_batch, cfg_.pairs_per_identity,
                               derive_seed(cfg_.seed, kEpochOrder, epoch));
        cached_epoch_ = epoch;
    }
    return epoch_.at(step % steps_per_epoch_);
}

StepReport Trainer::step() {
    if (done()) throw DomainError("trainer: all " + std::to_string(total_steps_) + " steps already taken");
    try {
        return step_impl();
    } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(step_ + 1) + " (epoch " +
                           std::to_string(step_ / steps_per_epoch_ + 1) + "): " + e.what());
    }
}

StepReport Trainer::step_impl() {
    const PairBatch& batch = batch_for(step_);
    const AblationFlags& flags = cfg_.flags;
    Model& m = *model_;

    Graph g;
    Var texts = m.text.encode_batch(g, batch.texts);
    Var images = m.image.encode(g, batch.images);

    LossParts parts;
    parts.align = align_loss(texts, images, batch.labels, cfg_.loss);
    if (flags.global_fusion || flags.guided) {
        const Var both[] = {texts, images};
        Var reps = ops::concat_rows(both);
        std::vector<int> labels(batch.labels);
        labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
        if (flags.global_fusion) parts.fuse = fuse_loss(m.bank, reps, labels, cfg_.loss);
        if (flags.guided) parts.guide = guide_loss(m.bank, reps, labels, cfg_.loss);
    }
    if (flags.local_rec) {
        std::vector<Var> logits;
        std::vector<int> targets;
        Var bank = g.parameter(m.bank.parameter());
        for (std::size_t i = 0; i < batch.texts.size(); ++i) {
            MaskedText masked = mask_tokens(batch.texts[i], cfg_.mask_ratio, derive_seed(cfg_.seed, kMasking, step_, i));
            if (masked.positions.empty()) continue;
            TextEncoding enc = m.text.encode(g, masked.ids);
            const std::size_t row[] = {m.bank.row_of(batch.labels[i])};
            ReconstructionOutput out = m.reconstruction.forward(g, enc.tokens, ops::select_rows(bank, row), masked.positions);
            logits.push_back(out.logits);
            targets.insert(targets.end(), masked.targets.begin(), masked.targets.end());
        }
        // No masked positions anywhere in the batch contributes zero.
        if (!logits.empty()) parts.rec = rec_loss_from_logits(ops::concat_rows(logits), targets);
    }

    Var total = total_loss(g, parts, cfg_.loss);
    StepReport report;
    report.step = step_ + 1;
    report.total = total.value().item();
    report.align = parts.align->value().item();
    if (parts.fuse) report.fuse = parts.fuse->value().item();
    if (parts.rec) report.rec = parts.rec->value().item();
    if (parts.guide) report.guide = parts.guide->value().item();
    if (!std::isfinite(report.total)) {
        throw NumericError("non-finite loss (align " +
                           format_double(report.align) + ", fuse " + format_double(report.fuse) + ", rec " +
                           format_double(report.rec) + ", guide " + format_double(report.guide) + ")");
    }

    ParameterList params = m.parameters();
    for (Parameter* p : params) p->zero_grad();
    g.backward(total);
    report.lr = lr_at(static_cast<std::int64_t>(step_ + 1), schedule_);
    adam_.step(params, report.lr);
    ++step_;
    return report;
}

std::vector<MetricRow> Trainer::evaluate(bool refined, double w) {
    std::span<const Pair> test = corpus_.split(Split::Test);
    const Tensor text = encode_texts(*model_, test);
    const Tensor image = encode_images(*model_, test);
    std::vector<int> labels;
    for (const Pair& p : test) labels.push_back(p.identity);

    std::vector<MetricRow> rows;
    auto emit = [&](const Tensor& s, bool is_refined, double weight) {
        for (Direction dir : {Direction::TextToImage, Direction::ImageToText}) {
            const Tensor scores = dir == Direction::TextToImage ? s : kernels::transpose(s);
            MetricRow row{cfg_.run_id, cfg_.seed, step_, dir, is_refined, weight, {}};
            row.metrics = evaluate_similarity(scores, labels, labels, cfg_.ap_n).metrics;
            rows.push_back(std::move(row));
        }
    };
    emit(retrieval_similarity(text, image, nullptr, 0.0), false, 0.0);
    if (refined) emit(retrieval_similarity(text, image, &model_->bank.matrix(), w), true, w);
    return rows;
}

Checkpoint Trainer::checkpoint() { return capture_checkpoint(*model_, adam_, cfg_.seed, step_); }

void Trainer::resume(const Checkpoint& ckpt) {
    if (ckpt.seed != cfg_.seed) throw DomainError("resume: checkpoint seed differs from the run seed");
    if (ckpt.step > total_steps_) throw DomainError("resume: checkpoint step beyond the schedule");
    restore_checkpoint(ckpt, *model_, adam_);
    step_ = ckpt.step;
    cached_epoch_.reset();
}

MetricSink::MetricSink(const std::string& dir) {
    std::filesystem::create_directories(dir);
    const std::string csv_path = dir + "/metrics.csv";
    const bool fresh = !std::filesystem::exists(csv_path) || std::filesystem::file_size(csv_path) == 0;
    json_.open(dir + "/metrics.jsonl", std::ios::app);
    csv_.open(csv_path, std::ios::app);
    if (!json_ || !csv_) throw FormatError("cannot open metric files in " + dir);
    if (fresh) csv_ << metric_csv_header() << '\n';
}

void MetricSink::append(const MetricRow& row) {
    json_ << metric_json(row) << '\n';
    csv_ << metric_csv(row) << '\n';
    json_.flush();
    csv_.flush();
}

TrainOutcome run_training(Trainer& trainer, MetricSink* sink, const std::string& checkpoint_path) {
    TrainOutcome outcome;
    const RunConfig& cfg = trainer.config();
    auto record = [&] {
        for (MetricRow& row : trainer.evaluate(cfg.flags.refine, cfg.loss.refine_weight)) {
            if (sink) sink->append(row);
            outcome.log.push_back(std::move(row));
        }
    };
    const std::uint64_t every = cfg.eval_every > 0 ? static_cast<std::uint64_t>(cfg.eval_every) * trainer.steps_per_epoch() : 0;
    while (!trainer.done()) {
        outcome.history.push_back(trainer.step());
        if (every > 0 && trainer.step_count() % every == 0 && !trainer.done()) record();
    }
    record();
    if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, trainer.checkpoint());
    return outcome;
}

OverfitResult overfit_identity(const RunConfig& cfg, const Corpus& corpus, int identity, std::size_t steps,
                               std::size_t eval_maskings) {
    cfg.validate();
    const auto indices = corpus.pairs_of(Split::Train, identity);
    if (indices.empty()) throw DomainError("overfit_identity: identity " + std::to_string(identity) + " has no train pairs");
    const std::vector<Pair> pairs = {corpus.train[indices.front()]};

    const auto ids = corpus.identities(Split::Train);
    Model model(cfg.encoder, ids, derive_seed(cfg.seed, kModelInit));
    Adam adam(cfg.adam);
    ParameterList params = model.parameters();
    const std::size_t row[] = {model.bank.row_of(identity)};

    OverfitResult result;
    for (std::size_t step = 0; step < steps; ++step) {
        Graph g;
        Var bank = g.parameter(model.bank.parameter());
        std::vector<Var> logits;
        std::vector<int> targets;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            MaskedText masked = mask_tokens(pairs[i].tokens, cfg.mask_ratio, derive_seed(cfg.seed, kMasking, step, i));
            if (masked.positions.empty()) continue;
            TextEncoding enc = model.text.encode(g, masked.ids);
            logits.push_back(model.reconstruction.forward(g, enc.tokens, ops::select_rows(bank, row), masked.positions).logits);
            targets.insert(targets.end(), masked.targets.begin(), masked.targets.end());
        }
        if (logits.empty()) throw DomainError("overfit_identity: nothing to mask");
        Var loss = rec_loss_from_logits(ops::concat_rows(logits), targets);
        for (Parameter* p : params) p->zero_grad();
        g.backward(loss);
        adam.step(params, cfg.peak_lr);
        result.final_loss = loss.value().item();
        result.steps = step + 1;
    }

    result.accuracy = 1.0;
    for (std::size_t e = 0; e < eval_maskings; ++e) {
        result.accuracy = std::min(
            result.accuracy, masked_accuracy(model, pairs, cfg.mask_ratio, derive_seed(cfg.seed, kOverfitEval, e)));
    }
    return result;
}

const char* ablation_row_name(AblationRow r) {
    switch (r) {
        case AblationRow::Baseline: return "Baseline";
        case AblationRow::A: return "A";
        case AblationRow::B: return "B";
        case AblationRow::C: return "C";
        case AblationRow::Full: return "MMRef";
    }
    return "?";
}

AblationFlags ablation_flags(AblationRow r) {
    switch (r) {
        case AblationRow::Baseline: return {false, false, false, false};
        case AblationRow::A: return {true, false, true, false};
        case AblationRow::B: return {true, false, true, true};
        case AblationRow::C: return {true, true, true, false};
        case AblationRow::Full: return {true, true, true, true};
    }
    throw DomainError("unknown ablation row");
}

double AblationCell::mean() const {
    if (r1.empty()) throw DomainError("ablation cell '" + label + "' is empty");
    double s = 0.0;
    for (double v : r1) s += v;
    return s / static_cast<double>(r1.size());
}

double AblationCell::stddev() const {
    const double mu = mean();
    double s = 0.0;
    for (double v : r1) s += (v - mu) * (v - mu);
    return std::sqrt(s / static_cast<double>(r1.size()));
}

const std::vector<double>& sweep_weights() {
    static const std::vector<double> w = {0.0, 0.1, 0.3, 0.5, 0.7, 0.9};
    return w;
}

namespace {

double t2i_r1(const std::vector<MetricRow>& rows, bool refined) {
    for (const MetricRow& r : rows) {
        if (r.direction == Direction::TextToImage && r.refined == refined) return r.metrics.at("R@1");
    }
    throw DomainError("ablate: missing evaluation row");
}

}  // namespace

AblationReport ablate(const RunConfig& base, const Corpus& corpus, std::span<const std::uint64_t> seeds,
                      std::ostream* progress, const AblationHook& on_trained) {
    if (seeds.empty()) throw DomainError("ablate: no seeds");
    AblationReport report;
    for (AblationRow r : {AblationRow::Baseline, AblationRow::A, AblationRow::B, AblationRow::C, AblationRow::Full}) {
        report.rows.push_back(AblationCell{ablation_row_name(r), {}});
    }
    for (double w : sweep_weights()) {
        std::ostringstream label;
        label << "w=" << w;
        report.sweep.push_back(AblationCell{label.str(), {}});
    }
    const double w = base.loss.refine_weight;
    for (std::uint64_t seed : seeds) {
        for (AblationRow trained : {AblationRow::Baseline, AblationRow::A, AblationRow::C}) {
            RunConfig cfg = base;
            cfg.seed = seed;
            cfg.flags = ablation_flags(trained);
            cfg.eval_every = 0;
            cfg.run_id = std::string(ablation_row_name(trained)) + "-s" + std::to_string(seed);
            Trainer trainer(cfg, corpus);
            while (!trainer.done()) trainer.step();
            const auto rows = trainer.evaluate(trained != AblationRow::Baseline, w);
            report.rows[static_cast<std::size_t>(trained)].r1.push_back(t2i_r1(rows, false));
            report.runs += 1;
            if (trained != AblationRow::Baseline) {
                // B and MMRef reuse the runs of A and C: REFINE changes scoring only.
                report.rows[static_cast<std::size_t>(trained) + 1].r1.push_back(t2i_r1(rows, true));
                report.runs += 1;
            }
            if (trained == AblationRow::C) {
                for (std::size_t k = 0; k < sweep_weights().size(); ++k) {
                    const double wk = sweep_weights()[k];
                    const auto swept = trainer.evaluate(true, wk);
                    report.sweep[k].r1.push_back(t2i_r1(swept, true));
                    report.runs += 1;
                }
            }
            if (on_trained) on_trained(trained, seed, trainer);
            if (progress) *progress << "  " << cfg.run_id << " done\n" << std::flush;
        }
    }
    return report;
}

std::string format_report(const AblationReport& report) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2);
    out << "config      R@1 mean   std    seeds\n";
    auto line = [&](const AblationCell& c) {
        out << std::left << std::setw(10) << c.label << std::right << std::setw(9) << c.mean() << std::setw(8)
            << c.stddev() << std::setw(6) << c.r1.size() << '\n';
    };
    for (const auto& c : report.rows) line(c);
    out << "w sweep (full model)\n";
    for (const auto& c : report.sweep) line(c);
    out << "cells: " << report.runs << '\n';
    return out.str();
}

}  // namespace mmref
