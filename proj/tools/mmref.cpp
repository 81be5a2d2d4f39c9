#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mmref/checkpoint.hpp"
#include "mmref/config.hpp"
#include "mmref/gradcheck_suite.hpp"
#include "mmref/trainer.hpp"

using namespace mmref;

namespace {

struct ConfigArgs {
    std::string preset = "desk";
    std::string file;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::optional<double> peak_lr;
    std::optional<double> w;
    std::optional<std::string> output_dir;
    std::optional<std::string> run_id;
    std::optional<int> eval_every;
    std::optional<bool> gf, lr, rgrl, refine;

    void add(CLI::App* app) {
        app->add_option("--preset", preset, "desk or full-scale")->capture_default_str();
        app->add_option("--config", file, "INI config file (applied over the preset)");
        app->add_option("--seed", seed);
        app->add_option("--epochs", epochs);
        app->add_option("--peak-lr", peak_lr);
        app->add_option("--w", w, "refinement fusion weight");
        app->add_option("--output-dir", output_dir);
        app->add_option("--run-id", run_id);
        app->add_option("--eval-every", eval_every, "epochs between evaluations, 0 = final only");
        app->add_option("--gf", gf);
        app->add_option("--lr", lr);
        app->add_option("--rgrl", rgrl);
        app->add_option("--refine", refine);
    }

    RunConfig resolve() const {
        RunConfig cfg = preset_config();
        if (seed) cfg.seed = *seed;
        if (epochs) cfg.epochs = *epochs;
        if (peak_lr) cfg.peak_lr = *peak_lr;
        if (w) cfg.loss.refine_weight = *w;
        if (output_dir) cfg.output_dir = *output_dir;
        if (run_id) cfg.run_id = *run_id;
        if (eval_every) cfg.eval_every = *eval_every;
        if (gf) cfg.flags.global_fusion = *gf;
        if (lr) cfg.flags.local_rec = *lr;
        if (rgrl) cfg.flags.guided = *rgrl;
        if (refine) cfg.flags.refine = *refine;
        cfg.validate();
        return cfg;
    }

private:
    RunConfig preset_config() const {
        RunConfig base = mmref::preset(preset);
        return file.empty() ? base : load_config(file, base);
    }
};

Corpus corpus_for(const RunConfig& cfg, const std::string& path) {
    if (path.empty()) return generate_corpus(cfg.corpus);
    Corpus c = load_corpus(path);
    return c;
}

void print_rows(const std::vector<MetricRow>& rows) {
    for (const auto& r : rows) std::cout << metric_json(r) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-modal reference learning on a synthetic corpus"};
    app.require_subcommand(1);

    ConfigArgs gen_args, train_args, eval_args, ablate_args, sweep_args;
    std::string corpus_out = "corpus.bin";
    auto* gen = app.add_subcommand("generate-corpus", "write the synthetic corpus");
    gen_args.add(gen);
    gen->add_option("--out", corpus_out)->capture_default_str();

    std::string train_corpus, resume_path;
    auto* train = app.add_subcommand("train", "train one configuration");
    train_args.add(train);
    train->add_option("--corpus", train_corpus, "corpus file; generated from the config when omitted");
    train->add_option("--resume", resume_path, "checkpoint to continue from");

    std::string eval_corpus, eval_ckpt;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    eval_args.add(eval);
    eval->add_option("--corpus", eval_corpus);
    eval->add_option("--checkpoint", eval_ckpt)->required();

    std::string ablate_corpus;
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    auto* ablate_cmd = app.add_subcommand("ablate", "component ablation and w sweep over seeds");
    ablate_args.add(ablate_cmd);
    ablate_cmd->add_option("--corpus", ablate_corpus);
    ablate_cmd->add_option("--seeds", seeds)->delimiter(',')->capture_default_str();

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every operator and loss");

    std::string sweep_corpus, sweep_ckpt;
    auto* sweep = app.add_subcommand("sweep-w", "evaluate a checkpoint over the refinement weight grid");
    sweep_args.add(sweep);
    sweep->add_option("--corpus", sweep_corpus);
    sweep->add_option("--checkpoint", sweep_ckpt)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            const RunConfig cfg = gen_args.resolve();
            save_corpus(corpus_out, generate_corpus(cfg.corpus));
            std::cout << "wrote " << corpus_out << '\n';
        } else if (train->parsed()) {
            const RunConfig cfg = train_args.resolve();
            const Corpus corpus = corpus_for(cfg, train_corpus);
            const std::string dir = cfg.output_dir + "/" + cfg.run_id;
            std::filesystem::create_directories(dir);
            {
                std::ofstream out(dir + "/config.ini");
                write_config(out, cfg);
            }
            Trainer trainer(cfg, corpus);
            if (!resume_path.empty()) trainer.resume(load_checkpoint(resume_path));
            MetricSink sink(dir);
            const TrainOutcome outcome = run_training(trainer, &sink, dir + "/final.ckpt");
            if (!outcome.history.empty()) {
                const StepReport& last = outcome.history.back();
                std::cout << "step " << last.step << " loss " << last.total << '\n';
            }
            print_rows(outcome.log);
        } else if (eval->parsed() || sweep->parsed()) {
            const bool sweeping = sweep->parsed();
            const RunConfig cfg = (sweeping ? sweep_args : eval_args).resolve();
            const Corpus corpus = corpus_for(cfg, sweeping ? sweep_corpus : eval_corpus);
            Trainer trainer(cfg, corpus);
            trainer.resume(load_checkpoint(sweeping ? sweep_ckpt : eval_ckpt));
            if (!sweeping) {
                print_rows(trainer.evaluate(cfg.flags.refine, cfg.loss.refine_weight));
            } else {
                for (double w : sweep_weights()) {
                    for (const auto& r : trainer.evaluate(true, w)) {
                        if (r.refined) std::cout << metric_json(r) << '\n';
                    }
                }
            }
        } else if (ablate_cmd->parsed()) {
            const RunConfig cfg = ablate_args.resolve();
            const Corpus corpus = corpus_for(cfg, ablate_corpus);
            const AblationReport report = ablate(cfg, corpus, seeds, &std::cerr);
            std::cout << format_report(report);
        } else if (gradcheck->parsed()) {
            const auto items = default_gradcheck_items();
            const GradCheckReport report = run_gradchecks(items);
            std::cout << format_gradcheck(report);
            return report.passed() ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
