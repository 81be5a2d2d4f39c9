#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "mmref/checkpoint.hpp"
#include "mmref/config.hpp"
#include "mmref/model.hpp"
#include "mmref/optim.hpp"

using namespace mmref;

namespace {

const EncoderConfig kTiny{8, 20, 8, 1, 2, 6};

struct Trained {
    Trained() : model(kTiny, std::vector<int>{0, 1, 2}, 3) {
        // A few fake updates so the moments are non-trivial.
        ParameterList params = model.parameters();
        for (int s = 0; s < 3; ++s) {
            for (Parameter* p : params) {
                p->grad = Tensor::zeros(p->value.shape());
                for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] = std::sin(1.0 + s + 0.1 * i);
            }
            adam.step(params, 1e-2);
        }
    }
    Model model;
    Adam adam;
};

std::string bytes_of(const Checkpoint& c) {
    std::ostringstream out;
    write_checkpoint(out, c);
    return out.str();
}

std::string config_text(const RunConfig& c) {
    std::ostringstream out;
    write_config(out, c);
    return out.str();
}

RunConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

}  // namespace

TEST(Checkpoint, ByteIdenticalRoundTrip) {
    Trained t;
    const Checkpoint c = capture_checkpoint(t.model, t.adam, 11, 3);
    EXPECT_EQ(c.optimizer_step, 3);
    const std::string bytes = bytes_of(c);
    std::istringstream in(bytes);
    const Checkpoint back = read_checkpoint(in);
    EXPECT_EQ(back, c);
    EXPECT_EQ(bytes_of(back), bytes);

    const auto path = std::filesystem::temp_directory_path() / "mmref_test.ckpt";
    save_checkpoint(path.string(), c);
    EXPECT_EQ(load_checkpoint(path.string()), c);
    std::filesystem::remove(path);
}

TEST(Checkpoint, RestoreReproducesModelAndOptimizer) {
    Trained t;
    const Checkpoint c = capture_checkpoint(t.model, t.adam, 11, 3);
    Model fresh(kTiny, std::vector<int>{0, 1, 2}, 99);
    Adam adam;
    restore_checkpoint(c, fresh, adam);
    EXPECT_EQ(capture_checkpoint(fresh, adam, 11, 3), c);
}

TEST(Checkpoint, ShapeAndNameValidation) {
    Trained t;
    const Checkpoint c = capture_checkpoint(t.model, t.adam, 1, 1);
    Model other(kTiny, std::vector<int>{0, 1, 2, 3}, 3);
    const Checkpoint before = capture_checkpoint(other, Adam{}, 1, 0);
    Adam adam;
    EXPECT_THROW(restore_checkpoint(c, other, adam), ShapeError);
    // Nothing is assigned when validation fails.
    EXPECT_EQ(capture_checkpoint(other, adam, 1, 0), before);

    Checkpoint renamed = c;
    renamed.parameters[0].name = "nonexistent";
    Model same(kTiny, std::vector<int>{0, 1, 2}, 3);
    EXPECT_THROW(restore_checkpoint(renamed, same, adam), FormatError);
}

TEST(Checkpoint, RejectsCorruptFiles) {
    Trained t;
    const std::string bytes = bytes_of(capture_checkpoint(t.model, t.adam, 1, 1));
    {
        std::string bad = bytes;
        bad[1] = 'Z';
        std::istringstream in(bad);
        EXPECT_THROW(read_checkpoint(in), FormatError);
    }
    {
        std::string bad = bytes;
        bad[4] = 7;
        std::istringstream in(bad);
        EXPECT_THROW(read_checkpoint(in), FormatError);
    }
    {
        std::istringstream in(bytes.substr(0, bytes.size() - 3));
        EXPECT_THROW(read_checkpoint(in), FormatError);
    }
    {
        std::istringstream in(bytes + "extra");
        EXPECT_THROW(read_checkpoint(in), FormatError);
    }
    EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.ckpt"), FormatError);
}

TEST(Config, RoundTrip) {
    RunConfig c = desk_preset();
    c.seed = 17;
    c.peak_lr = 3.5e-4;
    c.run_id = "abc";
    c.loss.negatives = NegativeScope::Batch;
    c.flags.refine = false;
    c.corpus.p_drop = 0.125;
    const std::string text = config_text(c);
    const RunConfig back = parse(text);
    EXPECT_EQ(config_text(back), text);
    EXPECT_EQ(back.seed, 17u);
    EXPECT_EQ(back.peak_lr, 3.5e-4);
    EXPECT_EQ(back.loss.negatives, NegativeScope::Batch);
    EXPECT_FALSE(back.flags.refine);
}

TEST(Config, PartialFileKeepsDefaults) {
    const RunConfig c = parse("format_version = 1\n[run]\nseed = 5\n[flags]\n");
    EXPECT_EQ(c.seed, 5u);
    EXPECT_EQ(config_text(c), [] {
        RunConfig d = desk_preset();
        d.seed = 5;
        return config_text(d);
    }());
}

TEST(Config, Rejections) {
    EXPECT_THROW(parse("[run]\nseed = 5\n"), FormatError);
    EXPECT_THROW(parse("format_version = 2\n"), FormatError);
    EXPECT_THROW(parse("format_version = 1\n[run]\nsed = 5\n"), FormatError);
    EXPECT_THROW(parse("format_version = 1\n[extra]\nx = 1\n"), FormatError);
    EXPECT_THROW(parse("format_version = 1\n[run]\nseed = five\n"), FormatError);
    EXPECT_THROW(parse("format_version = 1\n[loss]\nnegatives = some\n"), FormatError);
    EXPECT_THROW(parse("format_version = 1\n[flags]\nrgrl = false\n"), DomainError);
    EXPECT_THROW(parse("format_version = 1\n[encoder]\nd = 30\n"), DomainError);
}

TEST(Config, FlagDependencies) {
    AblationFlags f{false, false, false, false};
    EXPECT_NO_THROW(f.validate());
    f.global_fusion = true;
    EXPECT_THROW(f.validate(), DomainError);
    f.guided = true;
    EXPECT_NO_THROW(f.validate());
    f = AblationFlags{false, false, true, true};
    EXPECT_THROW(f.validate(), DomainError);
    f.local_rec = true;
    EXPECT_NO_THROW(f.validate());
}

TEST(Config, Presets) {
    const RunConfig desk = preset("desk");
    EXPECT_NO_THROW(desk.validate());
    EXPECT_EQ(desk.identities_per_batch * desk.pairs_per_identity, 16u);
    EXPECT_EQ(desk.encoder.d, 64u);
    EXPECT_EQ(desk.mask_ratio, 0.15);
    const RunConfig full = preset("full-scale");
    EXPECT_EQ(full.identities_per_batch * full.pairs_per_identity, 90u);
    EXPECT_EQ(full.peak_lr, 4e-5);
    EXPECT_EQ(full.epochs, 20);
    EXPECT_THROW(preset("huge"), DomainError);
    const LossConfig l = desk.loss;
    EXPECT_EQ(l.tau_pos, 10.0);
    EXPECT_EQ(l.tau_neg, 40.0);
    EXPECT_EQ(l.alpha, 0.6);
    EXPECT_EQ(l.beta, 0.4);
    EXPECT_EQ(l.lambda_fuse, 0.25);
    EXPECT_EQ(l.lambda_rec, 0.25);
    EXPECT_EQ(l.lambda_guide, 4.0);
    EXPECT_EQ(l.refine_weight, 0.5);
}
