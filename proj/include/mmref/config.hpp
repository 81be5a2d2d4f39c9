#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "mmref/data.hpp"
#include "mmref/encoders.hpp"
#include "mmref/losses.hpp"
#include "mmref/optim.hpp"

namespace mmref {

struct AblationFlags {
    bool global_fusion = true;   // GF
    bool local_rec = true;       // LR
    bool guided = true;          // RGRL
    bool refine = true;          // REFINE

    /// GF or LR needs RGRL; REFINE needs a bank trained by GF or LR.
    void validate() const;
    bool trains_bank() const { return global_fusion || local_rec; }
};

struct RunConfig {
    CorpusConfig corpus;
    EncoderConfig encoder;
    LossConfig loss;
    AdamConfig adam;
    double peak_lr = 1e-3;
    int warmup_epochs = 2;
    int epochs = 30;
    std::size_t identities_per_batch = 8;
    std::size_t pairs_per_identity = 2;
    double mask_ratio = 0.15;
    std::uint64_t seed = 0;
    AblationFlags flags;
    std::string output_dir = "runs";
    std::string run_id = "run";
    int eval_every = 0;  ///< epochs between evaluations; 0 evaluates only at the end
    std::size_t ap_n = 10;

    void validate() const;
    ScheduleConfig schedule(std::size_t steps_per_epoch) const;
};

/// Desk defaults with encoder dimensions matched to the corpus.
RunConfig desk_preset();

/// Batch, epochs and learning rate of the full-scale protocol.
RunConfig full_scale_preset();

RunConfig preset(const std::string& name);

constexpr int kConfigFormatVersion = 1;

/// INI text with [run] [corpus] [encoder] [loss] [flags] sections. Missing keys
/// keep the values of `base`; unknown sections or keys are rejected.
RunConfig parse_config(std::istream& in, const RunConfig& base = desk_preset());
RunConfig load_config(const std::string& path, const RunConfig& base = desk_preset());
void write_config(std::ostream& out, const RunConfig& cfg);

}  // namespace mmref
