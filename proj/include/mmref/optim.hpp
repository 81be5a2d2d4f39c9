#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "mmref/graph.hpp"

namespace mmref {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct MomentPair {
    Tensor first;
    Tensor second;
};

/// Bias-corrected Adam. Moments are keyed by parameter name so the state can
/// be checkpointed and restored independently of object addresses.
class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    /// One update of every parameter from its accumulated grad.
    void step(const ParameterList& params, double lr);

    std::int64_t step_count() const { return step_; }
    const AdamConfig& config() const { return config_; }

    const std::map<std::string, MomentPair>& moments() const { return moments_; }
    void restore(std::int64_t step, std::map<std::string, MomentPair> moments);

private:
    AdamConfig config_;
    std::int64_t step_ = 0;
    std::map<std::string, MomentPair> moments_;
};

/// Linear warmup from 0 to peak, then linear decay to 0 at the final step.
struct ScheduleConfig {
    double peak_lr = 4e-5;
    int warmup_epochs = 2;
    int total_epochs = 20;
    int steps_per_epoch = 1;

    std::int64_t total_steps() const { return static_cast<std::int64_t>(total_epochs) * steps_per_epoch; }
    void validate() const;
};

double lr_at(std::int64_t step, const ScheduleConfig& cfg);

}  // namespace mmref
