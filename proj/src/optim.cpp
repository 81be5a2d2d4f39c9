#include "mmref/optim.hpp"

#include <cmath>

namespace mmref {

void Adam::step(const ParameterList& params, double lr) {
    if (!(lr >= 0.0)) throw DomainError("adam: negative learning rate");
    for (const Parameter* p : params) {
        if (!p->grad.same_shape(p->value)) {
            throw ShapeError("adam: gradient " + shape_string(p->grad.shape()) + " for parameter '" + p->name +
                             "' of shape " + shape_string(p->value.shape()));
        }
        auto it = moments_.find(p->name);
        if (it != moments_.end() && !it->second.first.same_shape(p->value)) {
            throw ShapeError("adam: moment shape mismatch for '" + p->name + "'");
        }
    }
    ++step_;
    const double t = static_cast<double>(step_);
    const double c1 = 1.0 - std::pow(config_.beta1, t);
    const double c2 = 1.0 - std::pow(config_.beta2, t);
    for (Parameter* p : params) {
        auto [it, inserted] = moments_.try_emplace(p->name);
        if (inserted) it->second = MomentPair{Tensor::zeros(p->value.shape()), Tensor::zeros(p->value.shape())};
        auto m = it->second.first.values();
        auto v = it->second.second.values();
        auto g = p->grad.values();
        auto w = p->value.values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
}

void Adam::restore(std::int64_t step, std::map<std::string, MomentPair> moments) {
    if (step < 0) throw DomainError("adam: negative step counter");
    step_ = step;
    moments_ = std::move(moments);
}

void ScheduleConfig::validate() const {
    if (!(peak_lr > 0.0)) throw DomainError("schedule: peak-lr must be > 0");
    if (warmup_epochs <= 0 || warmup_epochs >= total_epochs) {
        throw DomainError("schedule: need 0 < warmup-epochs < total-epochs");
    }
    if (steps_per_epoch <= 0) throw DomainError("schedule: steps-per-epoch must be > 0");
}

double lr_at(std::int64_t step, const ScheduleConfig& cfg) {
    cfg.validate();
    const std::int64_t total = cfg.total_steps();
    if (step < 0 || step > total) {
        throw DomainError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
    }
    const std::int64_t warm = static_cast<std::int64_t>(cfg.warmup_epochs) * cfg.steps_per_epoch;
    if (step <= warm) return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warm);
    return cfg.peak_lr * static_cast<double>(total - step) / static_cast<double>(total - warm);
}

}  // namespace mmref
