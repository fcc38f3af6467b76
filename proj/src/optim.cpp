#include "mmel/optim.hpp"

#include <stdexcept>
#include <string>

namespace mmel::diff {

double lr_at_epoch(const LrSchedule& schedule, int epoch) {
    double lr = schedule.base;
    for (int m : schedule.milestones) {
        if (m <= epoch) lr *= schedule.factor;
    }
    return lr;
}

SgdOptimizer::SgdOptimizer(Model& model, double lr, double momentum, double weight_decay)
    : model_(&model), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
    if (lr <= 0.0) throw std::invalid_argument("sgd: learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) {
        throw std::invalid_argument("sgd: momentum must be in [0, 1)");
    }
    if (weight_decay < 0.0) throw std::invalid_argument("sgd: weight decay must be nonnegative");
    velocity_.reserve(model.params().size());
    for (const auto& p : model.params()) {
        velocity_.emplace_back(static_cast<size_t>(p.size()), 0.0);
    }
}

void SgdOptimizer::step() {
    auto& params = model_->params();
    for (size_t pi = 0; pi < params.size(); ++pi) {
        if (!params[pi].has_grad()) {
            throw std::logic_error("sgd: parameter " + std::to_string(pi) +
                                   " has no gradient; call backward() first");
        }
    }
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto theta = params[pi].mutable_data();
        auto grad = params[pi].grad();
        auto& v = velocity_[pi];
        for (size_t i = 0; i < v.size(); ++i) {
            v[i] = momentum_ * v[i] + grad[i] + weight_decay_ * theta[i];
            theta[i] -= lr_ * v[i];
        }
        params[pi].clear_grad();
    }
}

} // namespace mmel::diff
