#pragma once

#include "mmel/model.hpp"

#include <vector>

namespace mmel::diff {

struct LrSchedule {
    double base = 0.1;
    std::vector<int> milestones; // strictly increasing epochs
    double factor = 0.2;
};

/// base * factor^(number of milestones <= epoch). Total in epoch.
double lr_at_epoch(const LrSchedule& schedule, int epoch);

/// SGD with momentum and (coupled) weight decay:
///   v <- momentum * v + grad + weight_decay * theta
///   theta <- theta - lr * v
/// step() requires every parameter gradient to be populated and clears
/// them afterwards.
class SgdOptimizer {
public:
    SgdOptimizer(Model& model, double lr, double momentum, double weight_decay);

    void step();
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    Model* model_;
    double lr_;
    double momentum_;
    double weight_decay_;
    std::vector<std::vector<double>> velocity_;
};

} // namespace mmel::diff
