#include "mmel/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mmel::diff {

Tensor cross_entropy_hard(const Tensor& logp, int64_t label) {
    if (!logp.defined() || logp.size() == 0) {
        throw std::invalid_argument("cross_entropy_hard: empty log-probability vector");
    }
    if (label < 0 || label >= logp.size()) {
        throw std::out_of_range("cross_entropy_hard: label " + std::to_string(label) +
                                " outside [0, " + std::to_string(logp.size()) + ")");
    }
    return pick_negative(logp, label);
}

Tensor cross_entropy_soft(const Tensor& logp, std::span<const double> target_prob) {
    if (!logp.defined() || logp.size() != static_cast<int64_t>(target_prob.size())) {
        throw std::invalid_argument("cross_entropy_soft: target has " +
                                    std::to_string(target_prob.size()) + " classes, logp has " +
                                    std::to_string(logp.defined() ? logp.size() : 0));
    }
    double s = 0.0;
    for (double v : target_prob) s += v;
    if (std::abs(s - 1.0) > 1e-6) {
        throw std::invalid_argument("cross_entropy_soft: target sums to " + std::to_string(s) +
                                    ", not a probability vector");
    }
    return negative_dot_const(logp, std::vector<double>(target_prob.begin(), target_prob.end()));
}

Tensor mse(const Tensor& pred, const Tensor& target) {
    if (!pred.defined() || !target.defined() || pred.shape() != target.shape()) {
        throw std::invalid_argument("mse: shape mismatch");
    }
    return mse_to_const(pred, std::vector<double>(target.data().begin(), target.data().end()));
}

Tensor mse(const Tensor& pred, std::span<const double> target) {
    if (!pred.defined() || pred.size() != static_cast<int64_t>(target.size())) {
        throw std::invalid_argument("mse: shape mismatch");
    }
    return mse_to_const(pred, std::vector<double>(target.begin(), target.end()));
}

} // namespace mmel::diff
