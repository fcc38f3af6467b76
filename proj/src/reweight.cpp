#include "mmel/reweight.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmel::reweight {

namespace {

void check_finite(std::span<const double> losses, const char* who) {
    for (double v : losses) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument(std::string(who) + ": non-finite loss value");
        }
    }
}

// softmax(values / lambda_p) with max-subtraction. Subtracting the max
// first keeps every exponent <= 0, so the result is shift-invariant at
// the bit level and never overflows.
std::vector<double> softmax_over_lambda(std::span<const double> values, double lambda_p) {
    const size_t n = values.size();
    std::vector<double> w(n);
    double m = values[0];
    for (size_t i = 1; i < n; ++i) m = std::max(m, values[i]);
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) {
        w[i] = std::exp((values[i] - m) / lambda_p);
        s += w[i];
    }
    for (size_t i = 0; i < n; ++i) w[i] /= s;
    return w;
}

} // namespace

WeightVector WeightVector::checked(std::vector<double> values, double tol) {
    if (values.empty()) throw std::invalid_argument("WeightVector: empty");
    double s = 0.0;
    for (double v : values) {
        if (!(v >= 0.0)) throw std::invalid_argument("WeightVector: negative entry");
        s += v;
    }
    if (std::abs(s - 1.0) > tol) {
        throw std::invalid_argument("WeightVector: sum " + std::to_string(s) +
                                    " deviates from 1 beyond tolerance");
    }
    return WeightVector{std::move(values)};
}

void MmelConfig::validate() const {
    if (!(lambda_p > 0.0)) throw std::invalid_argument("MmelConfig: lambda_p must be positive");
    if (!(lambda_t > 0.0)) throw std::invalid_argument("MmelConfig: lambda_t must be positive");
}

double kl_to_uniform(const WeightVector& w) {
    const double n = static_cast<double>(w.size());
    double kl = 0.0;
    for (double v : w.w) {
        if (v > 0.0) kl += v * std::log(n * v);
    }
    // Roundoff can leave a tiny negative residue at the uniform point.
    return kl > 0.0 ? kl : 0.0;
}

double expected_loss(std::span<const double> losses, const WeightVector& w, double lambda_p) {
    if (losses.size() != w.size()) {
        throw std::invalid_argument("expected_loss: " + std::to_string(losses.size()) +
                                    " losses vs " + std::to_string(w.size()) + " weights");
    }
    double acc = 0.0;
    for (size_t i = 0; i < losses.size(); ++i) acc += w[i] * losses[i];
    return acc - lambda_p * kl_to_uniform(w);
}

WeightVector mmel_weights(std::span<const double> losses, double lambda_p) {
    if (losses.empty()) throw std::invalid_argument("mmel_weights: empty loss vector");
    if (!(lambda_p > 0.0)) throw std::invalid_argument("mmel_weights: lambda_p must be positive");
    check_finite(losses, "mmel_weights");
    return WeightVector{softmax_over_lambda(losses, lambda_p)};
}

double log_mean_exp_objective(std::span<const double> losses, double lambda_p) {
    if (losses.empty()) throw std::invalid_argument("log_mean_exp_objective: empty loss vector");
    double m = losses[0];
    for (double v : losses) m = std::max(m, v);
    double s = 0.0;
    for (double v : losses) s += std::exp((v - m) / lambda_p);
    return m + lambda_p * std::log(s / static_cast<double>(losses.size()));
}

HardObjective hard_objective(std::span<const double> losses, double lambda_p) {
    WeightVector w = mmel_weights(losses, lambda_p);
    return HardObjective{expected_loss(losses, w, lambda_p), std::move(w)};
}

WeightVector soft_weights(std::span<const double> divergence_losses, double lambda_p) {
    if (divergence_losses.empty()) {
        throw std::invalid_argument(
            "soft_weights: group has no augmented members (|B| = 1 in soft mode)");
    }
    if (!(lambda_p > 0.0)) throw std::invalid_argument("soft_weights: lambda_p must be positive");
    check_finite(divergence_losses, "soft_weights");
    return WeightVector{softmax_over_lambda(divergence_losses, lambda_p)};
}

SoftObjective soft_objective(double orig_loss, std::span<const double> divergence_losses,
                             const MmelConfig& cfg) {
    cfg.validate();
    WeightVector w = soft_weights(divergence_losses, cfg.lambda_p);
    const double block = expected_loss(divergence_losses, w, cfg.lambda_p);
    return SoftObjective{orig_loss + cfg.lambda_t * block, std::move(w)};
}

} // namespace mmel::reweight
