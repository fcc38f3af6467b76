#pragma once

#include <span>
#include <string>
#include <vector>

namespace mmel::reweight {

/// Point on the probability simplex over a group's members.
struct WeightVector {
    std::vector<double> w;

    /// Validates the simplex invariants (entries >= 0, sum within tol of 1).
    static WeightVector checked(std::vector<double> values, double tol = 1e-12);

    size_t size() const { return w.size(); }
    double operator[](size_t i) const { return w[i]; }
    std::span<const double> values() const { return w; }
};

enum class LossMode { Hard, Soft };

struct MmelConfig {
    double lambda_p = 1.0; // KL regularization strength
    double lambda_t = 1.0; // soft-loss divergence coefficient
    LossMode mode = LossMode::Hard;
    bool detach_weights = true;
    double regression_threshold = 0.5;

    void validate() const; // lambda_p > 0, lambda_t > 0
};

/// KL(w || uniform) = sum_i w_i * ln(n * w_i), with 0 * ln 0 := 0.
/// Nonnegative; zero exactly at the uniform distribution.
double kl_to_uniform(const WeightVector& w);

/// Regularized expected loss of one group:
///   sum_i w_i * losses_i - lambda_p * KL(w || uniform).
double expected_loss(std::span<const double> losses, const WeightVector& w, double lambda_p);

/// Closed-form maximizer of expected_loss over the simplex:
///   w_i = softmax(losses / lambda_p)_i,
/// computed with max-subtraction. Larger losses get larger weights.
WeightVector mmel_weights(std::span<const double> losses, double lambda_p);

struct HardObjective {
    double value = 0.0;
    WeightVector weights;
};

/// Maximal regularized expected loss and its maximizer. The value equals
/// lambda_p * ln(mean(exp(losses / lambda_p))) (log-mean-exp identity);
/// it is returned via the expected_loss route, the identity serves as an
/// independent cross-check.
HardObjective hard_objective(std::span<const double> losses, double lambda_p);

/// Stable lambda_p * ln((1/n) * sum exp(losses_i / lambda_p)).
double log_mean_exp_objective(std::span<const double> losses, double lambda_p);

/// Weights over the augmented members only (the original excluded):
/// softmax of the divergence losses scaled by 1 / lambda_p.
/// Throws on an empty vector (a size-1 group has no divergence terms).
WeightVector soft_weights(std::span<const double> divergence_losses, double lambda_p);

struct SoftObjective {
    double value = 0.0;
    WeightVector weights;
};

/// Soft-mode group objective:
///   orig_loss + lambda_t * (sum_i w_i * div_i - lambda_p * sum_i w_i * ln(m * w_i))
/// with m = len(divergence_losses) and w = soft_weights(div, lambda_p).
SoftObjective soft_objective(double orig_loss, std::span<const double> divergence_losses,
                             const MmelConfig& cfg);

} // namespace mmel::reweight
