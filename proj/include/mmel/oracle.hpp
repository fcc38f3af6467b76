#pragma once

#include "mmel/model.hpp"
#include "mmel/reweight.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace mmel::oracle {

/// Euclidean projection onto the probability simplex (sort-based,
/// O(n log n)).
std::vector<double> project_to_simplex(std::span<const double> v);

struct AscentResult {
    reweight::WeightVector weights;
    double value = 0.0;  // expected_loss at the returned point
    int iterations = 0;
    bool converged = true; // false when max_iters ran out first
};

/// Maximizes w -> expected_loss(losses, w, lambda_p) over the simplex by
/// projected gradient ascent, deliberately ignoring the closed form.
/// Gradient: losses_i - lambda_p * (ln(n * w_i) + 1), with w_i clipped to
/// >= 1e-15 inside the ln. Each iteration starts from the nominal step
/// 0.1 * lambda_p / (1 + loss spread) and halves it until the step
/// improves the objective; stops when the improvement drops below tol or
/// max_iters is reached (best iterate returned either way).
AscentResult simplex_maximize(std::span<const double> losses, double lambda_p,
                              int max_iters = 200000, double tol = 1e-16);

/// Exhaustive simplex scan at the given resolution; the second, dumber
/// oracle. Only n <= 3 (combinatorial blowup beyond that).
reweight::WeightVector grid_maximize(std::span<const double> losses, double lambda_p,
                                     double resolution);

/// Central finite differences (L(p + eps) - L(p - eps)) / (2 eps) for
/// every parameter scalar, with the tape disabled. loss_fn must be a pure
/// function of the parameters and the batch.
std::vector<std::vector<double>> finite_diff_grad(
    diff::Model& model,
    const std::function<double(diff::Model&, const diff::Tensor&)>& loss_fn,
    const diff::Tensor& batch, double eps = 1e-5);

/// max |a - b| normalized by the largest entry magnitude of either side
/// (with a small floor so all-zero gradients compare cleanly).
double relative_gap(const std::vector<std::vector<double>>& a,
                    const std::vector<std::vector<double>>& b);

struct OracleReport {
    std::vector<double> losses;
    double lambda_p = 0.0;
    reweight::WeightVector oracle_w; // projected gradient ascent
    reweight::WeightVector closed_w; // softmax closed form
    double linf_gap = 0.0;           // max |oracle_w - closed_w|
    double value_gap = 0.0;          // |expected_loss(closed_w) - log-mean-exp|
    int iterations = 0;
    bool converged = true;
};

/// Random instances (n in [2,8], losses ~ U[0,5], lambda_p in {0.1,1,10});
/// each report compares the ascent maximizer against the closed form and
/// the objective value against the log-mean-exp identity.
std::vector<OracleReport> verify_theorem1(int num_instances, uint64_t seed);

struct GroupGradCheck {
    double hard_gap = 0.0; // worst relative gap over the hard-mode seeds
    double soft_gap = 0.0; // worst relative gap over the soft-mode seeds
    int seeds = 0;
};

/// Differentiates the hard and soft group objectives of random tiny MLPs
/// through the tape and compares against central finite differences of
/// the corresponding maximal objective (log-mean-exp of the member
/// losses, soft targets frozen at the base parameters). With detached
/// weights the two agree by the envelope argument: the weights maximize
/// the regularized objective, so their variation contributes no
/// first-order term.
GroupGradCheck check_group_gradients(int seeds, double eps = 1e-5);

} // namespace mmel::oracle
