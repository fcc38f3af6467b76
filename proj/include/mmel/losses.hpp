#pragma once

#include "mmel/tensor.hpp"

#include <span>

namespace mmel::diff {

/// -logp[label]. logp holds one log-probability vector (any shape whose
/// total size is the class count).
Tensor cross_entropy_hard(const Tensor& logp, int64_t label);

/// -sum_c target_prob[c] * logp[c]. The target is a constant: no gradient
/// flows into it. Rejects targets that do not sum to 1 within 1e-6.
Tensor cross_entropy_soft(const Tensor& logp, std::span<const double> target_prob);

/// Mean squared error against a constant target of identical shape.
Tensor mse(const Tensor& pred, const Tensor& target);
Tensor mse(const Tensor& pred, std::span<const double> target);

} // namespace mmel::diff
