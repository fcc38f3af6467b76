#pragma once

#include "mmel/augment.hpp"
#include "mmel/tensor.hpp"

#include <span>
#include <vector>

namespace mmel::features {

/// Per-channel normalization for image payloads; empty vectors mean
/// identity (used for token tasks).
struct Normalization {
    std::vector<double> mean;
    std::vector<double> stddev;

    bool identity() const { return mean.empty(); }
};

/// Mean/std per channel over the training split's original samples.
/// Constant channels get stddev 1.
Normalization image_normalization(std::span<const augment::Sample> samples);

/// Model input for a batch of payloads.
/// Images: [n, C, H, W], normalized per channel.
/// Token sequences: [n, vocab] relative token counts; per_sample must be
/// the rank-1 [vocab] shape.
diff::Tensor batch_from_payloads(std::span<const augment::Payload* const> payloads,
                                 const diff::Shape& per_sample, const Normalization& norm);

diff::Tensor single_input(const augment::Payload& payload, const diff::Shape& per_sample,
                          const Normalization& norm);

} // namespace mmel::features
