#include "mmel/features.hpp"

#include <cmath>
#include <stdexcept>

namespace mmel::features {

using augment::ImagePayload;
using augment::Payload;
using augment::TextPayload;

Normalization image_normalization(std::span<const augment::Sample> samples) {
    Normalization norm;
    const ImagePayload* first = nullptr;
    for (const auto& s : samples) {
        if ((first = std::get_if<ImagePayload>(&s.payload))) break;
    }
    if (!first) return norm;

    const size_t channels = static_cast<size_t>(first->channels);
    std::vector<double> sum(channels, 0.0), sumsq(channels, 0.0);
    std::vector<int64_t> count(channels, 0);
    for (const auto& s : samples) {
        const auto* img = std::get_if<ImagePayload>(&s.payload);
        if (!img) continue;
        for (size_t c = 0; c < channels; ++c) {
            const float* p = img->data.data() + c * img->plane();
            for (size_t i = 0; i < img->plane(); ++i) {
                sum[c] += p[i];
                sumsq[c] += static_cast<double>(p[i]) * p[i];
            }
            count[c] += static_cast<int64_t>(img->plane());
        }
    }
    norm.mean.resize(channels);
    norm.stddev.resize(channels);
    for (size_t c = 0; c < channels; ++c) {
        const double n = static_cast<double>(count[c]);
        norm.mean[c] = sum[c] / n;
        const double var = sumsq[c] / n - norm.mean[c] * norm.mean[c];
        norm.stddev[c] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    return norm;
}

diff::Tensor batch_from_payloads(std::span<const augment::Payload* const> payloads,
                                 const diff::Shape& per_sample, const Normalization& norm) {
    const auto n = static_cast<int>(payloads.size());
    diff::Shape shape;
    shape.push_back(n);
    shape.insert(shape.end(), per_sample.begin(), per_sample.end());
    const int64_t stride = diff::numel(per_sample);
    std::vector<double> data(static_cast<size_t>(n) * stride);

    for (int b = 0; b < n; ++b) {
        double* dst = data.data() + static_cast<size_t>(b) * stride;
        const Payload& p = *payloads[static_cast<size_t>(b)];
        if (const auto* img = std::get_if<ImagePayload>(&p)) {
            if (per_sample.size() != 3 || per_sample[0] != img->channels ||
                per_sample[1] != img->height || per_sample[2] != img->width) {
                throw std::invalid_argument("payload shape [" + std::to_string(img->channels) +
                                            "," + std::to_string(img->height) + "," +
                                            std::to_string(img->width) +
                                            "] does not match model input " +
                                            diff::shape_str(per_sample));
            }
            for (int c = 0; c < img->channels; ++c) {
                const double mean = norm.identity() ? 0.0 : norm.mean[static_cast<size_t>(c)];
                const double inv =
                    norm.identity() ? 1.0 : 1.0 / norm.stddev[static_cast<size_t>(c)];
                const float* src = img->data.data() + c * img->plane();
                double* out = dst + static_cast<size_t>(c) * img->plane();
                for (size_t i = 0; i < img->plane(); ++i) {
                    out[i] = (static_cast<double>(src[i]) - mean) * inv;
                }
            }
        } else {
            if (per_sample.size() != 1) {
                throw std::invalid_argument("token payloads need a rank-1 model input, got " +
                                            diff::shape_str(per_sample));
            }
            const auto& tokens = std::get<TextPayload>(p).tokens;
            const int vocab = per_sample[0];
            for (int t : tokens) {
                if (t < 0 || t >= vocab) {
                    throw std::invalid_argument("token " + std::to_string(t) +
                                                " outside vocab of " + std::to_string(vocab));
                }
                dst[t] += 1.0;
            }
            if (!tokens.empty()) {
                const double inv = 1.0 / static_cast<double>(tokens.size());
                for (int64_t i = 0; i < stride; ++i) dst[i] *= inv;
            }
        }
    }
    return diff::Tensor::from_data(std::move(shape), std::move(data));
}

diff::Tensor single_input(const augment::Payload& payload, const diff::Shape& per_sample,
                          const Normalization& norm) {
    const augment::Payload* ptr = &payload;
    return batch_from_payloads(std::span<const augment::Payload* const>(&ptr, 1), per_sample,
                               norm);
}

} // namespace mmel::features
