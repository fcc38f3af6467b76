#pragma once

#include "mmel/rng.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace mmel::augment {

/// C x H x W image with values in [0, 1]. Stored as f32; all arithmetic
/// downstream happens in f64.
struct ImagePayload {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data; // channels * height * width, row-major

    size_t plane() const { return static_cast<size_t>(height) * width; }
    size_t size() const { return static_cast<size_t>(channels) * plane(); }
};

struct TextPayload {
    std::vector<int> tokens;
};

using Payload = std::variant<ImagePayload, TextPayload>;

/// Class index, real regression target, or soft distribution.
using Label = std::variant<int, double, std::vector<double>>;

struct Sample {
    std::string id;
    Payload payload;
    Label label;
};

/// An original sample with its augmented variants. The original is always
/// members[0]; member_targets carries the per-member training target
/// (ground-truth copies, or teacher outputs after relabeling).
struct AugmentedGroup {
    std::string id;
    std::vector<Sample> members;
    std::vector<Label> member_targets;
    /// Teacher prediction for the original; cached by the relabeling pass
    /// so soft-mode agreement checks need no live teacher. Not serialized.
    std::optional<Label> teacher_reference;

    const Sample& original() const { return members.front(); }
    size_t size() const { return members.size(); }

    /// Checks the structural invariants; throws naming the group id.
    void validate() const;
};

/// Ranks the vocabulary by predicted likelihood at one masked position.
///
/// Contract: context[masked_pos] holds the token being replaced; other
/// still-masked positions hold kMaskedToken. The returned ranking is a
/// prefix of a vocabulary permutation, most likely first.
class TokenPredictor {
public:
    virtual ~TokenPredictor() = default;
    virtual std::vector<int> rank(const std::vector<int>& context, size_t masked_pos) const = 0;
    virtual int vocab_size() const = 0;
};

inline constexpr int kMaskedToken = -1;

/// Unigram-frequency predictor over a training corpus. Context-free: the
/// ranking is the global frequency order (ties to the lower token id),
/// except that the token being replaced never occupies rank 1.
class UnigramPredictor final : public TokenPredictor {
public:
    UnigramPredictor(std::span<const std::vector<int>> corpus, int vocab);

    std::vector<int> rank(const std::vector<int>& context, size_t masked_pos) const override;
    int vocab_size() const override { return vocab_; }

private:
    int vocab_ = 0;
    std::vector<int> by_frequency_; // token ids, most frequent first
};

// --- deterministic transforms ----------------------------------------------

/// Zero-pads by `pad` on each side and crops back to H x W at an offset
/// drawn uniformly from [0, 2*pad]^2.
ImagePayload pad_crop(const ImagePayload& image, int pad, RngStream& rng);

/// Mirrors along the width with probability p.
ImagePayload hflip(const ImagePayload& image, RngStream& rng, double p = 0.5);

struct ImageAugmentOptions {
    int pad = 4;
    double flip_p = 0.5;
};

/// Group of n_aug + 1 members: the original first, then transformed copies
/// from per-(sample, index) keyed streams. Member labels are copied from
/// the original.
AugmentedGroup build_image_group(const Sample& sample, int n_aug, const ImageAugmentOptions& opt,
                                 uint64_t seed);

/// Greedy masked-token augmentation: masks k = max(1, round(mask_ratio *
/// len)) positions once, then emits n_aug sequences. Sequence i takes the
/// predictor's i-th ranked token at the first masked position and the
/// top-ranked token at the remaining positions, filled left to right.
std::vector<std::vector<int>> greedy_text_augment(const std::vector<int>& tokens,
                                                  double mask_ratio, int n_aug,
                                                  const TokenPredictor& predictor, uint64_t seed);

AugmentedGroup build_text_group(const Sample& sample, int n_aug, double mask_ratio,
                                const TokenPredictor& predictor, uint64_t seed);

// --- offline group files (JSON-lines) ---------------------------------------

void save_offline_groups(const std::string& path, std::span<const AugmentedGroup> groups);

/// Parses and validates a JSON-lines group file. Malformed lines report
/// their line number; invariant violations name the group id.
std::vector<AugmentedGroup> load_offline_groups(const std::string& path);

} // namespace mmel::augment
