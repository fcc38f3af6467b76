#pragma once

#include "mmel/engine.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mmel::cli {

/// One CIFAR-10 binary batch: records of 3073 bytes (label, then R/G/B
/// planes of a 32x32 image, row-major), pixels scaled to [0,1].
/// Rejects files whose size is not a multiple of 3073 and labels > 9.
engine::Dataset load_cifar_binary(const std::string& path);

/// Raw IDX array (big-endian header). Accepts magic 0x00000801 (labels)
/// and 0x00000803 (images).
struct IdxArray {
    uint32_t magic = 0;
    std::vector<int> dims;
    std::vector<uint8_t> data;
};
IdxArray load_idx(const std::string& path);

/// Pairs an IDX image file with an IDX label file into a dataset with
/// [1,H,W] payloads.
engine::Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path);

/// Gaussian clusters with grid-separated means inside [0,1]^dim, stored
/// as [1,1,dim] payloads. Deterministic in the seed.
engine::Dataset make_blobs(int n, int classes, int dim, uint64_t seed);

/// Desk-scale 3x32x32 stand-in for natural images: class-specific wave +
/// bump templates under random translation, brightness jitter and pixel
/// noise, so translation-style augmentation carries real signal.
engine::Dataset make_synth_images(int n, int classes, uint64_t seed);

/// Token sequences with class-dependent unigram statistics.
engine::Dataset make_text_blobs(int n, int classes, int vocab, int seq_len, uint64_t seed);

} // namespace mmel::cli
