#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace mmel {

/// Counter-based deterministic random stream.
///
/// A stream is derived from arbitrary key material (run seed, sample id,
/// augmentation index, operation tag, ...) and its outputs depend only on
/// that key and the draw counter. Streams are therefore reproducible
/// bit-for-bit across runs, platforms and thread schedules, and two
/// streams with different keys are statistically independent.
class RngStream {
public:
    RngStream() = default;

    static RngStream keyed(std::initializer_list<uint64_t> keys);

    uint64_t next_u64();

    /// Uniform double in [0, 1) with 53 random bits.
    double next_double();

    /// Uniform integer in {0, ..., bound-1}. bound must be positive.
    uint64_t next_below(uint64_t bound);

    /// Standard normal via Box-Muller.
    double next_normal();

private:
    uint64_t state_ = 0;
    uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// FNV-1a 64-bit hash; used to key streams by string ids and to digest
/// input files for run manifests.
uint64_t fnv1a64(std::string_view bytes);

} // namespace mmel
