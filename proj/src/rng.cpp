#include "mmel/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace mmel {

namespace {

// splitmix64 finalizer (Steele, Lea, Flood 2014). Full avalanche, so
// sequential counters map to well-distributed words.
uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

} // namespace

RngStream RngStream::keyed(std::initializer_list<uint64_t> keys) {
    RngStream s;
    s.state_ = 0x243f6a8885a308d3ULL; // pi fractional bits
    for (uint64_t k : keys) {
        s.state_ = mix64((s.state_ + kGolden) ^ k);
    }
    return s;
}

uint64_t RngStream::next_u64() {
    counter_ += 1;
    return mix64(state_ + counter_ * kGolden);
}

double RngStream::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

uint64_t RngStream::next_below(uint64_t bound) {
    if (bound == 0) {
        throw std::invalid_argument("RngStream::next_below: bound must be positive");
    }
    // Lemire's multiply-shift; bias is < 2^-64 per draw, irrelevant here.
    return static_cast<uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
}

double RngStream::next_normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // u1 in (0,1] so the log is finite.
    const double u1 = 1.0 - next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

uint64_t fnv1a64(std::string_view bytes) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace mmel
