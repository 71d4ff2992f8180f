#include "spritediff/rng.hpp"

#include <cmath>

#include "spritediff/errors.hpp"

namespace spritediff {

namespace {

inline uint64_t splitmix64_finalize(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(uint64_t seed, uint64_t stream)
    : seed_(splitmix64_finalize(seed ^ splitmix64_finalize(stream * 0xD1B54A32D192ED03ULL + 1))) {}

Rng Rng::substream(uint64_t tag) const {
    return Rng(seed_, tag);
}

uint64_t Rng::next_u64() {
    ++counter_;
    return splitmix64_finalize(counter_ * 0x9E3779B97F4A7C15ULL ^ seed_);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double Rng::gaussian() {
    // u1 in (0,1] so log() stays finite.
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

uint64_t Rng::next_below(uint64_t n) {
    if (n == 0) throw ValueError("Rng::next_below: n must be positive");
    // Multiply-shift rejection-free mapping; bias is < 2^-53 for our n.
    return static_cast<uint64_t>(uniform() * static_cast<double>(n)) % n;
}

}  // namespace spritediff
