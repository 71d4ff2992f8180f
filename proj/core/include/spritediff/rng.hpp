#pragma once

#include <cstdint>

namespace spritediff {

// Counter-based deterministic generator. The algorithm is a fixed constant of
// this repo: draw i from stream (seed, stream_id) is
//
//   splitmix64_finalize( (counter + 1) * 0x9E3779B97F4A7C15 ^ seed' )
//
// where seed' mixes seed and stream_id through the same finalizer. There is
// no hidden state beyond (seed, counter), so identical seed + call sequence
// yields an identical stream on every platform, and independent substreams
// can be derived as pure functions of a tag (used for per-step training
// randomness so that resumed runs replay bit-exactly).
class Rng {
public:
    Rng() : Rng(0) {}
    explicit Rng(uint64_t seed, uint64_t stream = 0);

    // Independent generator derived from this one's seed and a tag.
    Rng substream(uint64_t tag) const;

    uint64_t next_u64();
    // Uniform in [0, 1): 53 mantissa bits of the next draw.
    double uniform();
    double uniform(double lo, double hi);
    // Standard normal via Box-Muller; consumes exactly two uniforms per call.
    double gaussian();
    // Uniform integer in [0, n), n > 0.
    uint64_t next_below(uint64_t n);

    uint64_t seed() const { return seed_; }
    uint64_t counter() const { return counter_; }

private:
    uint64_t seed_;
    uint64_t counter_ = 0;
};

}  // namespace spritediff
