#pragma once

#include <cstdint>
#include <vector>

#include "spritediff/rng.hpp"
#include "spritediff/tensor.hpp"
#include "spritediff/vocab.hpp"

namespace spritediff {

inline constexpr int kImageSize = 32;

// Identity = what must survive re-posing and background swaps. The detail
// pattern is a small pixel motif (4..25 foreground pixels) that captions do
// not fully describe, so it can only be reproduced from the reference.
struct SpriteIdentity {
    ShapeClass shape = ShapeClass::Circle;
    int base_color = 0;
    PatternType pattern = PatternType::Stripes;
    int pattern_color = 1;

    bool operator==(const SpriteIdentity&) const = default;
};

// Finite pose grids keep the attribute probes exact on rendered output.
struct Pose {
    int cx = 16, cy = 16;    // pixel center
    int radius = 8;          // 6..10
    double rot = 0.0;        // radians, multiples of 5 degrees in [-20, 20]
};

struct BackgroundSpec {
    bool gradient = false;
    int color_a = 0;  // solid color, or gradient start
    int color_b = 0;  // gradient end
    bool horizontal = true;
};

struct Sprite {
    SpriteIdentity id;
    Pose pose;
    BackgroundSpec bg;
};

struct SpriteSample {
    Tensor image;  // [3,32,32] in [-1,1]
    Tensor mask;   // [1,32,32] in {0,1}, exact foreground coverage
    Caption caption;
    Sprite sprite;
};

// Rasterizer used both by the dataset generator and by the shape probe
// (shared so template matching can be exact on rendered sprites).
bool point_in_shape(ShapeClass shape, double x, double y);  // unit frame
void render_shape_mask(ShapeClass shape, const Pose& pose, std::vector<uint8_t>& mask);

void render_sprite(const Sprite& s, Tensor& image, Tensor& mask);
std::vector<int> pattern_pixels(const Sprite& s, const std::vector<uint8_t>& fg);  // flat indices

Sprite sample_sprite(Rng& rng);
Caption caption_for(const Sprite& s, bool detailed);

// Deterministic in seed; marginals approximately uniform; captions carry the
// detail word with probability ~0.3.
std::vector<SpriteSample> gen_dataset(int n, uint64_t seed);

// Pose grids (exposed for the probes).
const std::vector<int>& pose_radii();
const std::vector<double>& pose_rotations();

}  // namespace spritediff
