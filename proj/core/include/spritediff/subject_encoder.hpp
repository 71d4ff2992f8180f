#pragma once

#include <array>
#include <vector>

#include "spritediff/attention.hpp"
#include "spritediff/params.hpp"
#include "spritediff/rng.hpp"
#include "spritediff/tensor.hpp"

namespace spritediff {

// Four-stage stride-2 conv pyramid with fixed weights, standing in for a
// frozen pretrained image backbone. The weights are a repo constant (seeded
// below), shared verbatim by the subject encoder and the identity metric.
struct FeaturePyramid {
    static constexpr uint64_t kWeightSeed = 0x50595244;  // "PYRD"
    static constexpr int kStages = 4;

    std::vector<Tensor> conv_w, conv_b;  // stage k: 3x3 conv, stride (k ? 2 : 1)
    std::vector<int> channels;           // {16, 32, 64, 128}
    std::vector<int> resolutions;        // {32, 16, 8, 4}

    static const FeaturePyramid& fixed();
    // Per-stage feature maps for x[B,3,32,32]; weights never require grad.
    std::vector<Tensor> forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamMap& out) const;
};

struct EncoderConfig {
    std::vector<int> tap_layers = {0, 1, 2, 3};  // pyramid stages to concatenate
    int out_dim = 64;                            // C_se
    int n_resblocks = 2;
    void validate() const;
};

// Background removal: background pixels become fill (default white = data
// range max), foreground stays untouched. Mask must be binary with at least
// one foreground pixel.
Tensor remove_background(const Tensor& img, const Tensor& mask,
                         const std::array<double, 3>& fill = {1.0, 1.0, 1.0});

// Average-pool the [B,1,32,32] mask to res x res, threshold at 0.5 with ties
// rounding to foreground; flattened row-major to [B, res*res].
Tensor downsample_mask(const Tensor& mask, int res);

// Fixed layout-conditioning channel: the silhouette pooled to 8x8 and blown
// back up, so it carries position and size but not fine shape.
Tensor layout_channel(const Tensor& mask);

// Deterministic augmentation for subject-encoder pretraining: horizontal
// flip, scale/rotate from finite grids, and an elastic-style coordinate
// jitter. White fill outside.
Tensor augment_subject_image(const Tensor& img_clean, Rng& rng);

// Trainable adapter on top of the frozen pyramid: channel-concatenated taps
// pooled to the coarsest tap resolution, then residual blocks down to
// out_dim, flattened to a token sequence.
struct SubjectEncoder {
    struct ResBlock {
        Tensor gn1_g, gn1_b, conv1_w, conv1_b;
        Tensor gn2_g, gn2_b, conv2_w, conv2_b;
        Tensor skip_w, skip_b;
        bool has_skip = false;
        int groups = 8;
    };

    EncoderConfig cfg;
    FeaturePyramid pyramid;  // fixed weights, serialized for self-containment
    std::vector<ResBlock> blocks;
    int token_res = 4;

    static SubjectEncoder create(const EncoderConfig& cfg, Rng& rng);
    // img_clean: [B,3,32,32], already background-removed.
    Tensor encode_tokens(const Tensor& img_clean) const;  // [B, token_res^2, out_dim]
    SubjectFeatures encode(const Tensor& img_clean, double beta) const;

    void collect(const std::string& prefix, ParamMap& out) const;
    std::vector<Tensor> adapter_parameters() const;  // the trainable subset
};

}  // namespace spritediff
