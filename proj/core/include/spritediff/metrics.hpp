#pragma once

#include <optional>
#include <vector>

#include "spritediff/sprites.hpp"
#include "spritediff/subject_encoder.hpp"
#include "spritediff/tensor.hpp"
#include "spritediff/vocab.hpp"

namespace spritediff {

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Deterministic background model from the border ring: each interior pixel
// is predicted by row/column interpolation of the border (exact for solid
// and linear-gradient backgrounds); pixels far from the prediction are
// foreground. Falls back to the single most deviant pixel so the mask is
// never empty.
Tensor estimate_foreground_mask(const Tensor& img);  // [3,H,W] -> [1,H,W]

// Pooled per-stage pyramid features of the background-removed image,
// weighted by the (soft-downsampled) foreground mask.
std::vector<double> identity_embedding(const Tensor& img, const Tensor& mask,
                                       const FeaturePyramid& enc);

// Cosine similarity of pooled, background-removed embeddings. Masks default
// to the deterministic estimate when not supplied.
double identity_score(const Tensor& gen, const Tensor& ref, const FeaturePyramid& enc,
                      const Tensor& gen_mask = {}, const Tensor& ref_mask = {});

// Attribute probes (exact on renderer output).
int probe_dominant_color(const Tensor& img, const Tensor& mask);
ShapeClass probe_shape(const Tensor& fg_mask);
Caption::Background probe_background(const Tensor& img);
std::optional<PatternType> probe_pattern(const Tensor& img, const Tensor& mask);

// Fraction of caption attributes the image realizes.
double prompt_score(const Tensor& img, const Caption& caption);

}  // namespace spritediff
