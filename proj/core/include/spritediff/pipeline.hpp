#pragma once

#include <optional>

#include "spritediff/guidance.hpp"
#include "spritediff/model.hpp"
#include "spritediff/sprites.hpp"

namespace spritediff {

// Clean reference image with its exact mask and a detailed caption used as
// the reference text during feature extraction.
struct RefBundle {
    Tensor image;  // [3,32,32]
    Tensor mask;   // [1,32,32]
    Caption caption;
};

struct SampleSpec {
    Caption prompt;
    int steps = 25;
    uint64_t seed = 0;
    bool use_subject = true;  // S-E-A injection (needs an attached subject encoder)
    double beta = 0.2;
    bool use_ref_attention = true;  // S-S-A
    double omega_ref = 2.5;
    bool use_mask = true;  // foreground mask vs all-ones in the S-S-A bias
    bool use_guidance = true;
    GuidanceConfig guidance;
    bool ancestral = false;  // full-schedule ancestral sampling instead of DDIM
};

// Adapter exposing a Model as the guidance closure, carrying the reference
// text features and the per-resolution mask payload.
class ModelGuidedDenoiser : public GuidedDenoiser {
public:
    ModelGuidedDenoiser(const Model& model, Tensor ref_text_feats, const SubjectFeatures* subject,
                        std::map<int, Tensor> masks, double omega_ref);
    Tensor eps(const Tensor& x, int t, const Tensor& text_feats, const SubjectFeatures* subject,
               const ReferenceContext* ref) override;
    ReferenceContext make_context(const Tensor& ref_noised, int t_ref) override;

private:
    const Model& model_;
    Tensor ref_text_feats_;
    const SubjectFeatures* subject_;
    std::map<int, Tensor> masks_;
    double omega_ref_;
};

// Deterministic generation: every random draw is a pure function of
// (spec.seed, timestep), so replays are bit-identical.
Tensor sample_image(const Model& model, const SampleSpec& spec, const RefBundle* ref);

// Per-resolution S-S-A masks for a model (all-ones when use_mask is off).
std::map<int, Tensor> ssa_masks(const Model& model, const Tensor& ref_mask, bool use_mask);

}  // namespace spritediff
