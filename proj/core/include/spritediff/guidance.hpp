#pragma once

#include <vector>

#include "spritediff/attention.hpp"
#include "spritediff/denoiser.hpp"
#include "spritediff/rng.hpp"
#include "spritediff/schedule.hpp"
#include "spritediff/tensor.hpp"
#include "spritediff/vocab.hpp"

namespace spritediff {

// Interleaved classifier-free guidance over the text and reference-image
// conditions. Per timestep, with probability p_r the combination emphasizes
// the reference,
//   eps_r = omega_r * eps(x, c, ref[t-dt]) - (omega_r - 1) * eps(x, c, none)
// and otherwise the text,
//   eps_c = omega_c * eps(x, c, ref[t-dt]) - (omega_c - 1) * eps(x, uc, ref[t+dt']).
// Subject-encoder features accompany every call that carries the text
// condition c; the undesired-condition call runs without them.
struct GuidanceConfig {
    double omega_r = 2.0;
    double omega_c = 2.0;
    double p_r = 0.9;
    int dt_minus = 0;  // reference noised at t - dt_minus (clamped)
    int dt_plus = 0;   // undesired branch reference at t + dt_plus (clamped)
    std::vector<int> uncond_tokens = Caption::uncond_tokens();

    void validate() const;
};

// Denoiser closure used by guided_eps: one eps evaluation plus the reference
// feature extraction that builds an S-S-A payload at a given timestep.
class GuidedDenoiser {
public:
    virtual ~GuidedDenoiser() = default;
    virtual Tensor eps(const Tensor& x, int t, const Tensor& text_feats,
                       const SubjectFeatures* subject, const ReferenceContext* ref) = 0;
    virtual ReferenceContext make_context(const Tensor& ref_noised, int t_ref) = 0;
};

struct GuidanceInputs {
    Tensor cond_text;    // [B,L,D] features of c
    Tensor uncond_text;  // [B,L,D] features of uc
    const SubjectFeatures* subject = nullptr;
    Tensor ref_clean;  // [B,3,H,W] background-removed reference
};

// q_sample of the clean reference at clamp(t + offset, 0, T-1) with fresh
// noise from rng.
Tensor noise_reference(const Tensor& ref_clean, int t, int offset, const NoiseSchedule& sched,
                       Rng& rng);

// One guided prediction at timestep t. Draws lambda_t once from rng before
// any noise draw, so branch selection is a pure function of the rng stream.
// When both branch offsets land on the same timestep, one noised reference
// is shared, so degenerate offsets see identically distributed references.
Tensor guided_eps(const Tensor& x_t, int t, const GuidanceInputs& in, const GuidanceConfig& cfg,
                  GuidedDenoiser& model, const NoiseSchedule& sched, Rng& rng);

}  // namespace spritediff
