#include "spritediff/pipeline.hpp"

#include <algorithm>
#include <set>

#include "spritediff/errors.hpp"
#include "spritediff/ops.hpp"

namespace spritediff {

ModelGuidedDenoiser::ModelGuidedDenoiser(const Model& model, Tensor ref_text_feats,
                                         const SubjectFeatures* subject,
                                         std::map<int, Tensor> masks, double omega_ref)
    : model_(model),
      ref_text_feats_(std::move(ref_text_feats)),
      subject_(subject),
      masks_(std::move(masks)),
      omega_ref_(omega_ref) {}

Tensor ModelGuidedDenoiser::eps(const Tensor& x, int t, const Tensor& text_feats,
                                const SubjectFeatures* subject, const ReferenceContext* ref) {
    return model_.eps(x, {t}, text_feats, subject, ref);
}

ReferenceContext ModelGuidedDenoiser::make_context(const Tensor& ref_noised, int t_ref) {
    ReferenceContext ctx;
    // The reference's own caption conditions the extraction pass; subject
    // features ride along so both branches see the same conditioning.
    ctx.layer_features =
        model_.denoiser.extract_features(ref_noised, {t_ref}, ref_text_feats_, subject_);
    ctx.masks = masks_;
    ctx.omega_ref = omega_ref_;
    return ctx;
}

std::map<int, Tensor> ssa_masks(const Model& model, const Tensor& ref_mask, bool use_mask) {
    std::map<int, Tensor> masks;
    std::set<int> resolutions;
    for (const auto& site : model.denoiser.attention_sites())
        resolutions.insert(model.denoiser.site_resolution(site));
    Tensor m4 = reshape(ref_mask, {1, 1, kImageSize, kImageSize});
    for (int res : resolutions) {
        if (use_mask)
            masks[res] = downsample_mask(m4, res);
        else
            masks[res] = Tensor::full({1, res * res}, 1.0);
    }
    return masks;
}

Tensor sample_image(const Model& model, const SampleSpec& spec, const RefBundle* ref) {
    if (spec.steps <= 0) throw ConfigError("sample_image: steps must be positive");
    if (spec.use_subject && !model.se)
        throw ConfigError("sample_image: subject conditioning requested but the model has no subject encoder");
    NoGradGuard ng;

    Tensor cond = model.text_features({spec.prompt});
    Tensor uncond = model.text_features_tokens({spec.guidance.uncond_tokens});

    // Reference-side conditioning, fixed across timesteps.
    Tensor ref_clean;
    SubjectFeatures subject;
    bool has_subject = false;
    std::optional<ModelGuidedDenoiser> guided;
    if (ref) {
        ref_clean = remove_background(reshape(ref->image, {1, 3, kImageSize, kImageSize}),
                                      reshape(ref->mask, {1, 1, kImageSize, kImageSize}));
        if (spec.use_subject && model.se) {
            subject = model.se->encode(ref_clean, spec.beta);
            has_subject = true;
        }
        if (spec.use_ref_attention) {
            Tensor ref_text = model.text_features({ref->caption});
            guided.emplace(model, ref_text, has_subject ? &subject : nullptr,
                           ssa_masks(model, ref->mask, spec.use_mask), spec.omega_ref);
        }
    }

    GuidanceInputs gin;
    gin.cond_text = cond;
    gin.uncond_text = uncond;
    gin.subject = has_subject ? &subject : nullptr;
    gin.ref_clean = ref_clean;

    auto eval_eps = [&](const Tensor& x, int t, Rng& rng) -> Tensor {
        if (guided) {
            if (spec.use_guidance)
                return guided_eps(x, t, gin, spec.guidance, *guided, model.sched, rng);
            ReferenceContext ctx = guided->make_context(
                noise_reference(ref_clean, t, -spec.guidance.dt_minus, model.sched, rng),
                std::clamp(t - spec.guidance.dt_minus, 0, model.sched.T - 1));
            return model.eps(x, {t}, cond, gin.subject, &ctx);
        }
        // No reference context: plain conditional or standard text CFG.
        Tensor e_c = model.eps(x, {t}, cond, gin.subject, nullptr);
        if (!spec.use_guidance || spec.guidance.omega_c == 1.0) return e_c;
        Tensor e_uc = model.eps(x, {t}, uncond, nullptr, nullptr);
        return sub(mul_scalar(e_c, spec.guidance.omega_c),
                   mul_scalar(e_uc, spec.guidance.omega_c - 1.0));
    };

    Rng init_rng(spec.seed, 0x1217);
    Tensor x = Tensor::gaussian({1, 3, kImageSize, kImageSize}, init_rng);

    if (spec.ancestral) {
        for (int t = model.sched.T - 1; t >= 0; --t) {
            Rng step_rng(spec.seed, 0x5000 + static_cast<uint64_t>(t));
            Tensor eps_hat = eval_eps(x, t, step_rng);
            x = ddpm_step(x, eps_hat, t, model.sched, step_rng);
        }
    } else {
        auto ts = ddim_timesteps(model.sched.T, spec.steps);
        for (size_t i = 0; i + 1 < ts.size(); ++i) {
            int t = ts[i];
            Rng step_rng(spec.seed, 0x5000 + static_cast<uint64_t>(t));
            Tensor eps_hat = eval_eps(x, t, step_rng);
            x = ddim_step(x, eps_hat, t, ts[i + 1], model.sched);
        }
    }
    return reshape(x, {3, kImageSize, kImageSize});
}

}  // namespace spritediff
