#include "spritediff/guidance.hpp"

#include <algorithm>

#include "spritediff/errors.hpp"
#include "spritediff/ops.hpp"

namespace spritediff {

void GuidanceConfig::validate() const {
    if (p_r < 0.0 || p_r > 1.0) throw ConfigError("guidance: p_r must lie in [0,1]");
    if (omega_r < 1.0 || omega_c < 1.0)
        throw ConfigError("guidance: omega_r and omega_c must be >= 1");
    if (dt_minus < 0 || dt_plus < 0) throw ConfigError("guidance: time offsets must be >= 0");
}

Tensor noise_reference(const Tensor& ref_clean, int t, int offset, const NoiseSchedule& sched,
                       Rng& rng) {
    int t_eff = std::clamp(t + offset, 0, sched.T - 1);
    Tensor eps = Tensor::gaussian(ref_clean.shape(), rng);
    return q_sample(ref_clean, t_eff, eps, sched);
}

Tensor guided_eps(const Tensor& x_t, int t, const GuidanceInputs& in, const GuidanceConfig& cfg,
                  GuidedDenoiser& model, const NoiseSchedule& sched, Rng& rng) {
    cfg.validate();
    if (!in.ref_clean.defined())
        throw ContractError("guided_eps: reference image required (use plain CFG without one)");

    double lambda = rng.uniform();
    int t1 = std::clamp(t - cfg.dt_minus, 0, sched.T - 1);

    if (lambda <= cfg.p_r) {
        // Reference-emphasizing branch.
        ReferenceContext ctx = model.make_context(
            noise_reference(in.ref_clean, t, -cfg.dt_minus, sched, rng), t1);
        Tensor e_ref = model.eps(x_t, t, in.cond_text, in.subject, &ctx);
        if (cfg.omega_r == 1.0) return e_ref;
        Tensor e_none = model.eps(x_t, t, in.cond_text, in.subject, nullptr);
        return sub(mul_scalar(e_ref, cfg.omega_r), mul_scalar(e_none, cfg.omega_r - 1.0));
    }

    // Text-emphasizing branch.
    int t2 = std::clamp(t + cfg.dt_plus, 0, sched.T - 1);
    ReferenceContext ctx1 =
        model.make_context(noise_reference(in.ref_clean, t, -cfg.dt_minus, sched, rng), t1);
    Tensor e_cond = model.eps(x_t, t, in.cond_text, in.subject, &ctx1);
    if (cfg.omega_c == 1.0) return e_cond;
    ReferenceContext ctx2_storage;
    const ReferenceContext* ctx2 = &ctx1;
    if (t2 != t1) {
        ctx2_storage = model.make_context(
            noise_reference(in.ref_clean, t, cfg.dt_plus, sched, rng), t2);
        ctx2 = &ctx2_storage;
    }
    Tensor e_uncond = model.eps(x_t, t, in.uncond_text, nullptr, ctx2);
    return sub(mul_scalar(e_cond, cfg.omega_c), mul_scalar(e_uncond, cfg.omega_c - 1.0));
}

}  // namespace spritediff
