#include "spritediff/model.hpp"

#include "spritediff/errors.hpp"

namespace spritediff {

Model Model::create(const DenoiserConfig& dcfg, const EncoderConfig& ecfg,
                    const NoiseSchedule& sched, uint64_t seed) {
    dcfg.validate();
    ecfg.validate();
    if (ecfg.out_dim != dcfg.se_dim)
        throw ConfigError("model: encoder out_dim must match denoiser se_dim");
    Model m;
    m.dcfg = dcfg;
    m.ecfg = ecfg;
    m.sched = sched;
    m.init_seed = seed;
    Rng text_rng(seed, 0x7E57);
    TextEncoderConfig tcfg;
    tcfg.dim = dcfg.text_dim;
    m.text = TextEncoder::create(tcfg, text_rng);
    Rng unet_rng(seed, 0x0DE7);
    m.denoiser = Denoiser::create(dcfg, unet_rng);
    Rng star_rng(seed, 0x57A9);
    m.s_star = Tensor::gaussian({dcfg.text_dim}, star_rng);
    for (auto& v : m.s_star.mutable_data()) v *= 0.5;
    return m;
}

void Model::attach_subject_encoder() {
    if (se) return;
    Rng se_rng(init_seed, 0x5E5E);
    se = SubjectEncoder::create(ecfg, se_rng);
}

Tensor Model::text_features(const std::vector<Caption>& captions) const {
    std::vector<std::vector<int>> toks;
    toks.reserve(captions.size());
    for (const auto& c : captions) toks.push_back(c.tokens());
    return text_features_tokens(toks);
}

Tensor Model::text_features_tokens(const std::vector<std::vector<int>>& tokens) const {
    return text.forward(tokens, s_star);
}

Tensor Model::eps(const Tensor& x, const std::vector<int>& ts, const Tensor& text_feats,
                  const SubjectFeatures* subject, const ReferenceContext* ref,
                  const Tensor& layout) const {
    return denoiser.forward(x, ts, text_feats, subject, ref, layout);
}

ParamMap Model::all_params() const {
    ParamMap m;
    text.collect("te", m);
    denoiser.collect("unet", m);
    if (se) se->collect("se", m);
    m["s_star"] = s_star;
    return m;
}

}  // namespace spritediff
