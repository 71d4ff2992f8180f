#pragma once

#include <optional>
#include <string>
#include <vector>

#include "spritediff/denoiser.hpp"
#include "spritediff/params.hpp"
#include "spritediff/schedule.hpp"
#include "spritediff/subject_encoder.hpp"
#include "spritediff/text_encoder.hpp"
#include "spritediff/vocab.hpp"

namespace spritediff {

// Everything a checkpoint holds: backbone, text encoder, optional subject
// encoder, schedule, and the trainable [S*] row.
struct Model {
    DenoiserConfig dcfg;
    EncoderConfig ecfg;
    NoiseSchedule sched;
    TextEncoder text;
    Denoiser denoiser;
    std::optional<SubjectEncoder> se;
    Tensor s_star;               // [text_dim]; spliced as the last vocab row
    int class_word_token = -1;   // set when fine-tuning
    std::string stage = "base";  // base | se_pretrain | finetune
    double stage_beta = 0.0;     // beta recorded for the stage
    uint64_t init_seed = 0;

    static Model create(const DenoiserConfig& dcfg, const EncoderConfig& ecfg,
                        const NoiseSchedule& sched, uint64_t seed);
    void attach_subject_encoder();

    Tensor text_features(const std::vector<Caption>& captions) const;
    Tensor text_features_tokens(const std::vector<std::vector<int>>& tokens) const;

    Tensor eps(const Tensor& x, const std::vector<int>& ts, const Tensor& text_feats,
               const SubjectFeatures* subject, const ReferenceContext* ref,
               const Tensor& layout = {}) const;

    ParamMap all_params() const;  // includes fixed tensors (layout path, pyramid)
};

}  // namespace spritediff
