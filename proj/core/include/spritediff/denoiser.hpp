#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spritediff/attention.hpp"
#include "spritediff/params.hpp"
#include "spritediff/tensor.hpp"

namespace spritediff {

struct DenoiserConfig {
    int image_size = 32;
    int in_channels = 3;
    int base_channels = 32;
    std::vector<int> channel_mult = {1, 2, 4};
    std::vector<int> attn_resolutions = {16, 8};
    int heads = 2;
    int text_dim = 64;
    int time_dim = 128;
    int se_dim = 64;  // channel width of SubjectFeatures tokens
    int norm_groups = 8;

    void validate() const;
};

// Payload of self-subject-attention: pre-self-attention hidden states of the
// noised reference at every attention site, plus per-resolution foreground
// weights and the reference weight. Feature tensors are detached; gradients
// from the generation branch never reach them.
struct ReferenceContext {
    std::map<std::string, Tensor> layer_features;  // site id -> [B, N_ref, C]
    std::map<int, Tensor> masks;                   // resolution -> [B, res*res] in {0,1}
    double omega_ref = 1.0;
};

class Denoiser {
public:
    struct ResBlock {
        Tensor gn1_g, gn1_b, conv1_w, conv1_b;
        Tensor temb_w, temb_b;
        Tensor gn2_g, gn2_b, conv2_w, conv2_b;
        Tensor skip_w, skip_b;
        bool has_skip = false;
    };

    struct AttnBlock {
        std::string site;
        int resolution = 0;
        Tensor ln1_g, ln1_b;
        AttentionParams self_attn;
        Tensor ln_se_g, ln_se_b;
        AttentionParams sea;  // zero-initialized output projection
        Tensor ln2_g, ln2_b;
        AttentionParams cross;
        Tensor ln3_g, ln3_b;
        Tensor ff1_w, ff1_b, ff2_w, ff2_b;
    };

    static Denoiser create(const DenoiserConfig& cfg, Rng& rng);

    // ts holds one timestep per batch element (a single entry broadcasts).
    // Attention block order at each site: self-attention (S-A, or S-S-A when
    // ref is present) -> S-E-A (when subject is present) -> visual-text
    // cross-attention -> feed-forward.
    Tensor forward(const Tensor& x, const std::vector<int>& ts, const Tensor& text_feats,
                   const SubjectFeatures* subject, const ReferenceContext* ref,
                   const Tensor& layout = {}) const;

    // Runs the forward pass on a noised reference and records the hidden
    // state entering every self-attention site (detached).
    std::map<std::string, Tensor> extract_features(const Tensor& x, const std::vector<int>& ts,
                                                   const Tensor& text_feats,
                                                   const SubjectFeatures* subject,
                                                   const Tensor& layout = {}) const;

    std::vector<std::string> attention_sites() const;
    int site_resolution(const std::string& site) const;

    void collect(const std::string& prefix, ParamMap& out) const;
    std::vector<Tensor> parameters() const;      // trainable set (layout path excluded)
    std::vector<Tensor> sea_parameters() const;  // subject-encoder-attention layers only

    const DenoiserConfig& config() const { return cfg_; }

private:
    Tensor run(const Tensor& x, const std::vector<int>& ts, const Tensor& text_feats,
               const SubjectFeatures* subject, const ReferenceContext* ref, const Tensor& layout,
               std::map<std::string, Tensor>* record) const;
    Tensor attn_forward(const AttnBlock& blk, const Tensor& h, const Tensor& text_feats,
                        const SubjectFeatures* subject, const ReferenceContext* ref,
                        std::map<std::string, Tensor>* record) const;
    Tensor res_forward(const ResBlock& blk, const Tensor& h, const Tensor& temb_silu) const;

    DenoiserConfig cfg_;
    std::vector<int> stage_channels_;
    std::vector<int> stage_res_;

    Tensor in_conv_w_, in_conv_b_;
    Tensor layout_conv_w_;  // fixed, non-trained silhouette pathway
    Tensor time_w1_, time_b1_, time_w2_, time_b2_;

    std::vector<ResBlock> down_res_;
    std::vector<std::optional<AttnBlock>> down_attn_;
    std::vector<Tensor> down_conv_w_, down_conv_b_;  // stride-2, between stages

    ResBlock mid_res1_, mid_res2_;
    AttnBlock mid_attn_;
    bool mid_has_attn_ = false;

    std::vector<ResBlock> up_res_;
    std::vector<std::optional<AttnBlock>> up_attn_;
    std::vector<Tensor> up_conv_w_, up_conv_b_;  // after nearest-upsample

    Tensor out_gn_g_, out_gn_b_, out_conv_w_, out_conv_b_;
};

// Sinusoidal embedding of integer timesteps, [ts.size(), dim].
Tensor sinusoidal_time_embedding(const std::vector<int>& ts, int dim);

}  // namespace spritediff
