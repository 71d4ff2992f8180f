#pragma once

#include <string>

#include "spritediff/ops.hpp"
#include "spritediff/params.hpp"
#include "spritediff/rng.hpp"
#include "spritediff/tensor.hpp"

namespace spritediff {

// Projection weights for one attention layer. Key/Value act on the context
// input (which for self-attention is the query input itself); the reference
// branch of self-subject-attention reuses the same Key/Value weights, which
// pins the checkpoint layout.
struct AttentionParams {
    Tensor wq, bq;  // [heads*head_dim, query_dim]
    Tensor wk, bk;  // [heads*head_dim, context_dim]
    Tensor wv, bv;
    Tensor wo, bo;  // [query_dim, heads*head_dim]
    int heads = 1;
    int head_dim = 0;

    static AttentionParams create(int query_dim, int context_dim, int heads, int head_dim,
                                  Rng& rng, bool zero_output);
    void collect(const std::string& prefix, ParamMap& out) const;
};

// Subject-encoder output sequence plus its injection scale.
struct SubjectFeatures {
    Tensor tokens;  // [B, N_se, C_se]
    double beta = 1.0;
};

// Additive attention bias over concatenated [generated | reference] keys:
// zero over generated keys, log(omega_ref * mask) over reference keys with
// log(0) clamped to -1e9.
struct AttentionBias {
    Tensor values;  // [B, heads, N_gen, N_gen + N_ref]
};

// Multi-head scaled dot-product attention with optional additive bias.
// Softmax(q k^T / sqrt(head_dim) + bias) v followed by the output projection.
Tensor scaled_dot_attention(const Tensor& zq, const Tensor& zkv, const AttentionParams& p,
                            const Tensor& bias = {});

Tensor self_attention(const Tensor& z, const AttentionParams& p);

AttentionBias build_attention_bias(const Tensor& mask_ref, double omega_ref, int n_gen, int heads);

// Keys/values are the concatenation of generated and reference tokens, both
// projected with the same weights; queries come only from the generated side.
Tensor self_subject_attention(const Tensor& z, const Tensor& z_ref, const AttentionBias& bias,
                              const AttentionParams& p);

// Returns beta * CrossAttention(z, subject tokens); the caller adds the
// result residually.
Tensor subject_encoder_attention(const Tensor& z, const SubjectFeatures& subject,
                                 const AttentionParams& p);

}  // namespace spritediff
