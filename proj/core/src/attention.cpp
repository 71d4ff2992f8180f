#include "spritediff/attention.hpp"

#include <cmath>
#include <map>

#include "spritediff/errors.hpp"

namespace spritediff {

namespace {

Tensor init_weight(int rows, int cols, Rng& rng) {
    Tensor w = Tensor::gaussian({rows, cols}, rng);
    double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (auto& v : w.mutable_data()) v *= scale;
    return w;
}

}  // namespace

AttentionParams AttentionParams::create(int query_dim, int context_dim, int heads, int head_dim,
                                        Rng& rng, bool zero_output) {
    if (heads <= 0 || head_dim <= 0) throw ConfigError("attention: heads and head_dim must be positive");
    int inner = heads * head_dim;
    AttentionParams p;
    p.heads = heads;
    p.head_dim = head_dim;
    p.wq = init_weight(inner, query_dim, rng);
    p.bq = Tensor::zeros({inner});
    p.wk = init_weight(inner, context_dim, rng);
    p.bk = Tensor::zeros({inner});
    p.wv = init_weight(inner, context_dim, rng);
    p.bv = Tensor::zeros({inner});
    p.wo = zero_output ? Tensor::zeros({query_dim, inner}) : init_weight(query_dim, inner, rng);
    p.bo = Tensor::zeros({query_dim});
    return p;
}

void AttentionParams::collect(const std::string& prefix, ParamMap& out) const {
    out[prefix + ".wq"] = wq;
    out[prefix + ".bq"] = bq;
    out[prefix + ".wk"] = wk;
    out[prefix + ".bk"] = bk;
    out[prefix + ".wv"] = wv;
    out[prefix + ".bv"] = bv;
    out[prefix + ".wo"] = wo;
    out[prefix + ".bo"] = bo;
}

Tensor scaled_dot_attention(const Tensor& zq, const Tensor& zkv, const AttentionParams& p,
                            const Tensor& bias) {
    if (zq.rank() != 3 || zkv.rank() != 3)
        throw ShapeError("attention: expected [B,N,C] inputs, got " + shape_str(zq.shape()) +
                         " and " + shape_str(zkv.shape()));
    int B = zq.shape()[0], Nq = zq.shape()[1];
    int Nk = zkv.shape()[1];
    if (zkv.shape()[0] != B) throw ShapeError("attention: batch mismatch");
    int H = p.heads, D = p.head_dim;

    // [B,N,H*D] -> [B,H,N,D]
    auto split_heads = [&](const Tensor& x, int N) {
        return permute(reshape(x, {B, N, H, D}), {0, 2, 1, 3});
    };
    Tensor q = split_heads(linear(zq, p.wq, p.bq), Nq);
    Tensor k = split_heads(linear(zkv, p.wk, p.bk), Nk);
    Tensor v = split_heads(linear(zkv, p.wv, p.bv), Nk);

    Tensor logits = mul_scalar(matmul(q, permute(k, {0, 1, 3, 2})), 1.0 / std::sqrt(double(D)));
    if (bias.defined()) {
        if (!same_shape(bias.shape(), logits.shape()))
            throw ShapeError("attention: bias " + shape_str(bias.shape()) +
                             " does not match logits " + shape_str(logits.shape()));
        logits = add(logits, bias);
    }
    Tensor attn = softmax_last_dim(logits);
    Tensor out = matmul(attn, v);  // [B,H,Nq,D]
    out = reshape(permute(out, {0, 2, 1, 3}), {B, Nq, H * D});
    return linear(out, p.wo, p.bo);
}

Tensor self_attention(const Tensor& z, const AttentionParams& p) {
    return scaled_dot_attention(z, z, p);
}

AttentionBias build_attention_bias(const Tensor& mask_ref, double omega_ref, int n_gen, int heads) {
    if (omega_ref < 0.0) throw ConfigError("attention bias: omega_ref must be >= 0");
    if (mask_ref.rank() != 2) throw ShapeError("attention bias: mask must be [B,N_ref]");
    if (n_gen <= 0 || heads <= 0) throw ConfigError("attention bias: n_gen and heads must be positive");
    int B = mask_ref.shape()[0], n_ref = mask_ref.shape()[1];
    const auto& md = mask_ref.data();
    std::vector<double> ref_bias(md.size());
    for (size_t i = 0; i < md.size(); ++i) {
        if (md[i] != 0.0 && md[i] != 1.0)
            throw ContractError("attention bias: mask entries must be 0 or 1");
        double v = omega_ref * md[i];
        ref_bias[i] = v > 0.0 ? std::log(v) : -1e9;
    }
    int n_tot = n_gen + n_ref;
    std::vector<double> out(static_cast<int64_t>(B) * heads * n_gen * n_tot, 0.0);
    for (int b = 0; b < B; ++b) {
        const double* rb = ref_bias.data() + static_cast<int64_t>(b) * n_ref;
        for (int h = 0; h < heads; ++h) {
            for (int q = 0; q < n_gen; ++q) {
                double* row = out.data() +
                              ((static_cast<int64_t>(b) * heads + h) * n_gen + q) * n_tot + n_gen;
                for (int j = 0; j < n_ref; ++j) row[j] = rb[j];
            }
        }
    }
    return AttentionBias{Tensor::from_data({B, heads, n_gen, n_tot}, std::move(out))};
}

Tensor self_subject_attention(const Tensor& z, const Tensor& z_ref, const AttentionBias& bias,
                              const AttentionParams& p) {
    if (z.rank() != 3 || z_ref.rank() != 3)
        throw ShapeError("self_subject_attention: expected [B,N,C] inputs");
    int n = z.shape()[1], n_ref = z_ref.shape()[1];
    if (!bias.values.defined() || bias.values.dim(-1) != n + n_ref)
        throw ShapeError("self_subject_attention: bias width " +
                         (bias.values.defined() ? std::to_string(bias.values.dim(-1)) : "none") +
                         " != N+N_ref = " + std::to_string(n + n_ref));
    // Same Key/Value weights on both branches, so projecting the
    // concatenation is exactly [k,k^r] / [v,v^r].
    Tensor kv = concat({z, z_ref}, 1);
    return scaled_dot_attention(z, kv, p, bias.values);
}

Tensor subject_encoder_attention(const Tensor& z, const SubjectFeatures& subject,
                                 const AttentionParams& p) {
    if (!subject.tokens.defined() || subject.tokens.rank() != 3 || subject.tokens.shape()[1] == 0)
        throw ShapeError("subject_encoder_attention: subject tokens must be [B,N_se,C_se]");
    if (subject.beta < 0.0) throw ConfigError("subject_encoder_attention: beta must be >= 0");
    return mul_scalar(scaled_dot_attention(z, subject.tokens, p), subject.beta);
}

}  // namespace spritediff
