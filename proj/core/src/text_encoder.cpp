#include "spritediff/text_encoder.hpp"

#include <cmath>

#include "spritediff/errors.hpp"

namespace spritediff {

namespace {

Tensor scaled_gaussian(const Shape& shape, Rng& rng, double scale) {
    Tensor t = Tensor::gaussian(shape, rng);
    for (auto& v : t.mutable_data()) v *= scale;
    return t;
}

}  // namespace

TextEncoder TextEncoder::create(const TextEncoderConfig& cfg, Rng& rng) {
    if (cfg.dim % cfg.heads != 0)
        throw ConfigError("text encoder: dim must be divisible by heads");
    TextEncoder te;
    te.cfg = cfg;
    int D = cfg.dim;
    te.token_table = scaled_gaussian({Vocab::kSize - 1, D}, rng, 0.5);
    te.pos_table = scaled_gaussian({cfg.max_len, D}, rng, 0.1);
    te.ln1_g = Tensor::full({D}, 1.0);
    te.ln1_b = Tensor::zeros({D});
    te.attn = AttentionParams::create(D, D, cfg.heads, D / cfg.heads, rng, false);
    te.ln2_g = Tensor::full({D}, 1.0);
    te.ln2_b = Tensor::zeros({D});
    te.ff1_w = scaled_gaussian({4 * D, D}, rng, 1.0 / std::sqrt(double(D)));
    te.ff1_b = Tensor::zeros({4 * D});
    te.ff2_w = scaled_gaussian({D, 4 * D}, rng, 1.0 / std::sqrt(double(4 * D)));
    te.ff2_b = Tensor::zeros({D});
    te.lnf_g = Tensor::full({D}, 1.0);
    te.lnf_b = Tensor::zeros({D});
    return te;
}

Tensor TextEncoder::forward(const std::vector<std::vector<int>>& tokens, const Tensor& s_star) const {
    if (tokens.empty()) throw ShapeError("text encoder: empty batch");
    int B = static_cast<int>(tokens.size());
    int L = cfg.max_len;
    std::vector<int> flat;
    flat.reserve(static_cast<size_t>(B) * L);
    for (const auto& row : tokens) {
        if (static_cast<int>(row.size()) != L)
            throw ShapeError("text encoder: token rows must have length " + std::to_string(L));
        flat.insert(flat.end(), row.begin(), row.end());
    }
    if (!s_star.defined() || s_star.numel() != cfg.dim)
        throw ShapeError("text encoder: [S*] row must have dim entries");

    Tensor table = concat({token_table, reshape(s_star, {1, cfg.dim})}, 0);
    Tensor h = reshape(gather_rows(table, flat), {B, L, cfg.dim});
    h = add_batch_bias(h, pos_table);
    Tensor n1 = layer_norm(h, ln1_g, ln1_b);
    h = add(h, scaled_dot_attention(n1, n1, attn));
    Tensor ff = linear(silu(linear(layer_norm(h, ln2_g, ln2_b), ff1_w, ff1_b)), ff2_w, ff2_b);
    h = add(h, ff);
    return layer_norm(h, lnf_g, lnf_b);
}

void TextEncoder::collect(const std::string& prefix, ParamMap& out) const {
    out[prefix + ".token_table"] = token_table;
    out[prefix + ".pos_table"] = pos_table;
    out[prefix + ".ln1_g"] = ln1_g;
    out[prefix + ".ln1_b"] = ln1_b;
    attn.collect(prefix + ".attn", out);
    out[prefix + ".ln2_g"] = ln2_g;
    out[prefix + ".ln2_b"] = ln2_b;
    out[prefix + ".ff1_w"] = ff1_w;
    out[prefix + ".ff1_b"] = ff1_b;
    out[prefix + ".ff2_w"] = ff2_w;
    out[prefix + ".ff2_b"] = ff2_b;
    out[prefix + ".lnf_g"] = lnf_g;
    out[prefix + ".lnf_b"] = lnf_b;
}

std::vector<Tensor> TextEncoder::parameters() const {
    ParamMap m;
    collect("te", m);
    std::vector<Tensor> out;
    for (auto& [k, v] : m) out.push_back(v);
    return out;
}

}  // namespace spritediff
