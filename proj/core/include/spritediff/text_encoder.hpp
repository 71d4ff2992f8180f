#pragma once

#include <vector>

#include "spritediff/attention.hpp"
#include "spritediff/params.hpp"
#include "spritediff/tensor.hpp"
#include "spritediff/vocab.hpp"

namespace spritediff {

struct TextEncoderConfig {
    int dim = 64;
    int max_len = kMaxCaptionLen;
    int heads = 2;
};

// Token embeddings + one pre-norm transformer block. The [S*] embedding row
// is passed in separately and spliced onto the base table, so only that row
// can train at the token learning rate.
struct TextEncoder {
    TextEncoderConfig cfg;
    Tensor token_table;  // [Vocab::kSize - 1, dim]; [S*] row excluded
    Tensor pos_table;    // [max_len, dim]
    Tensor ln1_g, ln1_b;
    AttentionParams attn;
    Tensor ln2_g, ln2_b;
    Tensor ff1_w, ff1_b, ff2_w, ff2_b;
    Tensor lnf_g, lnf_b;

    static TextEncoder create(const TextEncoderConfig& cfg, Rng& rng);
    // batch of fixed-length token rows -> [B, max_len, dim]
    Tensor forward(const std::vector<std::vector<int>>& tokens, const Tensor& s_star) const;
    void collect(const std::string& prefix, ParamMap& out) const;
    std::vector<Tensor> parameters() const;
};

}  // namespace spritediff
