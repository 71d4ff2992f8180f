#include "spritediff/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "spritediff/errors.hpp"
#include "spritediff/ops.hpp"

namespace spritediff {

namespace {

constexpr uint64_t kLayoutPathSeed = 0x4C41594F;  // fixed pathway, never trained

Tensor he_conv(int co, int ci, int k, Rng& rng) {
    Tensor w = Tensor::gaussian({co, ci, k, k}, rng);
    double scale = std::sqrt(2.0 / (static_cast<double>(ci) * k * k));
    for (auto& v : w.mutable_data()) v *= scale;
    return w;
}

Tensor he_linear(int co, int ci, Rng& rng) {
    Tensor w = Tensor::gaussian({co, ci}, rng);
    double scale = 1.0 / std::sqrt(static_cast<double>(ci));
    for (auto& v : w.mutable_data()) v *= scale;
    return w;
}

}  // namespace

void DenoiserConfig::validate() const {
    if (image_size <= 0 || (image_size & (image_size - 1)) != 0)
        throw ConfigError("denoiser config: image_size must be a positive power of two");
    if (base_channels <= 0 || channel_mult.empty())
        throw ConfigError("denoiser config: base_channels/channel_mult must be positive");
    if (heads <= 0 || text_dim <= 0 || time_dim <= 0 || se_dim <= 0)
        throw ConfigError("denoiser config: dims must be positive");
    int res = image_size;
    std::vector<int> reachable;
    for (size_t i = 0; i < channel_mult.size(); ++i) {
        int ch = base_channels * channel_mult[i];
        if (ch % norm_groups != 0)
            throw ConfigError("denoiser config: stage channels must be divisible by norm_groups");
        if (ch % heads != 0)
            throw ConfigError("denoiser config: stage channels must be divisible by heads");
        reachable.push_back(res);
        if (i + 1 < channel_mult.size()) {
            if (res % 2 != 0) throw ConfigError("denoiser config: too many stages for image size");
            res /= 2;
        }
    }
    for (int r : attn_resolutions)
        if (std::find(reachable.begin(), reachable.end(), r) == reachable.end())
            throw ConfigError("denoiser config: attention resolution " + std::to_string(r) +
                              " not reachable from " + std::to_string(image_size));
}

Tensor sinusoidal_time_embedding(const std::vector<int>& ts, int dim) {
    if (dim % 2 != 0) throw ConfigError("time embedding dim must be even");
    int half = dim / 2;
    std::vector<double> out(ts.size() * static_cast<size_t>(dim));
    for (size_t b = 0; b < ts.size(); ++b) {
        for (int i = 0; i < half; ++i) {
            double freq = std::exp(-std::log(10000.0) * i / half);
            double ang = ts[b] * freq;
            out[b * dim + i] = std::cos(ang);
            out[b * dim + half + i] = std::sin(ang);
        }
    }
    return Tensor::from_data({static_cast<int>(ts.size()), dim}, std::move(out));
}

Denoiser Denoiser::create(const DenoiserConfig& cfg, Rng& rng) {
    cfg.validate();
    Denoiser d;
    d.cfg_ = cfg;
    int n = static_cast<int>(cfg.channel_mult.size());
    int res = cfg.image_size;
    for (int i = 0; i < n; ++i) {
        d.stage_channels_.push_back(cfg.base_channels * cfg.channel_mult[i]);
        d.stage_res_.push_back(res);
        if (i + 1 < n) res /= 2;
    }

    auto make_res = [&](int cin, int cout) {
        ResBlock rb;
        rb.gn1_g = Tensor::full({cin}, 1.0);
        rb.gn1_b = Tensor::zeros({cin});
        rb.conv1_w = he_conv(cout, cin, 3, rng);
        rb.conv1_b = Tensor::zeros({cout});
        rb.temb_w = he_linear(cout, cfg.time_dim, rng);
        rb.temb_b = Tensor::zeros({cout});
        rb.gn2_g = Tensor::full({cout}, 1.0);
        rb.gn2_b = Tensor::zeros({cout});
        rb.conv2_w = he_conv(cout, cout, 3, rng);
        rb.conv2_b = Tensor::zeros({cout});
        rb.has_skip = cin != cout;
        if (rb.has_skip) {
            rb.skip_w = he_conv(cout, cin, 1, rng);
            rb.skip_b = Tensor::zeros({cout});
        }
        return rb;
    };
    auto make_attn = [&](const std::string& site, int resolution, int ch) {
        AttnBlock ab;
        ab.site = site;
        ab.resolution = resolution;
        int head_dim = ch / cfg.heads;
        ab.ln1_g = Tensor::full({ch}, 1.0);
        ab.ln1_b = Tensor::zeros({ch});
        ab.self_attn = AttentionParams::create(ch, ch, cfg.heads, head_dim, rng, false);
        ab.ln_se_g = Tensor::full({ch}, 1.0);
        ab.ln_se_b = Tensor::zeros({ch});
        ab.sea = AttentionParams::create(ch, cfg.se_dim, cfg.heads, head_dim, rng, true);
        ab.ln2_g = Tensor::full({ch}, 1.0);
        ab.ln2_b = Tensor::zeros({ch});
        ab.cross = AttentionParams::create(ch, cfg.text_dim, cfg.heads, head_dim, rng, false);
        ab.ln3_g = Tensor::full({ch}, 1.0);
        ab.ln3_b = Tensor::zeros({ch});
        ab.ff1_w = he_linear(4 * ch, ch, rng);
        ab.ff1_b = Tensor::zeros({4 * ch});
        ab.ff2_w = he_linear(ch, 4 * ch, rng);
        ab.ff2_b = Tensor::zeros({ch});
        return ab;
    };
    auto wants_attn = [&](int resolution) {
        return std::find(cfg.attn_resolutions.begin(), cfg.attn_resolutions.end(), resolution) !=
               cfg.attn_resolutions.end();
    };

    d.in_conv_w_ = he_conv(d.stage_channels_[0], cfg.in_channels, 3, rng);
    d.in_conv_b_ = Tensor::zeros({d.stage_channels_[0]});
    {
        Rng layout_rng(kLayoutPathSeed, 0);
        d.layout_conv_w_ = he_conv(d.stage_channels_[0], 1, 3, layout_rng);
    }
    d.time_w1_ = he_linear(cfg.time_dim, cfg.time_dim, rng);
    d.time_b1_ = Tensor::zeros({cfg.time_dim});
    d.time_w2_ = he_linear(cfg.time_dim, cfg.time_dim, rng);
    d.time_b2_ = Tensor::zeros({cfg.time_dim});

    for (int i = 0; i < n; ++i) {
        int cin = (i == 0) ? d.stage_channels_[0] : d.stage_channels_[i - 1];
        d.down_res_.push_back(make_res(cin, d.stage_channels_[i]));
        if (wants_attn(d.stage_res_[i]))
            d.down_attn_.emplace_back(
                make_attn("down." + std::to_string(i) + ".attn", d.stage_res_[i],
                          d.stage_channels_[i]));
        else
            d.down_attn_.emplace_back(std::nullopt);
        if (i + 1 < n) {
            d.down_conv_w_.push_back(he_conv(d.stage_channels_[i], d.stage_channels_[i], 3, rng));
            d.down_conv_b_.push_back(Tensor::zeros({d.stage_channels_[i]}));
        }
    }

    int mid_ch = d.stage_channels_[n - 1];
    d.mid_res1_ = make_res(mid_ch, mid_ch);
    d.mid_has_attn_ = wants_attn(d.stage_res_[n - 1]);
    if (d.mid_has_attn_) d.mid_attn_ = make_attn("mid.attn", d.stage_res_[n - 1], mid_ch);
    d.mid_res2_ = make_res(mid_ch, mid_ch);

    for (int i = 0; i < n; ++i) {
        // Up blocks are stored by stage index; stage i consumes the skip from
        // down stage i, so its input is 2 * ch[i].
        d.up_res_.push_back(make_res(2 * d.stage_channels_[i], d.stage_channels_[i]));
        if (wants_attn(d.stage_res_[i]))
            d.up_attn_.emplace_back(make_attn("up." + std::to_string(i) + ".attn", d.stage_res_[i],
                                              d.stage_channels_[i]));
        else
            d.up_attn_.emplace_back(std::nullopt);
        if (i > 0) {
            d.up_conv_w_.push_back(he_conv(d.stage_channels_[i - 1], d.stage_channels_[i], 3, rng));
            d.up_conv_b_.push_back(Tensor::zeros({d.stage_channels_[i - 1]}));
        }
    }

    d.out_gn_g_ = Tensor::full({d.stage_channels_[0]}, 1.0);
    d.out_gn_b_ = Tensor::zeros({d.stage_channels_[0]});
    d.out_conv_w_ = Tensor::zeros({cfg.in_channels, d.stage_channels_[0], 3, 3});
    d.out_conv_b_ = Tensor::zeros({cfg.in_channels});
    return d;
}

Tensor Denoiser::res_forward(const ResBlock& blk, const Tensor& h, const Tensor& temb_silu) const {
    Tensor r = conv2d(silu(group_norm(h, cfg_.norm_groups, blk.gn1_g, blk.gn1_b)), blk.conv1_w,
                      blk.conv1_b, 1, 1);
    r = add_channel_map(r, linear(temb_silu, blk.temb_w, blk.temb_b));
    r = conv2d(silu(group_norm(r, cfg_.norm_groups, blk.gn2_g, blk.gn2_b)), blk.conv2_w,
               blk.conv2_b, 1, 1);
    Tensor skip = blk.has_skip ? conv2d(h, blk.skip_w, blk.skip_b, 1, 0) : h;
    return add(r, skip);
}

Tensor Denoiser::attn_forward(const AttnBlock& blk, const Tensor& h, const Tensor& text_feats,
                              const SubjectFeatures* subject, const ReferenceContext* ref,
                              std::map<std::string, Tensor>* record) const {
    int B = h.shape()[0], C = h.shape()[1], H = h.shape()[2], W = h.shape()[3];
    int N = H * W;
    Tensor t0 = reshape(permute(h, {0, 2, 3, 1}), {B, N, C});
    Tensor z = layer_norm(t0, blk.ln1_g, blk.ln1_b);
    if (record) (*record)[blk.site] = z.detach();

    Tensor attn_out;
    if (ref) {
        auto it = ref->layer_features.find(blk.site);
        if (it == ref->layer_features.end())
            throw ContractError("reference context missing attention site '" + blk.site + "'");
        const Tensor& z_ref = it->second;
        if (z_ref.rank() != 3 || z_ref.shape()[0] != B || z_ref.shape()[2] != C)
            throw ShapeError("reference features at site '" + blk.site + "' have shape " +
                             shape_str(z_ref.shape()) + ", expected [B,N_ref," +
                             std::to_string(C) + "]");
        auto mit = ref->masks.find(blk.resolution);
        if (mit == ref->masks.end())
            throw ContractError("reference context missing mask for resolution " +
                                std::to_string(blk.resolution));
        AttentionBias bias =
            build_attention_bias(mit->second, ref->omega_ref, N, cfg_.heads);
        attn_out = self_subject_attention(z, z_ref, bias, blk.self_attn);
    } else {
        attn_out = self_attention(z, blk.self_attn);
    }
    Tensor t1 = add(t0, attn_out);

    Tensor t2 = t1;
    if (subject) {
        Tensor zs = layer_norm(t1, blk.ln_se_g, blk.ln_se_b);
        t2 = add(t1, subject_encoder_attention(zs, *subject, blk.sea));
    }

    Tensor t3 = add(t2, scaled_dot_attention(layer_norm(t2, blk.ln2_g, blk.ln2_b), text_feats,
                                             blk.cross));
    Tensor ff = linear(silu(linear(layer_norm(t3, blk.ln3_g, blk.ln3_b), blk.ff1_w, blk.ff1_b)),
                       blk.ff2_w, blk.ff2_b);
    Tensor t4 = add(t3, ff);
    return permute(reshape(t4, {B, H, W, C}), {0, 3, 1, 2});
}

Tensor Denoiser::run(const Tensor& x, const std::vector<int>& ts_in, const Tensor& text_feats,
                     const SubjectFeatures* subject, const ReferenceContext* ref,
                     const Tensor& layout, std::map<std::string, Tensor>* record) const {
    if (x.rank() != 4 || x.shape()[1] != cfg_.in_channels || x.shape()[2] != cfg_.image_size ||
        x.shape()[3] != cfg_.image_size)
        throw ShapeError("denoiser: input " + shape_str(x.shape()) + " does not match config");
    int B = x.shape()[0];
    if (text_feats.rank() != 3 || text_feats.shape()[0] != B ||
        text_feats.shape()[2] != cfg_.text_dim)
        throw ShapeError("denoiser: text features " + shape_str(text_feats.shape()) +
                         " must be [B,L," + std::to_string(cfg_.text_dim) + "]");
    if (record && ref) throw ContractError("denoiser: feature extraction runs without a reference");
    std::vector<int> ts = ts_in;
    if (ts.size() == 1 && B > 1) ts.assign(B, ts_in[0]);
    if (static_cast<int>(ts.size()) != B)
        throw ShapeError("denoiser: timestep count does not match batch");

    Tensor temb = sinusoidal_time_embedding(ts, cfg_.time_dim);
    temb = linear(silu(linear(temb, time_w1_, time_b1_)), time_w2_, time_b2_);
    Tensor temb_silu = silu(temb);

    Tensor h = conv2d(x, in_conv_w_, in_conv_b_, 1, 1);
    if (layout.defined()) {
        if (layout.rank() != 4 || layout.shape()[0] != B || layout.shape()[1] != 1 ||
            layout.shape()[2] != cfg_.image_size)
            throw ShapeError("denoiser: layout channel must be [B,1,S,S]");
        h = add(h, conv2d(layout, layout_conv_w_, Tensor(), 1, 1));
    }

    int n = static_cast<int>(stage_channels_.size());
    std::vector<Tensor> skips;
    for (int i = 0; i < n; ++i) {
        if (i > 0) h = conv2d(h, down_conv_w_[i - 1], down_conv_b_[i - 1], 2, 1);
        h = res_forward(down_res_[i], h, temb_silu);
        if (down_attn_[i]) h = attn_forward(*down_attn_[i], h, text_feats, subject, ref, record);
        skips.push_back(h);
    }

    h = res_forward(mid_res1_, h, temb_silu);
    if (mid_has_attn_) h = attn_forward(mid_attn_, h, text_feats, subject, ref, record);
    h = res_forward(mid_res2_, h, temb_silu);

    for (int i = n - 1; i >= 0; --i) {
        h = concat({h, skips[i]}, 1);
        h = res_forward(up_res_[i], h, temb_silu);
        if (up_attn_[i]) h = attn_forward(*up_attn_[i], h, text_feats, subject, ref, record);
        if (i > 0) {
            h = upsample_nearest2x(h);
            h = conv2d(h, up_conv_w_[i - 1], up_conv_b_[i - 1], 1, 1);
        }
    }

    h = conv2d(silu(group_norm(h, cfg_.norm_groups, out_gn_g_, out_gn_b_)), out_conv_w_,
               out_conv_b_, 1, 1);
    return h;
}

Tensor Denoiser::forward(const Tensor& x, const std::vector<int>& ts, const Tensor& text_feats,
                         const SubjectFeatures* subject, const ReferenceContext* ref,
                         const Tensor& layout) const {
    return run(x, ts, text_feats, subject, ref, layout, nullptr);
}

std::map<std::string, Tensor> Denoiser::extract_features(const Tensor& x, const std::vector<int>& ts,
                                                         const Tensor& text_feats,
                                                         const SubjectFeatures* subject,
                                                         const Tensor& layout) const {
    std::map<std::string, Tensor> record;
    run(x, ts, text_feats, subject, nullptr, layout, &record);
    return record;
}

std::vector<std::string> Denoiser::attention_sites() const {
    std::vector<std::string> sites;
    for (const auto& a : down_attn_)
        if (a) sites.push_back(a->site);
    if (mid_has_attn_) sites.push_back(mid_attn_.site);
    for (auto it = up_attn_.rbegin(); it != up_attn_.rend(); ++it)
        if (*it) sites.push_back((*it)->site);
    return sites;
}

int Denoiser::site_resolution(const std::string& site) const {
    for (const auto& a : down_attn_)
        if (a && a->site == site) return a->resolution;
    if (mid_has_attn_ && mid_attn_.site == site) return mid_attn_.resolution;
    for (const auto& a : up_attn_)
        if (a && a->site == site) return a->resolution;
    throw ContractError("denoiser: unknown attention site '" + site + "'");
}

namespace {

void collect_res(const std::string& p, const Denoiser::ResBlock& rb, ParamMap& out) {
    out[p + ".gn1_g"] = rb.gn1_g;
    out[p + ".gn1_b"] = rb.gn1_b;
    out[p + ".conv1_w"] = rb.conv1_w;
    out[p + ".conv1_b"] = rb.conv1_b;
    out[p + ".temb_w"] = rb.temb_w;
    out[p + ".temb_b"] = rb.temb_b;
    out[p + ".gn2_g"] = rb.gn2_g;
    out[p + ".gn2_b"] = rb.gn2_b;
    out[p + ".conv2_w"] = rb.conv2_w;
    out[p + ".conv2_b"] = rb.conv2_b;
    if (rb.has_skip) {
        out[p + ".skip_w"] = rb.skip_w;
        out[p + ".skip_b"] = rb.skip_b;
    }
}

void collect_attn(const std::string& p, const Denoiser::AttnBlock& ab, ParamMap& out) {
    out[p + ".ln1_g"] = ab.ln1_g;
    out[p + ".ln1_b"] = ab.ln1_b;
    ab.self_attn.collect(p + ".self", out);
    out[p + ".ln_se_g"] = ab.ln_se_g;
    out[p + ".ln_se_b"] = ab.ln_se_b;
    ab.sea.collect(p + ".sea", out);
    out[p + ".ln2_g"] = ab.ln2_g;
    out[p + ".ln2_b"] = ab.ln2_b;
    ab.cross.collect(p + ".cross", out);
    out[p + ".ln3_g"] = ab.ln3_g;
    out[p + ".ln3_b"] = ab.ln3_b;
    out[p + ".ff1_w"] = ab.ff1_w;
    out[p + ".ff1_b"] = ab.ff1_b;
    out[p + ".ff2_w"] = ab.ff2_w;
    out[p + ".ff2_b"] = ab.ff2_b;
}

}  // namespace

void Denoiser::collect(const std::string& prefix, ParamMap& out) const {
    out[prefix + ".in_conv.w"] = in_conv_w_;
    out[prefix + ".in_conv.b"] = in_conv_b_;
    out[prefix + ".layout_conv.w"] = layout_conv_w_;
    out[prefix + ".time.w1"] = time_w1_;
    out[prefix + ".time.b1"] = time_b1_;
    out[prefix + ".time.w2"] = time_w2_;
    out[prefix + ".time.b2"] = time_b2_;
    int n = static_cast<int>(stage_channels_.size());
    for (int i = 0; i < n; ++i) {
        collect_res(prefix + ".down." + std::to_string(i) + ".res", down_res_[i], out);
        if (down_attn_[i]) collect_attn(prefix + ".down." + std::to_string(i) + ".attn", *down_attn_[i], out);
        if (i + 1 < n) {
            out[prefix + ".down." + std::to_string(i) + ".conv.w"] = down_conv_w_[i];
            out[prefix + ".down." + std::to_string(i) + ".conv.b"] = down_conv_b_[i];
        }
    }
    collect_res(prefix + ".mid.res1", mid_res1_, out);
    if (mid_has_attn_) collect_attn(prefix + ".mid.attn", mid_attn_, out);
    collect_res(prefix + ".mid.res2", mid_res2_, out);
    for (int i = 0; i < n; ++i) {
        collect_res(prefix + ".up." + std::to_string(i) + ".res", up_res_[i], out);
        if (up_attn_[i]) collect_attn(prefix + ".up." + std::to_string(i) + ".attn", *up_attn_[i], out);
        if (i > 0) {
            out[prefix + ".up." + std::to_string(i) + ".conv.w"] = up_conv_w_[i - 1];
            out[prefix + ".up." + std::to_string(i) + ".conv.b"] = up_conv_b_[i - 1];
        }
    }
    out[prefix + ".out.gn_g"] = out_gn_g_;
    out[prefix + ".out.gn_b"] = out_gn_b_;
    out[prefix + ".out.conv.w"] = out_conv_w_;
    out[prefix + ".out.conv.b"] = out_conv_b_;
}

std::vector<Tensor> Denoiser::parameters() const {
    ParamMap m;
    collect("unet", m);
    std::vector<Tensor> out;
    for (auto& [k, v] : m)
        if (k != "unet.layout_conv.w") out.push_back(v);
    return out;
}

std::vector<Tensor> Denoiser::sea_parameters() const {
    ParamMap m;
    collect("unet", m);
    std::vector<Tensor> out;
    for (auto& [k, v] : m)
        if (k.find(".sea.") != std::string::npos) out.push_back(v);
    return out;
}

}  // namespace spritediff
