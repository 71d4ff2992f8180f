#include "spritediff/subject_encoder.hpp"

#include <algorithm>
#include <cmath>

#include "spritediff/errors.hpp"
#include "spritediff/ops.hpp"

namespace spritediff {

namespace {

Tensor fixed_conv_weight(int co, int ci, Rng& rng) {
    Tensor w = Tensor::gaussian({co, ci, 3, 3}, rng);
    double scale = 1.0 / std::sqrt(static_cast<double>(ci) * 9);
    for (auto& v : w.mutable_data()) v *= scale;
    return w;
}

Tensor he_conv(int co, int ci, int k, Rng& rng) {
    Tensor w = Tensor::gaussian({co, ci, k, k}, rng);
    double scale = std::sqrt(2.0 / (static_cast<double>(ci) * k * k));
    for (auto& v : w.mutable_data()) v *= scale;
    return w;
}

}  // namespace

const FeaturePyramid& FeaturePyramid::fixed() {
    static const FeaturePyramid p = [] {
        FeaturePyramid fp;
        fp.channels = {16, 32, 64, 128};
        fp.resolutions = {32, 16, 8, 4};
        Rng rng(kWeightSeed, 0);
        int cin = 3;
        for (int s = 0; s < kStages; ++s) {
            fp.conv_w.push_back(fixed_conv_weight(fp.channels[s], cin, rng));
            fp.conv_b.push_back(Tensor::zeros({fp.channels[s]}));
            cin = fp.channels[s];
        }
        return fp;
    }();
    return p;
}

std::vector<Tensor> FeaturePyramid::forward(const Tensor& x) const {
    if (x.rank() != 4 || x.shape()[1] != 3)
        throw ShapeError("pyramid: expected [B,3,H,W], got " + shape_str(x.shape()));
    std::vector<Tensor> stages;
    Tensor h = x;
    for (int s = 0; s < kStages; ++s) {
        h = silu(conv2d(h, conv_w[s], conv_b[s], s == 0 ? 1 : 2, 1));
        stages.push_back(h);
    }
    return stages;
}

void FeaturePyramid::collect(const std::string& prefix, ParamMap& out) const {
    for (int s = 0; s < kStages; ++s) {
        out[prefix + ".stage" + std::to_string(s) + ".w"] = conv_w[s];
        out[prefix + ".stage" + std::to_string(s) + ".b"] = conv_b[s];
    }
}

void EncoderConfig::validate() const {
    if (tap_layers.empty()) throw ConfigError("encoder config: tap list must be non-empty");
    for (int t : tap_layers)
        if (t < 0 || t >= FeaturePyramid::kStages)
            throw ConfigError("encoder config: tap stage " + std::to_string(t) + " does not exist");
    if (out_dim <= 0 || out_dim % 8 != 0)
        throw ConfigError("encoder config: out_dim must be a positive multiple of 8");
    if (n_resblocks <= 0) throw ConfigError("encoder config: n_resblocks must be positive");
}

Tensor remove_background(const Tensor& img, const Tensor& mask, const std::array<double, 3>& fill) {
    if (img.rank() != 4 || img.shape()[1] != 3)
        throw ShapeError("remove_background: expected img [B,3,H,W], got " + shape_str(img.shape()));
    if (mask.rank() != 4 || mask.shape()[1] != 1 || mask.shape()[0] != img.shape()[0] ||
        mask.shape()[2] != img.shape()[2] || mask.shape()[3] != img.shape()[3])
        throw ShapeError("remove_background: mask " + shape_str(mask.shape()) +
                         " does not match img " + shape_str(img.shape()));
    int B = img.shape()[0], H = img.shape()[2], W = img.shape()[3];
    int64_t plane = static_cast<int64_t>(H) * W;
    const auto& md = mask.data();
    for (int b = 0; b < B; ++b) {
        bool any_fg = false;
        for (int64_t i = 0; i < plane; ++i) {
            double v = md[b * plane + i];
            if (v != 0.0 && v != 1.0)
                throw ContractError("remove_background: mask must be binary");
            if (v == 1.0) any_fg = true;
        }
        if (!any_fg) throw ContractError("remove_background: mask has no foreground pixel");
    }
    std::vector<double> out(img.numel());
    const auto& id = img.data();
    for (int b = 0; b < B; ++b) {
        const double* m = md.data() + b * plane;
        for (int c = 0; c < 3; ++c) {
            const double* src = id.data() + (static_cast<int64_t>(b) * 3 + c) * plane;
            double* dst = out.data() + (static_cast<int64_t>(b) * 3 + c) * plane;
            for (int64_t i = 0; i < plane; ++i) dst[i] = m[i] == 1.0 ? src[i] : fill[c];
        }
    }
    return Tensor::from_data(img.shape(), std::move(out));
}

Tensor downsample_mask(const Tensor& mask, int res) {
    if (res <= 0) throw ConfigError("downsample_mask: res must be positive");
    if (mask.rank() != 4 || mask.shape()[1] != 1)
        throw ShapeError("downsample_mask: expected [B,1,H,W]");
    int B = mask.shape()[0], H = mask.shape()[2];
    if (H % res != 0) throw ConfigError("downsample_mask: res must divide the mask size");
    int f = H / res;
    Tensor pooled = f == 1 ? mask : avg_pool2d(mask, f);
    const auto& pd = pooled.data();
    std::vector<double> out(pd.size());
    for (size_t i = 0; i < pd.size(); ++i) out[i] = pd[i] >= 0.5 ? 1.0 : 0.0;
    return Tensor::from_data({B, res * res}, std::move(out));
}

Tensor layout_channel(const Tensor& mask) {
    if (mask.rank() != 4 || mask.shape()[1] != 1)
        throw ShapeError("layout_channel: expected [B,1,H,W]");
    if (mask.shape()[2] % 4 != 0) throw ShapeError("layout_channel: size must be divisible by 4");
    Tensor coarse = avg_pool2d(mask.detach(), 4);
    return upsample_nearest2x(upsample_nearest2x(coarse)).detach();
}

Tensor augment_subject_image(const Tensor& img_clean, Rng& rng) {
    if (img_clean.rank() != 4 || img_clean.shape()[1] != 3)
        throw ShapeError("augment_subject_image: expected [B,3,H,W]");
    int B = img_clean.shape()[0], H = img_clean.shape()[2], W = img_clean.shape()[3];
    int64_t plane = static_cast<int64_t>(H) * W;

    static const double kScales[] = {0.85, 0.925, 1.0, 1.075, 1.15};
    static const int kRotDeg[] = {-15, -10, -5, 0, 5, 10, 15};

    std::vector<double> out(img_clean.numel());
    const auto& src = img_clean.data();
    for (int b = 0; b < B; ++b) {
        bool flip = rng.uniform() < 0.5;
        double scale = kScales[rng.next_below(5)];
        double rot = kRotDeg[rng.next_below(7)] * M_PI / 180.0;
        // Low-res offset field, bilinearly upsampled: elastic-style jitter.
        double field[2][4][4];
        for (int k = 0; k < 2; ++k)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) field[k][i][j] = rng.uniform(-1.5, 1.5);
        auto jitter = [&](int k, double x, double y) {
            double gx = x / (W - 1) * 3.0, gy = y / (H - 1) * 3.0;
            int i0 = std::min(2, static_cast<int>(gy)), j0 = std::min(2, static_cast<int>(gx));
            double fy = gy - i0, fx = gx - j0;
            return field[k][i0][j0] * (1 - fy) * (1 - fx) + field[k][i0][j0 + 1] * (1 - fy) * fx +
                   field[k][i0 + 1][j0] * fy * (1 - fx) + field[k][i0 + 1][j0 + 1] * fy * fx;
        };
        double cx = 0.5 * (W - 1), cy = 0.5 * (H - 1);
        double c = std::cos(-rot), s = std::sin(-rot);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                // Inverse map: output pixel -> source pixel.
                double dx = x - cx + jitter(0, x, y);
                double dy = y - cy + jitter(1, x, y);
                double sx = (dx * c - dy * s) / scale + cx;
                double sy = (dx * s + dy * c) / scale + cy;
                if (flip) sx = (W - 1) - sx;
                int ix = static_cast<int>(std::lround(sx));
                int iy = static_cast<int>(std::lround(sy));
                for (int ch = 0; ch < 3; ++ch) {
                    double v = 1.0;  // white fill
                    if (ix >= 0 && ix < W && iy >= 0 && iy < H)
                        v = src[(static_cast<int64_t>(b) * 3 + ch) * plane + iy * W + ix];
                    out[(static_cast<int64_t>(b) * 3 + ch) * plane + y * W + x] = v;
                }
            }
        }
    }
    return Tensor::from_data(img_clean.shape(), std::move(out));
}

SubjectEncoder SubjectEncoder::create(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    SubjectEncoder se;
    se.cfg = cfg;
    se.pyramid = FeaturePyramid::fixed();
    int coarsest = 0;
    int concat_ch = 0;
    for (int t : cfg.tap_layers) {
        coarsest = std::max(coarsest, t);
        concat_ch += se.pyramid.channels[t];
    }
    se.token_res = se.pyramid.resolutions[coarsest];

    int cin = concat_ch;
    for (int i = 0; i < cfg.n_resblocks; ++i) {
        int cout = cfg.out_dim;
        ResBlock rb;
        rb.groups = 8;
        rb.gn1_g = Tensor::full({cin}, 1.0);
        rb.gn1_b = Tensor::zeros({cin});
        rb.conv1_w = he_conv(cout, cin, 3, rng);
        rb.conv1_b = Tensor::zeros({cout});
        rb.gn2_g = Tensor::full({cout}, 1.0);
        rb.gn2_b = Tensor::zeros({cout});
        rb.conv2_w = he_conv(cout, cout, 3, rng);
        rb.conv2_b = Tensor::zeros({cout});
        rb.has_skip = cin != cout;
        if (rb.has_skip) {
            rb.skip_w = he_conv(cout, cin, 1, rng);
            rb.skip_b = Tensor::zeros({cout});
        }
        se.blocks.push_back(std::move(rb));
        cin = cout;
    }
    return se;
}

Tensor SubjectEncoder::encode_tokens(const Tensor& img_clean) const {
    auto stages = pyramid.forward(img_clean);
    std::vector<Tensor> taps;
    for (int t : cfg.tap_layers) {
        Tensor f = stages[t];
        int res = pyramid.resolutions[t];
        if (res != token_res) f = avg_pool2d(f, res / token_res);
        taps.push_back(f);
    }
    Tensor h = taps.size() == 1 ? taps[0] : concat(taps, 1);
    for (const auto& rb : blocks) {
        Tensor r = conv2d(silu(group_norm(h, rb.groups, rb.gn1_g, rb.gn1_b)), rb.conv1_w,
                          rb.conv1_b, 1, 1);
        r = conv2d(silu(group_norm(r, rb.groups, rb.gn2_g, rb.gn2_b)), rb.conv2_w, rb.conv2_b, 1, 1);
        Tensor skip = rb.has_skip ? conv2d(h, rb.skip_w, rb.skip_b, 1, 0) : h;
        h = add(r, skip);
    }
    int B = img_clean.shape()[0];
    // [B,C,r,r] -> [B, r*r, C]
    return reshape(permute(h, {0, 2, 3, 1}), {B, token_res * token_res, cfg.out_dim});
}

SubjectFeatures SubjectEncoder::encode(const Tensor& img_clean, double beta) const {
    return SubjectFeatures{encode_tokens(img_clean), beta};
}

void SubjectEncoder::collect(const std::string& prefix, ParamMap& out) const {
    pyramid.collect(prefix + ".pyramid", out);
    for (size_t i = 0; i < blocks.size(); ++i) {
        const auto& rb = blocks[i];
        std::string p = prefix + ".res" + std::to_string(i);
        out[p + ".gn1_g"] = rb.gn1_g;
        out[p + ".gn1_b"] = rb.gn1_b;
        out[p + ".conv1_w"] = rb.conv1_w;
        out[p + ".conv1_b"] = rb.conv1_b;
        out[p + ".gn2_g"] = rb.gn2_g;
        out[p + ".gn2_b"] = rb.gn2_b;
        out[p + ".conv2_w"] = rb.conv2_w;
        out[p + ".conv2_b"] = rb.conv2_b;
        if (rb.has_skip) {
            out[p + ".skip_w"] = rb.skip_w;
            out[p + ".skip_b"] = rb.skip_b;
        }
    }
}

std::vector<Tensor> SubjectEncoder::adapter_parameters() const {
    ParamMap m;
    ParamMap pyr;
    collect("se", m);
    pyramid.collect("se.pyramid", pyr);
    std::vector<Tensor> out;
    for (auto& [k, v] : m)
        if (!pyr.count(k)) out.push_back(v);
    return out;
}

}  // namespace spritediff
