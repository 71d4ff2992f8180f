#include "spritediff/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "spritediff/errors.hpp"
#include "spritediff/ops.hpp"

namespace spritediff {

namespace {

constexpr int N = kImageSize;
constexpr double kFgThreshold = 0.5;  // palette corners are >= 1 apart in L-inf

int nearest_palette(const double* rgb) {
    int best = 0;
    double best_d = 1e9;
    for (int c = 0; c < kNumColors; ++c) {
        double d = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
            double e = rgb[ch] - kPalette[c][ch];
            d += e * e;
        }
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

void pixel_rgb(const Tensor& img, int x, int y, double* rgb) {
    const auto& d = img.data();
    for (int ch = 0; ch < 3; ++ch) rgb[ch] = d[ch * N * N + y * N + x];
}

}  // namespace

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw ContractError("cosine_similarity: zero-norm embedding");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

Tensor estimate_foreground_mask(const Tensor& img) {
    if (img.rank() != 3 || img.shape()[0] != 3 || img.shape()[1] != N || img.shape()[2] != N)
        throw ShapeError("estimate_foreground_mask: expected [3,32,32]");
    const auto& d = img.data();
    auto px = [&](int ch, int x, int y) { return d[ch * N * N + y * N + x]; };

    std::vector<double> mask(N * N, 0.0);
    int best_i = -1;
    double best_dev = -1.0;
    for (int y = 1; y < N - 1; ++y) {
        for (int x = 1; x < N - 1; ++x) {
            double dev = 0.0;
            for (int ch = 0; ch < 3; ++ch) {
                // Row and column interpolation of the border ring.
                double tx = static_cast<double>(x) / (N - 1);
                double ty = static_cast<double>(y) / (N - 1);
                double row_pred = px(ch, 0, y) + (px(ch, N - 1, y) - px(ch, 0, y)) * tx;
                double col_pred = px(ch, x, 0) + (px(ch, x, N - 1) - px(ch, x, 0)) * ty;
                double v = px(ch, x, y);
                dev = std::max(dev, std::min(std::abs(v - row_pred), std::abs(v - col_pred)));
            }
            if (dev > kFgThreshold) mask[y * N + x] = 1.0;
            if (dev > best_dev) {
                best_dev = dev;
                best_i = y * N + x;
            }
        }
    }
    bool any = std::any_of(mask.begin(), mask.end(), [](double v) { return v == 1.0; });
    if (!any && best_i >= 0) mask[best_i] = 1.0;
    return Tensor::from_data({1, N, N}, std::move(mask));
}

std::vector<double> identity_embedding(const Tensor& img, const Tensor& mask,
                                       const FeaturePyramid& enc) {
    if (img.rank() != 3 || mask.rank() != 3)
        throw ShapeError("identity_embedding: expected [3,H,W] image and [1,H,W] mask");
    NoGradGuard ng;
    Tensor clean = remove_background(reshape(img, {1, 3, N, N}), reshape(mask, {1, 1, N, N}));
    auto stages = enc.forward(clean);
    std::vector<double> emb;
    for (int s = 0; s < FeaturePyramid::kStages; ++s) {
        int res = enc.resolutions[s];
        int C = enc.channels[s];
        Tensor m = res == N ? reshape(mask, {1, 1, N, N}) : avg_pool2d(reshape(mask, {1, 1, N, N}), N / res);
        const auto& md = m.data();
        const auto& fd = stages[s].data();
        double wsum = 0.0;
        for (int i = 0; i < res * res; ++i) wsum += md[i];
        if (wsum <= 0.0) throw ContractError("identity_embedding: empty pooled foreground");
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            const double* f = fd.data() + static_cast<int64_t>(c) * res * res;
            for (int i = 0; i < res * res; ++i) acc += f[i] * md[i];
            emb.push_back(acc / wsum);
        }
    }
    return emb;
}

double identity_score(const Tensor& gen, const Tensor& ref, const FeaturePyramid& enc,
                      const Tensor& gen_mask, const Tensor& ref_mask) {
    Tensor gm = gen_mask.defined() ? gen_mask : estimate_foreground_mask(gen);
    Tensor rm = ref_mask.defined() ? ref_mask : estimate_foreground_mask(ref);
    return cosine_similarity(identity_embedding(gen, gm, enc), identity_embedding(ref, rm, enc));
}

int probe_dominant_color(const Tensor& img, const Tensor& mask) {
    const auto& md = mask.data();
    int votes[kNumColors] = {0};
    for (int y = 0; y < N; ++y)
        for (int x = 0; x < N; ++x)
            if (md[y * N + x] == 1.0) {
                double rgb[3];
                pixel_rgb(img, x, y, rgb);
                ++votes[nearest_palette(rgb)];
            }
    int best = 0;
    for (int c = 1; c < kNumColors; ++c)
        if (votes[c] > votes[best]) best = c;
    return best;
}

ShapeClass probe_shape(const Tensor& fg_mask) {
    const auto& md = fg_mask.data();
    int xmin = N, xmax = -1, ymin = N, ymax = -1;
    for (int y = 0; y < N; ++y)
        for (int x = 0; x < N; ++x)
            if (md[y * N + x] == 1.0) {
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
                ymin = std::min(ymin, y);
                ymax = std::max(ymax, y);
            }
    if (xmax < 0) throw ContractError("probe_shape: empty mask");
    int bcx = (xmin + xmax + 1) / 2, bcy = (ymin + ymax + 1) / 2;
    int half = std::max(xmax - xmin, ymax - ymin) / 2;

    const auto& radii = pose_radii();
    const auto& rots = pose_rotations();
    double best_iou = -1.0;
    ShapeClass best = ShapeClass::Circle;
    std::vector<uint8_t> tmpl;
    for (int cls = 0; cls < kNumShapes; ++cls) {
        for (int r : radii) {
            // Rotation and shape anisotropy shift the bbox-derived radius by
            // up to ~0.25 r, so the candidate window is deliberately wide.
            if (std::abs(r - half) > 3) continue;
            for (double rot : rots) {
                for (int dy = -2; dy <= 2; ++dy) {
                    for (int dx = -2; dx <= 2; ++dx) {
                        Pose p;
                        p.cx = bcx + dx;
                        p.cy = bcy + dy;
                        p.radius = r;
                        p.rot = rot;
                        render_shape_mask(static_cast<ShapeClass>(cls), p, tmpl);
                        int inter = 0, uni = 0;
                        for (int i = 0; i < N * N; ++i) {
                            bool a = md[i] == 1.0, b = tmpl[i] != 0;
                            inter += (a && b);
                            uni += (a || b);
                        }
                        double iou = uni ? static_cast<double>(inter) / uni : 0.0;
                        if (iou > best_iou) {
                            best_iou = iou;
                            best = static_cast<ShapeClass>(cls);
                        }
                    }
                }
            }
        }
    }
    return best;
}

Caption::Background probe_background(const Tensor& img) {
    // Border ring statistics: near-constant ring means a solid background.
    double mn[3] = {1e9, 1e9, 1e9}, mx[3] = {-1e9, -1e9, -1e9}, mean[3] = {0, 0, 0};
    int count = 0;
    for (int y = 0; y < N; ++y)
        for (int x = 0; x < N; ++x) {
            if (x != 0 && x != N - 1 && y != 0 && y != N - 1) continue;
            double rgb[3];
            pixel_rgb(img, x, y, rgb);
            for (int ch = 0; ch < 3; ++ch) {
                mn[ch] = std::min(mn[ch], rgb[ch]);
                mx[ch] = std::max(mx[ch], rgb[ch]);
                mean[ch] += rgb[ch];
            }
            ++count;
        }
    double spread = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
        mean[ch] /= count;
        spread = std::max(spread, mx[ch] - mn[ch]);
    }
    Caption::Background bg;
    if (spread > 0.25) {
        bg.gradient = true;
        bg.color = -1;
    } else {
        bg.gradient = false;
        bg.color = nearest_palette(mean);
    }
    return bg;
}

std::optional<PatternType> probe_pattern(const Tensor& img, const Tensor& mask) {
    const auto& md = mask.data();
    int dominant = probe_dominant_color(img, mask);
    std::vector<uint8_t> pat(N * N, 0);
    int total = 0;
    for (int y = 0; y < N; ++y)
        for (int x = 0; x < N; ++x)
            if (md[y * N + x] == 1.0) {
                double rgb[3];
                pixel_rgb(img, x, y, rgb);
                if (nearest_palette(rgb) != dominant) {
                    pat[y * N + x] = 1;
                    ++total;
                }
            }
    if (total < 3 || total > 40) return std::nullopt;

    // Connected components (4-neighborhood) over pattern pixels.
    std::vector<int> comp(N * N, -1);
    int ncomp = 0;
    std::vector<std::array<int, 4>> boxes;  // xmin,xmax,ymin,ymax
    std::vector<int> sizes;
    std::vector<int> stack;
    for (int i = 0; i < N * N; ++i) {
        if (!pat[i] || comp[i] >= 0) continue;
        int id = ncomp++;
        boxes.push_back({N, -1, N, -1});
        sizes.push_back(0);
        stack.push_back(i);
        comp[i] = id;
        while (!stack.empty()) {
            int j = stack.back();
            stack.pop_back();
            int x = j % N, y = j / N;
            ++sizes[id];
            boxes[id][0] = std::min(boxes[id][0], x);
            boxes[id][1] = std::max(boxes[id][1], x);
            boxes[id][2] = std::min(boxes[id][2], y);
            boxes[id][3] = std::max(boxes[id][3], y);
            const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
            for (int k = 0; k < 4; ++k) {
                int nx = x + dx[k], ny = y + dy[k];
                if (nx < 0 || nx >= N || ny < 0 || ny >= N) continue;
                int nj = ny * N + nx;
                if (pat[nj] && comp[nj] < 0) {
                    comp[nj] = id;
                    stack.push_back(nj);
                }
            }
        }
    }

    int singles = 0, bars = 0, blobs = 0;
    for (int id = 0; id < ncomp; ++id) {
        int w = boxes[id][1] - boxes[id][0] + 1;
        int h = boxes[id][3] - boxes[id][2] + 1;
        if (sizes[id] == 1) ++singles;
        else if (h == 1 && w >= 3) ++bars;
        else if (w >= 3 && h >= 3) ++blobs;
    }
    if (bars >= 2) return PatternType::Stripes;
    if (blobs >= 1) return PatternType::Glyph;
    if (singles >= 3) return PatternType::Dots;
    return std::nullopt;
}

double prompt_score(const Tensor& img, const Caption& caption) {
    if (!caption.shape) throw ContractError("prompt_score: caption must carry a shape");
    Tensor mask = estimate_foreground_mask(img);
    int attrs = 0, hits = 0;

    ++attrs;  // shape
    if (probe_shape(mask) == *caption.shape) ++hits;
    if (caption.color) {
        ++attrs;
        if (probe_dominant_color(img, mask) == *caption.color) ++hits;
    }
    if (caption.background) {
        ++attrs;
        Caption::Background got = probe_background(img);
        if (got.gradient == caption.background->gradient &&
            (got.gradient || got.color == caption.background->color))
            ++hits;
    }
    if (caption.detail) {
        ++attrs;
        auto got = probe_pattern(img, mask);
        if (got && *got == *caption.detail) ++hits;
    }
    return static_cast<double>(hits) / attrs;
}

}  // namespace spritediff
