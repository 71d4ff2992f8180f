#include "spritediff/sprites.hpp"

#include <array>
#include <cmath>

#include "spritediff/errors.hpp"

namespace spritediff {

namespace {

constexpr int N = kImageSize;

struct Polygon {
    std::vector<double> xs, ys;
};

Polygon bbox_centered(Polygon p) {
    double xmin = p.xs[0], xmax = p.xs[0], ymin = p.ys[0], ymax = p.ys[0];
    for (size_t i = 1; i < p.xs.size(); ++i) {
        xmin = std::min(xmin, p.xs[i]);
        xmax = std::max(xmax, p.xs[i]);
        ymin = std::min(ymin, p.ys[i]);
        ymax = std::max(ymax, p.ys[i]);
    }
    double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax);
    for (size_t i = 0; i < p.xs.size(); ++i) {
        p.xs[i] -= cx;
        p.ys[i] -= cy;
    }
    return p;
}

const Polygon& square_poly() {
    static const Polygon p = [] {
        Polygon q;
        double a = 0.78;
        q.xs = {-a, a, a, -a};
        q.ys = {-a, -a, a, a};
        return q;
    }();
    return p;
}

const Polygon& triangle_poly() {
    static const Polygon p = [] {
        Polygon q;
        for (int k = 0; k < 3; ++k) {
            double ang = M_PI / 2 + k * 2.0 * M_PI / 3;
            q.xs.push_back(std::cos(ang));
            q.ys.push_back(std::sin(ang));
        }
        return bbox_centered(q);
    }();
    return p;
}

const Polygon& star_poly() {
    static const Polygon p = [] {
        Polygon q;
        for (int k = 0; k < 10; ++k) {
            double r = (k % 2 == 0) ? 1.0 : 0.45;
            double ang = M_PI / 2 + k * M_PI / 5;
            q.xs.push_back(r * std::cos(ang));
            q.ys.push_back(r * std::sin(ang));
        }
        return bbox_centered(q);
    }();
    return p;
}

bool point_in_polygon(const Polygon& p, double x, double y) {
    bool inside = false;
    size_t n = p.xs.size();
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        if ((p.ys[i] > y) != (p.ys[j] > y)) {
            double t = (y - p.ys[j]) / (p.ys[i] - p.ys[j]);
            double xi = p.xs[j] + t * (p.xs[i] - p.xs[j]);
            if (x < xi) inside = !inside;
        }
    }
    return inside;
}

}  // namespace

bool point_in_shape(ShapeClass shape, double x, double y) {
    switch (shape) {
        case ShapeClass::Circle:
            return x * x + y * y <= 1.0;
        case ShapeClass::Square:
            return point_in_polygon(square_poly(), x, y);
        case ShapeClass::Triangle:
            return point_in_polygon(triangle_poly(), x, y);
        case ShapeClass::Star:
            return point_in_polygon(star_poly(), x, y);
    }
    return false;
}

void render_shape_mask(ShapeClass shape, const Pose& pose, std::vector<uint8_t>& mask) {
    mask.assign(N * N, 0);
    double c = std::cos(-pose.rot), s = std::sin(-pose.rot);
    double inv_r = 1.0 / pose.radius;
    for (int y = 0; y < N; ++y) {
        double py = (y + 0.5) - pose.cy;
        for (int x = 0; x < N; ++x) {
            double px = (x + 0.5) - pose.cx;
            double ux = (px * c - py * s) * inv_r;
            double uy = (px * s + py * c) * inv_r;
            if (point_in_shape(shape, ux, uy)) mask[y * N + x] = 1;
        }
    }
}

std::vector<int> pattern_pixels(const Sprite& sp, const std::vector<uint8_t>& fg) {
    // Patterns are drawn axis-aligned at the sprite center, unscaled, so the
    // motif stays within the 4..25 pixel identity budget at every pose.
    std::vector<int> px;
    int cx = sp.pose.cx, cy = sp.pose.cy;
    auto push = [&](int x, int y) {
        if (x < 0 || x >= N || y < 0 || y >= N) return;
        if (fg[y * N + x]) px.push_back(y * N + x);
    };
    switch (sp.id.pattern) {
        case PatternType::Stripes:
            for (int dx = -2; dx <= 2; ++dx) {
                push(cx + dx, cy - 2);
                push(cx + dx, cy + 2);
            }
            break;
        case PatternType::Dots:
            push(cx - 2, cy);
            push(cx + 2, cy);
            push(cx, cy - 2);
            push(cx, cy + 2);
            break;
        case PatternType::Glyph:
            for (int d = -1; d <= 1; ++d) {
                push(cx + d, cy);
                push(cx, cy + d);
            }
            break;
    }
    return px;
}

void render_sprite(const Sprite& sp, Tensor& image, Tensor& mask) {
    std::vector<uint8_t> fg;
    render_shape_mask(sp.id.shape, sp.pose, fg);

    std::vector<double> img(3 * N * N);
    std::vector<double> msk(N * N);
    const double* base = kPalette[sp.id.base_color];
    const double* pa = kPalette[sp.bg.color_a];
    const double* pb = kPalette[sp.bg.color_b];
    for (int y = 0; y < N; ++y) {
        for (int x = 0; x < N; ++x) {
            int i = y * N + x;
            double col[3];
            if (fg[i]) {
                col[0] = base[0];
                col[1] = base[1];
                col[2] = base[2];
                msk[i] = 1.0;
            } else {
                if (sp.bg.gradient) {
                    double t = sp.bg.horizontal ? static_cast<double>(x) / (N - 1)
                                                : static_cast<double>(y) / (N - 1);
                    for (int ch = 0; ch < 3; ++ch) col[ch] = pa[ch] + (pb[ch] - pa[ch]) * t;
                } else {
                    for (int ch = 0; ch < 3; ++ch) col[ch] = pa[ch];
                }
                msk[i] = 0.0;
            }
            for (int ch = 0; ch < 3; ++ch) img[ch * N * N + i] = col[ch];
        }
    }
    auto pattern = pattern_pixels(sp, fg);
    if (pattern.size() < 4 || pattern.size() > 25)
        throw ContractError("render_sprite: detail pattern has " + std::to_string(pattern.size()) +
                            " pixels, outside [4,25]");
    const double* pc = kPalette[sp.id.pattern_color];
    for (int i : pattern)
        for (int ch = 0; ch < 3; ++ch) img[ch * N * N + i] = pc[ch];

    image = Tensor::from_data({3, N, N}, std::move(img));
    mask = Tensor::from_data({1, N, N}, std::move(msk));
}

const std::vector<int>& pose_radii() {
    static const std::vector<int> r = {6, 7, 8, 9, 10};
    return r;
}

const std::vector<double>& pose_rotations() {
    static const std::vector<double> r = [] {
        std::vector<double> v;
        for (int d = -20; d <= 20; d += 5) v.push_back(d * M_PI / 180.0);
        return v;
    }();
    return r;
}

Sprite sample_sprite(Rng& rng) {
    Sprite sp;
    sp.id.shape = static_cast<ShapeClass>(rng.next_below(kNumShapes));
    sp.id.base_color = static_cast<int>(rng.next_below(kNumColors));
    sp.id.pattern = static_cast<PatternType>(rng.next_below(kNumPatterns));
    sp.id.pattern_color = static_cast<int>(rng.next_below(kNumColors - 1));
    if (sp.id.pattern_color >= sp.id.base_color) ++sp.id.pattern_color;

    const auto& radii = pose_radii();
    sp.pose.radius = radii[rng.next_below(radii.size())];
    int lo = sp.pose.radius + 2, hi = N - sp.pose.radius - 2;
    sp.pose.cx = lo + static_cast<int>(rng.next_below(hi - lo + 1));
    sp.pose.cy = lo + static_cast<int>(rng.next_below(hi - lo + 1));
    const auto& rots = pose_rotations();
    sp.pose.rot = rots[rng.next_below(rots.size())];

    // Background colors never collide with the sprite's own colors, so every
    // foreground pixel stays separable from the background model.
    auto pick_bg = [&]() {
        while (true) {
            int c = static_cast<int>(rng.next_below(kNumColors));
            if (c != sp.id.base_color && c != sp.id.pattern_color) return c;
        }
    };
    sp.bg.gradient = rng.uniform() < 0.5;
    sp.bg.color_a = pick_bg();
    if (sp.bg.gradient) {
        do {
            sp.bg.color_b = pick_bg();
        } while (sp.bg.color_b == sp.bg.color_a);
        sp.bg.horizontal = rng.uniform() < 0.5;
    } else {
        sp.bg.color_b = sp.bg.color_a;
    }
    return sp;
}

Caption caption_for(const Sprite& sp, bool detailed) {
    Caption c;
    c.color = sp.id.base_color;
    c.shape = sp.id.shape;
    if (detailed) c.detail = sp.id.pattern;
    Caption::Background bg;
    bg.gradient = sp.bg.gradient;
    bg.color = sp.bg.gradient ? -1 : sp.bg.color_a;
    c.background = bg;
    return c;
}

std::vector<SpriteSample> gen_dataset(int n, uint64_t seed) {
    if (n <= 0) throw ConfigError("gen_dataset: n must be positive");
    std::vector<SpriteSample> out;
    out.reserve(n);
    Rng base(seed, 0xDA7A5E7);
    for (int i = 0; i < n; ++i) {
        Rng rng = base.substream(i);
        SpriteSample s;
        s.sprite = sample_sprite(rng);
        render_sprite(s.sprite, s.image, s.mask);
        s.caption = caption_for(s.sprite, rng.uniform() < 0.3);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace spritediff
