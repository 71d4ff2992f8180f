#include <algorithm>
#include <cstring>

#include "spritediff/errors.hpp"
#include "spritediff/ops.hpp"

namespace spritediff {

namespace {

// Valid output range [lo, hi) along one spatial axis for kernel offset k:
// in = out*stride + k - pad must land in [0, in_size).
inline void out_range(int in_size, int out_size, int stride, int pad, int k, int& lo, int& hi) {
    int off = k - pad;
    lo = off < 0 ? (-off + stride - 1) / stride : 0;
    int max_in = in_size - 1 - off;
    hi = max_in < 0 ? 0 : std::min(out_size, max_in / stride + 1);
    lo = std::min(lo, hi);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    if (x.rank() != 4 || w.rank() != 4)
        throw ShapeError("conv2d: expected x[B,Ci,H,W], w[Co,Ci,kh,kw], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
    if (stride != 1 && stride != 2) throw ConfigError("conv2d: stride must be 1 or 2");
    if (pad < 0) throw ConfigError("conv2d: negative padding");
    int B = x.shape()[0], Ci = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    int Co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    if (w.shape()[1] != Ci)
        throw ShapeError("conv2d: input channels " + shape_str(x.shape()) +
                         " do not match weight " + shape_str(w.shape()));
    if (b.defined() && b.numel() != Co)
        throw ShapeError("conv2d: bias shape " + shape_str(b.shape()) + " does not match Co");
    int Ho = (H + 2 * pad - kh) / stride + 1;
    int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: kernel larger than padded input");

    int64_t in_plane = static_cast<int64_t>(H) * W;
    int64_t out_plane = static_cast<int64_t>(Ho) * Wo;
    std::vector<double> out(static_cast<int64_t>(B) * Co * out_plane);
    const double* xd = x.data().data();
    const double* wd = w.data().data();
    const double* bd = b.defined() ? b.data().data() : nullptr;

    for (int bi = 0; bi < B; ++bi) {
        for (int co = 0; co < Co; ++co) {
            double* op = out.data() + (static_cast<int64_t>(bi) * Co + co) * out_plane;
            double bias = bd ? bd[co] : 0.0;
            for (int64_t i = 0; i < out_plane; ++i) op[i] = bias;
            for (int ci = 0; ci < Ci; ++ci) {
                const double* xp = xd + (static_cast<int64_t>(bi) * Ci + ci) * in_plane;
                const double* wp = wd + ((static_cast<int64_t>(co) * Ci + ci) * kh) * kw;
                for (int i = 0; i < kh; ++i) {
                    int oh_lo, oh_hi;
                    out_range(H, Ho, stride, pad, i, oh_lo, oh_hi);
                    for (int j = 0; j < kw; ++j) {
                        double wv = wp[i * kw + j];
                        if (wv == 0.0) continue;
                        int ow_lo, ow_hi;
                        out_range(W, Wo, stride, pad, j, ow_lo, ow_hi);
                        for (int oh = oh_lo; oh < oh_hi; ++oh) {
                            const double* xrow = xp + static_cast<int64_t>(oh * stride + i - pad) * W;
                            double* orow = op + static_cast<int64_t>(oh) * Wo;
                            if (stride == 1) {
                                const double* xs = xrow + j - pad;
                                for (int ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * xs[ow];
                            } else {
                                for (int ow = ow_lo; ow < ow_hi; ++ow)
                                    orow[ow] += wv * xrow[ow * stride + j - pad];
                            }
                        }
                    }
                }
            }
        }
    }

    auto xn = x.node(), wn = w.node();
    auto bnode = b.defined() ? b.node() : nullptr;
    Shape out_shape = {B, Co, Ho, Wo};
    return make_op(out_shape, std::move(out), {x, w, b},
                   [xn, wn, bnode, B, Ci, Co, H, W, Ho, Wo, kh, kw, stride, pad, in_plane,
                    out_plane](TensorNode& n) {
                       const double* g = n.grad.data();
                       const double* xd = xn->data.data();
                       const double* wd = wn->data.data();
                       if (bnode && bnode->requires_grad) {
                           bnode->ensure_grad();
                           for (int bi = 0; bi < B; ++bi)
                               for (int co = 0; co < Co; ++co) {
                                   const double* gp =
                                       g + (static_cast<int64_t>(bi) * Co + co) * out_plane;
                                   double acc = 0.0;
                                   for (int64_t i = 0; i < out_plane; ++i) acc += gp[i];
                                   bnode->grad[co] += acc;
                               }
                       }
                       if (wn->requires_grad) {
                           wn->ensure_grad();
                           for (int bi = 0; bi < B; ++bi) {
                               for (int co = 0; co < Co; ++co) {
                                   const double* gp =
                                       g + (static_cast<int64_t>(bi) * Co + co) * out_plane;
                                   for (int ci = 0; ci < Ci; ++ci) {
                                       const double* xp =
                                           xd + (static_cast<int64_t>(bi) * Ci + ci) * in_plane;
                                       double* wg = wn->grad.data() +
                                                    ((static_cast<int64_t>(co) * Ci + ci) * kh) * kw;
                                       for (int i = 0; i < kh; ++i) {
                                           int oh_lo, oh_hi;
                                           out_range(H, Ho, stride, pad, i, oh_lo, oh_hi);
                                           for (int j = 0; j < kw; ++j) {
                                               int ow_lo, ow_hi;
                                               out_range(W, Wo, stride, pad, j, ow_lo, ow_hi);
                                               double acc = 0.0;
                                               for (int oh = oh_lo; oh < oh_hi; ++oh) {
                                                   const double* xrow =
                                                       xp + static_cast<int64_t>(oh * stride + i - pad) * W;
                                                   const double* grow =
                                                       gp + static_cast<int64_t>(oh) * Wo;
                                                   if (stride == 1) {
                                                       const double* xs = xrow + j - pad;
                                                       for (int ow = ow_lo; ow < ow_hi; ++ow)
                                                           acc += grow[ow] * xs[ow];
                                                   } else {
                                                       for (int ow = ow_lo; ow < ow_hi; ++ow)
                                                           acc += grow[ow] * xrow[ow * stride + j - pad];
                                                   }
                                               }
                                               wg[i * kw + j] += acc;
                                           }
                                       }
                                   }
                               }
                           }
                       }
                       if (xn->requires_grad) {
                           xn->ensure_grad();
                           for (int bi = 0; bi < B; ++bi) {
                               for (int co = 0; co < Co; ++co) {
                                   const double* gp =
                                       g + (static_cast<int64_t>(bi) * Co + co) * out_plane;
                                   for (int ci = 0; ci < Ci; ++ci) {
                                       double* xg = xn->grad.data() +
                                                    (static_cast<int64_t>(bi) * Ci + ci) * in_plane;
                                       const double* wp =
                                           wd + ((static_cast<int64_t>(co) * Ci + ci) * kh) * kw;
                                       for (int i = 0; i < kh; ++i) {
                                           int oh_lo, oh_hi;
                                           out_range(H, Ho, stride, pad, i, oh_lo, oh_hi);
                                           for (int j = 0; j < kw; ++j) {
                                               double wv = wp[i * kw + j];
                                               if (wv == 0.0) continue;
                                               int ow_lo, ow_hi;
                                               out_range(W, Wo, stride, pad, j, ow_lo, ow_hi);
                                               for (int oh = oh_lo; oh < oh_hi; ++oh) {
                                                   double* xrow =
                                                       xg + static_cast<int64_t>(oh * stride + i - pad) * W;
                                                   const double* grow =
                                                       gp + static_cast<int64_t>(oh) * Wo;
                                                   if (stride == 1) {
                                                       double* xs = xrow + j - pad;
                                                       for (int ow = ow_lo; ow < ow_hi; ++ow)
                                                           xs[ow] += wv * grow[ow];
                                                   } else {
                                                       for (int ow = ow_lo; ow < ow_hi; ++ow)
                                                           xrow[ow * stride + j - pad] += wv * grow[ow];
                                                   }
                                               }
                                           }
                                       }
                                   }
                               }
                           }
                       }
                   });
}

Tensor upsample_nearest2x(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("upsample_nearest2x: expected [B,C,H,W]");
    int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    int Ho = H * 2, Wo = W * 2;
    std::vector<double> out(static_cast<int64_t>(B) * C * Ho * Wo);
    const double* xd = x.data().data();
    int64_t planes = static_cast<int64_t>(B) * C;
    for (int64_t p = 0; p < planes; ++p) {
        const double* xp = xd + p * H * W;
        double* op = out.data() + p * Ho * Wo;
        for (int h = 0; h < H; ++h) {
            double* r0 = op + static_cast<int64_t>(2 * h) * Wo;
            double* r1 = r0 + Wo;
            const double* xr = xp + static_cast<int64_t>(h) * W;
            for (int w = 0; w < W; ++w) {
                double v = xr[w];
                r0[2 * w] = v;
                r0[2 * w + 1] = v;
                r1[2 * w] = v;
                r1[2 * w + 1] = v;
            }
        }
    }
    auto xn = x.node();
    return make_op({B, C, Ho, Wo}, std::move(out), {x}, [xn, planes, H, W, Wo](TensorNode& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t p = 0; p < planes; ++p) {
            double* xg = xn->grad.data() + p * H * W;
            const double* gp = n.grad.data() + p * (4 * static_cast<int64_t>(H) * W);
            for (int h = 0; h < H; ++h) {
                const double* r0 = gp + static_cast<int64_t>(2 * h) * Wo;
                const double* r1 = r0 + Wo;
                double* xr = xg + static_cast<int64_t>(h) * W;
                for (int w = 0; w < W; ++w)
                    xr[w] += r0[2 * w] + r0[2 * w + 1] + r1[2 * w] + r1[2 * w + 1];
            }
        }
    });
}

Tensor avg_pool2d(const Tensor& x, int factor) {
    if (x.rank() != 4) throw ShapeError("avg_pool2d: expected [B,C,H,W]");
    if (factor <= 0) throw ConfigError("avg_pool2d: factor must be positive");
    int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (H % factor != 0 || W % factor != 0)
        throw ShapeError("avg_pool2d: factor " + std::to_string(factor) +
                         " does not divide spatial dims of " + shape_str(x.shape()));
    int Ho = H / factor, Wo = W / factor;
    double inv = 1.0 / (static_cast<double>(factor) * factor);
    std::vector<double> out(static_cast<int64_t>(B) * C * Ho * Wo, 0.0);
    const double* xd = x.data().data();
    int64_t planes = static_cast<int64_t>(B) * C;
    for (int64_t p = 0; p < planes; ++p) {
        const double* xp = xd + p * H * W;
        double* op = out.data() + p * Ho * Wo;
        for (int h = 0; h < H; ++h) {
            const double* xr = xp + static_cast<int64_t>(h) * W;
            double* orow = op + static_cast<int64_t>(h / factor) * Wo;
            for (int w = 0; w < W; ++w) orow[w / factor] += xr[w];
        }
        for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i) op[i] *= inv;
    }
    auto xn = x.node();
    return make_op({B, C, Ho, Wo}, std::move(out), {x},
                   [xn, planes, H, W, Wo, factor, inv](TensorNode& n) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (int64_t p = 0; p < planes; ++p) {
                           double* xg = xn->grad.data() + p * H * W;
                           const double* gp = n.grad.data() + p * (static_cast<int64_t>(H) / factor) * Wo;
                           for (int h = 0; h < H; ++h) {
                               double* xr = xg + static_cast<int64_t>(h) * W;
                               const double* grow = gp + static_cast<int64_t>(h / factor) * Wo;
                               for (int w = 0; w < W; ++w) xr[w] += grow[w / factor] * inv;
                           }
                       }
                   });
}

Tensor add_batch_bias(const Tensor& x, const Tensor& p) {
    if (x.rank() != p.rank() + 1)
        throw ShapeError("add_batch_bias: expected x rank = p rank + 1");
    for (int i = 0; i < p.rank(); ++i)
        if (x.shape()[i + 1] != p.shape()[i])
            throw ShapeError("add_batch_bias: " + shape_str(p.shape()) + " does not tile " +
                             shape_str(x.shape()));
    int B = x.shape()[0];
    int64_t inner = p.numel();
    std::vector<double> out(x.numel());
    const double* xd = x.data().data();
    const double* pd = p.data().data();
    for (int b = 0; b < B; ++b) {
        const double* xp = xd + b * inner;
        double* op = out.data() + b * inner;
        for (int64_t i = 0; i < inner; ++i) op[i] = xp[i] + pd[i];
    }
    auto xn = x.node(), pn = p.node();
    return make_op(x.shape(), std::move(out), {x, p}, [xn, pn, B, inner](TensorNode& n) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) xn->grad[i] += n.grad[i];
        }
        if (pn->requires_grad) {
            pn->ensure_grad();
            for (int b = 0; b < B; ++b) {
                const double* gp = n.grad.data() + b * inner;
                for (int64_t i = 0; i < inner; ++i) pn->grad[i] += gp[i];
            }
        }
    });
}

Tensor add_channel_map(const Tensor& x, const Tensor& t) {
    if (x.rank() != 4 || t.rank() != 2)
        throw ShapeError("add_channel_map: expected x[B,C,H,W], t[B,C]");
    int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (t.shape()[0] != B || t.shape()[1] != C)
        throw ShapeError("add_channel_map: " + shape_str(t.shape()) + " does not match " +
                         shape_str(x.shape()));
    int64_t plane = static_cast<int64_t>(H) * W;
    std::vector<double> out(x.numel());
    const double* xd = x.data().data();
    const double* td = t.data().data();
    for (int64_t p = 0; p < static_cast<int64_t>(B) * C; ++p) {
        double v = td[p];
        const double* xp = xd + p * plane;
        double* op = out.data() + p * plane;
        for (int64_t i = 0; i < plane; ++i) op[i] = xp[i] + v;
    }
    auto xn = x.node(), tn = t.node();
    return make_op(x.shape(), std::move(out), {x, t}, [xn, tn, B, C, plane](TensorNode& n) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) xn->grad[i] += n.grad[i];
        }
        if (tn->requires_grad) {
            tn->ensure_grad();
            for (int64_t p = 0; p < static_cast<int64_t>(B) * C; ++p) {
                const double* gp = n.grad.data() + p * plane;
                double acc = 0.0;
                for (int64_t i = 0; i < plane; ++i) acc += gp[i];
                tn->grad[p] += acc;
            }
        }
    });
}

}  // namespace spritediff
