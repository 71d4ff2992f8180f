#include "spritediff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "spritediff/errors.hpp"

namespace spritediff {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!same_shape(a.shape(), b.shape()))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<int64_t> row_major_strides(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& n) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& n) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] -= n.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& n) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i] * an->data[i];
        }
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] / bd[i];
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& n) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] / bn->data[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) {
                double q = an->data[i] / bn->data[i];
                bn->grad[i] -= n.grad[i] * q / bn->data[i];
            }
        }
    });
}

Tensor add_scalar(const Tensor& x, double s) {
    std::vector<double> out(x.numel());
    const auto& xd = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] + s;
    auto xn = x.node();
    return make_op(x.shape(), std::move(out), {x}, [xn](TensorNode& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) xn->grad[i] += n.grad[i];
    });
}

Tensor mul_scalar(const Tensor& x, double s) {
    std::vector<double> out(x.numel());
    const auto& xd = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * s;
    auto xn = x.node();
    return make_op(x.shape(), std::move(out), {x}, [xn, s](TensorNode& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) xn->grad[i] += n.grad[i] * s;
    });
}

Tensor silu(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto& xd = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * sigmoid(xd[i]);
    auto xn = x.node();
    return make_op(x.shape(), std::move(out), {x}, [xn](TensorNode& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            double s = sigmoid(xn->data[i]);
            xn->grad[i] += n.grad[i] * (s + xn->data[i] * s * (1.0 - s));
        }
    });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    std::vector<double> out(x.data());
    auto xn = x.node();
    return make_op(shape, std::move(out), {x}, [xn](TensorNode& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) xn->grad[i] += n.grad[i];
    });
}

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
    int r = x.rank();
    if (static_cast<int>(axes.size()) != r) throw ShapeError("permute: axes rank mismatch");
    std::vector<bool> used(r, false);
    Shape out_shape(r);
    for (int i = 0; i < r; ++i) {
        int a = axes[i];
        if (a < 0 || a >= r || used[a]) throw ShapeError("permute: invalid axes");
        used[a] = true;
        out_shape[i] = x.shape()[a];
    }
    auto in_strides = row_major_strides(x.shape());
    auto out_strides = row_major_strides(out_shape);
    // perm_strides[i]: input stride of output axis i.
    std::vector<int64_t> perm_strides(r);
    for (int i = 0; i < r; ++i) perm_strides[i] = in_strides[axes[i]];

    int64_t total = x.numel();
    std::vector<double> out(total);
    const auto& xd = x.data();
    std::vector<int> idx(r, 0);
    for (int64_t o = 0; o < total; ++o) {
        int64_t src = 0;
        for (int i = 0; i < r; ++i) src += static_cast<int64_t>(idx[i]) * perm_strides[i];
        out[o] = xd[src];
        for (int i = r - 1; i >= 0; --i) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    auto xn = x.node();
    return make_op(out_shape, std::move(out), {x},
                   [xn, out_shape, perm_strides, r](TensorNode& n) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       std::vector<int> idx(r, 0);
                       for (size_t o = 0; o < n.grad.size(); ++o) {
                           int64_t src = 0;
                           for (int i = 0; i < r; ++i)
                               src += static_cast<int64_t>(idx[i]) * perm_strides[i];
                           xn->grad[src] += n.grad[o];
                           for (int i = r - 1; i >= 0; --i) {
                               if (++idx[i] < out_shape[i]) break;
                               idx[i] = 0;
                           }
                       }
                   });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: empty input list");
    int r = xs[0].rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
    Shape out_shape = xs[0].shape();
    int axis_total = 0;
    for (const auto& x : xs) {
        if (x.rank() != r) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < r; ++i)
            if (i != axis && x.shape()[i] != out_shape[i])
                throw ShapeError("concat: shape mismatch " + shape_str(x.shape()) + " vs " +
                                 shape_str(out_shape));
        axis_total += x.shape()[axis];
    }
    out_shape[axis] = axis_total;

    // outer = product of dims before axis, inner = product after.
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[i];
    for (int i = axis + 1; i < r; ++i) inner *= out_shape[i];

    std::vector<double> out(shape_numel(out_shape));
    int64_t out_row = static_cast<int64_t>(axis_total) * inner;
    int64_t col_off = 0;
    for (const auto& x : xs) {
        int64_t x_row = static_cast<int64_t>(x.shape()[axis]) * inner;
        const auto& xd = x.data();
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + o * out_row + col_off, xd.data() + o * x_row,
                        x_row * sizeof(double));
        col_off += x_row;
    }

    std::vector<NodePtr> nodes;
    for (const auto& x : xs) nodes.push_back(x.node());
    return make_op(out_shape, std::move(out), xs, [nodes, outer, inner, out_row](TensorNode& n) {
        int64_t col_off = 0;
        for (const auto& xn : nodes) {
            int64_t x_row = static_cast<int64_t>(xn->data.size()) / outer;
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (int64_t o = 0; o < outer; ++o) {
                    const double* g = n.grad.data() + o * out_row + col_off;
                    double* xg = xn->grad.data() + o * x_row;
                    for (int64_t i = 0; i < x_row; ++i) xg[i] += g[i];
                }
            }
            col_off += x_row;
            (void)inner;
        }
    });
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
    int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("slice: axis out of range");
    if (start < 0 || len <= 0 || start + len > x.shape()[axis])
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for " +
                         shape_str(x.shape()));
    Shape out_shape = x.shape();
    out_shape[axis] = len;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.shape()[i];
    for (int i = axis + 1; i < r; ++i) inner *= x.shape()[i];
    int64_t x_row = static_cast<int64_t>(x.shape()[axis]) * inner;
    int64_t o_row = static_cast<int64_t>(len) * inner;
    int64_t off = static_cast<int64_t>(start) * inner;

    std::vector<double> out(shape_numel(out_shape));
    const auto& xd = x.data();
    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * o_row, xd.data() + o * x_row + off, o_row * sizeof(double));
    auto xn = x.node();
    return make_op(out_shape, std::move(out), {x}, [xn, outer, x_row, o_row, off](TensorNode& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
            const double* g = n.grad.data() + o * o_row;
            double* xg = xn->grad.data() + o * x_row + off;
            for (int64_t i = 0; i < o_row; ++i) xg[i] += g[i];
        }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    int M = a.dim(-2), K = a.dim(-1);
    int Kb = b.dim(-2), N = b.dim(-1);
    if (K != Kb)
        throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));

    // Broadcast leading dims, aligned from the right.
    int ra = a.rank() - 2, rb = b.rank() - 2;
    int rbatch = std::max(ra, rb);
    Shape batch(rbatch, 1);
    for (int i = 0; i < rbatch; ++i) {
        int da = (i >= rbatch - ra) ? a.shape()[i - (rbatch - ra)] : 1;
        int db = (i >= rbatch - rb) ? b.shape()[i - (rbatch - rb)] : 1;
        if (da != db && da != 1 && db != 1)
            throw ShapeError("matmul: batch dimensions do not broadcast for " +
                             shape_str(a.shape()) + " x " + shape_str(b.shape()));
        batch[i] = std::max(da, db);
    }
    int64_t nbatch = shape_numel(batch);

    // Per-output-batch offsets into a and b (0 stride on broadcast dims).
    std::vector<int64_t> a_off(nbatch, 0), b_off(nbatch, 0);
    {
        std::vector<int> idx(rbatch, 0);
        int64_t a_mat = static_cast<int64_t>(M) * K, b_mat = static_cast<int64_t>(K) * N;
        std::vector<int64_t> a_strides(rbatch, 0), b_strides(rbatch, 0);
        int64_t sa = a_mat, sb = b_mat;
        for (int i = rbatch - 1; i >= 0; --i) {
            int da = (i >= rbatch - ra) ? a.shape()[i - (rbatch - ra)] : 1;
            int db = (i >= rbatch - rb) ? b.shape()[i - (rbatch - rb)] : 1;
            a_strides[i] = (da == 1) ? 0 : sa;
            b_strides[i] = (db == 1) ? 0 : sb;
            if (da != 1) sa *= da;
            if (db != 1) sb *= db;
        }
        for (int64_t n = 0; n < nbatch; ++n) {
            int64_t ao = 0, bo = 0;
            for (int i = 0; i < rbatch; ++i) {
                ao += static_cast<int64_t>(idx[i]) * a_strides[i];
                bo += static_cast<int64_t>(idx[i]) * b_strides[i];
            }
            a_off[n] = ao;
            b_off[n] = bo;
            for (int i = rbatch - 1; i >= 0; --i) {
                if (++idx[i] < batch[i]) break;
                idx[i] = 0;
            }
        }
    }

    Shape out_shape = batch;
    out_shape.push_back(M);
    out_shape.push_back(N);
    std::vector<double> out(nbatch * M * N, 0.0);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (int64_t nb = 0; nb < nbatch; ++nb) {
        const double* A = ad + a_off[nb];
        const double* B = bd + b_off[nb];
        double* C = out.data() + nb * M * N;
        for (int m = 0; m < M; ++m) {
            const double* Arow = A + static_cast<int64_t>(m) * K;
            double* Crow = C + static_cast<int64_t>(m) * N;
            for (int k = 0; k < K; ++k) {
                double av = Arow[k];
                const double* Brow = B + static_cast<int64_t>(k) * N;
                for (int n = 0; n < N; ++n) Crow[n] += av * Brow[n];
            }
        }
    }

    auto an = a.node(), bn = b.node();
    return make_op(out_shape, std::move(out), {a, b},
                   [an, bn, a_off, b_off, nbatch, M, N, K](TensorNode& nd) {
                       const double* g = nd.grad.data();
                       if (an->requires_grad) {
                           an->ensure_grad();
                           for (int64_t nb = 0; nb < nbatch; ++nb) {
                               const double* G = g + nb * M * N;
                               const double* B = bn->data.data() + b_off[nb];
                               double* dA = an->grad.data() + a_off[nb];
                               for (int m = 0; m < M; ++m) {
                                   const double* Grow = G + static_cast<int64_t>(m) * N;
                                   double* dArow = dA + static_cast<int64_t>(m) * K;
                                   for (int k = 0; k < K; ++k) {
                                       const double* Brow = B + static_cast<int64_t>(k) * N;
                                       double acc = 0.0;
                                       for (int n = 0; n < N; ++n) acc += Grow[n] * Brow[n];
                                       dArow[k] += acc;
                                   }
                               }
                           }
                       }
                       if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (int64_t nb = 0; nb < nbatch; ++nb) {
                               const double* G = g + nb * M * N;
                               const double* A = an->data.data() + a_off[nb];
                               double* dB = bn->grad.data() + b_off[nb];
                               for (int m = 0; m < M; ++m) {
                                   const double* Grow = G + static_cast<int64_t>(m) * N;
                                   const double* Arow = A + static_cast<int64_t>(m) * K;
                                   for (int k = 0; k < K; ++k) {
                                       double av = Arow[k];
                                       double* dBrow = dB + static_cast<int64_t>(k) * N;
                                       for (int n = 0; n < N; ++n) dBrow[n] += av * Grow[n];
                                   }
                               }
                           }
                       }
                   });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() < 1 || w.rank() != 2)
        throw ShapeError("linear: expected x[...,Cin], w[Cout,Cin], got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    int cin = x.dim(-1);
    int cout = w.shape()[0];
    if (w.shape()[1] != cin)
        throw ShapeError("linear: input dim " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(w.shape()));
    if (b.defined() && (b.rank() != 1 || b.shape()[0] != cout))
        throw ShapeError("linear: bias shape " + shape_str(b.shape()) + " does not match Cout");

    int64_t rows = x.numel() / cin;
    Shape out_shape = x.shape();
    out_shape.back() = cout;
    std::vector<double> out(rows * cout);
    const double* xd = x.data().data();
    const double* wd = w.data().data();
    const double* bd = b.defined() ? b.data().data() : nullptr;
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = xd + r * cin;
        double* orow = out.data() + r * cout;
        for (int o = 0; o < cout; ++o) {
            const double* wrow = wd + static_cast<int64_t>(o) * cin;
            double acc = bd ? bd[o] : 0.0;
            for (int c = 0; c < cin; ++c) acc += xr[c] * wrow[c];
            orow[o] = acc;
        }
    }

    auto xn = x.node(), wn = w.node();
    auto bnode = b.defined() ? b.node() : nullptr;
    return make_op(out_shape, std::move(out), {x, w, b},
                   [xn, wn, bnode, rows, cin, cout](TensorNode& n) {
                       const double* g = n.grad.data();
                       if (xn->requires_grad) {
                           xn->ensure_grad();
                           for (int64_t r = 0; r < rows; ++r) {
                               const double* grow = g + r * cout;
                               double* xg = xn->grad.data() + r * cin;
                               for (int o = 0; o < cout; ++o) {
                                   double gv = grow[o];
                                   const double* wrow = wn->data.data() + static_cast<int64_t>(o) * cin;
                                   for (int c = 0; c < cin; ++c) xg[c] += gv * wrow[c];
                               }
                           }
                       }
                       if (wn->requires_grad) {
                           wn->ensure_grad();
                           for (int64_t r = 0; r < rows; ++r) {
                               const double* grow = g + r * cout;
                               const double* xr = xn->data.data() + r * cin;
                               for (int o = 0; o < cout; ++o) {
                                   double gv = grow[o];
                                   double* wg = wn->grad.data() + static_cast<int64_t>(o) * cin;
                                   for (int c = 0; c < cin; ++c) wg[c] += gv * xr[c];
                               }
                           }
                       }
                       if (bnode && bnode->requires_grad) {
                           bnode->ensure_grad();
                           for (int64_t r = 0; r < rows; ++r) {
                               const double* grow = g + r * cout;
                               for (int o = 0; o < cout; ++o) bnode->grad[o] += grow[o];
                           }
                       }
                   });
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw ShapeError("gather_rows: table must be [V,D]");
    int V = table.shape()[0], D = table.shape()[1];
    for (int id : ids)
        if (id < 0 || id >= V)
            throw ValueError("gather_rows: id " + std::to_string(id) + " outside table of " +
                             std::to_string(V) + " rows");
    std::vector<double> out(ids.size() * static_cast<size_t>(D));
    const double* td = table.data().data();
    for (size_t i = 0; i < ids.size(); ++i)
        std::memcpy(out.data() + i * D, td + static_cast<int64_t>(ids[i]) * D, D * sizeof(double));
    auto tn = table.node();
    return make_op({static_cast<int>(ids.size()), D}, std::move(out), {table},
                   [tn, ids, D](TensorNode& n) {
                       if (!tn->requires_grad) return;
                       tn->ensure_grad();
                       for (size_t i = 0; i < ids.size(); ++i) {
                           const double* g = n.grad.data() + i * D;
                           double* tg = tn->grad.data() + static_cast<int64_t>(ids[i]) * D;
                           for (int d = 0; d < D; ++d) tg[d] += g[d];
                       }
                   });
}

Tensor sum_all(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    auto xn = x.node();
    return make_op({1}, {acc}, {x}, [xn](TensorNode& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        double g = n.grad[0];
        for (auto& v : xn->grad) v += g;
    });
}

Tensor mean_all(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    double inv = 1.0 / static_cast<double>(x.numel());
    auto xn = x.node();
    return make_op({1}, {acc * inv}, {x}, [xn, inv](TensorNode& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        double g = n.grad[0] * inv;
        for (auto& v : xn->grad) v += g;
    });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    check_same_shape(pred, target, "mse_loss");
    const auto& pd = pred.data();
    const auto& td = target.data();
    double acc = 0.0;
    for (size_t i = 0; i < pd.size(); ++i) {
        double d = pd[i] - td[i];
        acc += d * d;
    }
    double inv = 1.0 / static_cast<double>(pred.numel());
    auto pn = pred.node(), tn = target.node();
    return make_op({1}, {acc * inv}, {pred, target}, [pn, tn, inv](TensorNode& n) {
        double g = n.grad[0] * inv * 2.0;
        if (pn->requires_grad) {
            pn->ensure_grad();
            for (size_t i = 0; i < pn->data.size(); ++i)
                pn->grad[i] += g * (pn->data[i] - tn->data[i]);
        }
        if (tn->requires_grad) {
            tn->ensure_grad();
            for (size_t i = 0; i < tn->data.size(); ++i)
                tn->grad[i] -= g * (pn->data[i] - tn->data[i]);
        }
    });
}

Tensor softmax_last_dim(const Tensor& x) {
    if (x.rank() < 1) throw ShapeError("softmax_last_dim: rank must be >= 1");
    if (!x.all_finite()) throw ValueError("softmax_last_dim: non-finite input");
    int C = x.dim(-1);
    int64_t rows = x.numel() / C;
    std::vector<double> out(x.numel());
    const double* xd = x.data().data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = xd + r * C;
        double* orow = out.data() + r * C;
        double mx = xr[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, xr[c]);
        double denom = 0.0;
        for (int c = 0; c < C; ++c) {
            double e = std::exp(xr[c] - mx);
            orow[c] = e;
            denom += e;
        }
        double inv = 1.0 / denom;
        for (int c = 0; c < C; ++c) orow[c] *= inv;
    }
    auto xn = x.node();
    return make_op(x.shape(), std::move(out), {x}, [xn, rows, C](TensorNode& n) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = n.data.data() + r * C;
            const double* gy = n.grad.data() + r * C;
            double dot = 0.0;
            for (int c = 0; c < C; ++c) dot += gy[c] * y[c];
            double* gx = xn->grad.data() + r * C;
            for (int c = 0; c < C; ++c) gx[c] += y[c] * (gy[c] - dot);
        }
    });
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() != 4) throw ShapeError("group_norm: expected [B,C,H,W], got " + shape_str(x.shape()));
    int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (groups <= 0 || C % groups != 0)
        throw ConfigError("group_norm: channels " + std::to_string(C) + " not divisible by groups " +
                          std::to_string(groups));
    if (gamma.numel() != C || beta.numel() != C)
        throw ShapeError("group_norm: gamma/beta must have C entries");

    int cpg = C / groups;
    int64_t plane = static_cast<int64_t>(H) * W;
    int64_t gsize = cpg * plane;
    std::vector<double> out(x.numel());
    std::vector<double> mean(B * groups), rstd(B * groups);
    const double* xd = x.data().data();
    const double* gm = gamma.data().data();
    const double* bt = beta.data().data();
    for (int b = 0; b < B; ++b) {
        for (int g = 0; g < groups; ++g) {
            const double* xp = xd + (static_cast<int64_t>(b) * C + g * cpg) * plane;
            double m = 0.0;
            for (int64_t i = 0; i < gsize; ++i) m += xp[i];
            m /= static_cast<double>(gsize);
            double var = 0.0;
            for (int64_t i = 0; i < gsize; ++i) {
                double d = xp[i] - m;
                var += d * d;
            }
            var /= static_cast<double>(gsize);
            double rs = 1.0 / std::sqrt(var + eps);
            mean[b * groups + g] = m;
            rstd[b * groups + g] = rs;
            double* op = out.data() + (static_cast<int64_t>(b) * C + g * cpg) * plane;
            for (int cc = 0; cc < cpg; ++cc) {
                int c = g * cpg + cc;
                double ga = gm[c], be = bt[c];
                const double* xc = xp + cc * plane;
                double* oc = op + cc * plane;
                for (int64_t i = 0; i < plane; ++i) oc[i] = (xc[i] - m) * rs * ga + be;
            }
        }
    }

    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    return make_op(x.shape(), std::move(out), {x, gamma, beta},
                   [xn, gn, bn, B, C, groups, cpg, plane, gsize, mean, rstd](TensorNode& n) {
                       const double* g = n.grad.data();
                       const double* xd = xn->data.data();
                       const double* gm = gn->data.data();
                       if (gn->requires_grad) gn->ensure_grad();
                       if (bn->requires_grad) bn->ensure_grad();
                       if (xn->requires_grad) xn->ensure_grad();
                       for (int b = 0; b < B; ++b) {
                           for (int gi = 0; gi < groups; ++gi) {
                               int64_t base = (static_cast<int64_t>(b) * C + gi * cpg) * plane;
                               double m = mean[b * groups + gi];
                               double rs = rstd[b * groups + gi];
                               // dgamma/dbeta per channel.
                               if (gn->requires_grad || bn->requires_grad) {
                                   for (int cc = 0; cc < cpg; ++cc) {
                                       int c = gi * cpg + cc;
                                       const double* gp = g + base + cc * plane;
                                       const double* xp = xd + base + cc * plane;
                                       double dg = 0.0, db = 0.0;
                                       for (int64_t i = 0; i < plane; ++i) {
                                           dg += gp[i] * (xp[i] - m) * rs;
                                           db += gp[i];
                                       }
                                       if (gn->requires_grad) gn->grad[c] += dg;
                                       if (bn->requires_grad) bn->grad[c] += db;
                                   }
                               }
                               if (!xn->requires_grad) continue;
                               // dx = rs * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                               double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                               for (int cc = 0; cc < cpg; ++cc) {
                                   int c = gi * cpg + cc;
                                   const double* gp = g + base + cc * plane;
                                   const double* xp = xd + base + cc * plane;
                                   double ga = gm[c];
                                   for (int64_t i = 0; i < plane; ++i) {
                                       double dxh = gp[i] * ga;
                                       double xh = (xp[i] - m) * rs;
                                       sum_dxh += dxh;
                                       sum_dxh_xh += dxh * xh;
                                   }
                               }
                               double inv = 1.0 / static_cast<double>(gsize);
                               double mean_dxh = sum_dxh * inv;
                               double mean_dxh_xh = sum_dxh_xh * inv;
                               for (int cc = 0; cc < cpg; ++cc) {
                                   int c = gi * cpg + cc;
                                   const double* gp = g + base + cc * plane;
                                   const double* xp = xd + base + cc * plane;
                                   double* xg = xn->grad.data() + base + cc * plane;
                                   double ga = gm[c];
                                   for (int64_t i = 0; i < plane; ++i) {
                                       double dxh = gp[i] * ga;
                                       double xh = (xp[i] - m) * rs;
                                       xg[i] += rs * (dxh - mean_dxh - xh * mean_dxh_xh);
                                   }
                               }
                           }
                       }
                   });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() < 1) throw ShapeError("layer_norm: rank must be >= 1");
    int C = x.dim(-1);
    if (gamma.numel() != C || beta.numel() != C)
        throw ShapeError("layer_norm: gamma/beta must have C entries");
    int64_t rows = x.numel() / C;
    std::vector<double> out(x.numel());
    std::vector<double> mean(rows), rstd(rows);
    const double* xd = x.data().data();
    const double* gm = gamma.data().data();
    const double* bt = beta.data().data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = xd + r * C;
        double m = 0.0;
        for (int c = 0; c < C; ++c) m += xr[c];
        m /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) {
            double d = xr[c] - m;
            var += d * d;
        }
        var /= C;
        double rs = 1.0 / std::sqrt(var + eps);
        mean[r] = m;
        rstd[r] = rs;
        double* orow = out.data() + r * C;
        for (int c = 0; c < C; ++c) orow[c] = (xr[c] - m) * rs * gm[c] + bt[c];
    }
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    return make_op(x.shape(), std::move(out), {x, gamma, beta},
                   [xn, gn, bn, rows, C, mean, rstd](TensorNode& n) {
                       const double* g = n.grad.data();
                       const double* xd = xn->data.data();
                       const double* gm = gn->data.data();
                       if (gn->requires_grad) gn->ensure_grad();
                       if (bn->requires_grad) bn->ensure_grad();
                       if (xn->requires_grad) xn->ensure_grad();
                       for (int64_t r = 0; r < rows; ++r) {
                           const double* gr = g + r * C;
                           const double* xr = xd + r * C;
                           double m = mean[r], rs = rstd[r];
                           if (gn->requires_grad || bn->requires_grad) {
                               for (int c = 0; c < C; ++c) {
                                   if (gn->requires_grad) gn->grad[c] += gr[c] * (xr[c] - m) * rs;
                                   if (bn->requires_grad) bn->grad[c] += gr[c];
                               }
                           }
                           if (!xn->requires_grad) continue;
                           double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                           for (int c = 0; c < C; ++c) {
                               double dxh = gr[c] * gm[c];
                               double xh = (xr[c] - m) * rs;
                               sum_dxh += dxh;
                               sum_dxh_xh += dxh * xh;
                           }
                           double mean_dxh = sum_dxh / C;
                           double mean_dxh_xh = sum_dxh_xh / C;
                           double* xg = xn->grad.data() + r * C;
                           for (int c = 0; c < C; ++c) {
                               double dxh = gr[c] * gm[c];
                               double xh = (xr[c] - m) * rs;
                               xg[c] += rs * (dxh - mean_dxh - xh * mean_dxh_xh);
                           }
                       }
                   });
}

}  // namespace spritediff
