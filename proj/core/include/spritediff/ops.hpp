#pragma once

#include <vector>

#include "spritediff/tensor.hpp"

namespace spritediff {

// Elementwise (shapes must match exactly; no implicit broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, double s);
Tensor mul_scalar(const Tensor& x, double s);
Tensor silu(const Tensor& x);

// Shape manipulation. All of these copy; there are no aliased views.
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<int>& axes);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);

// Contractions.
// matmul: [...,M,K] x [...,K,N] -> [...,M,N]; leading dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
// linear: x[...,Cin] * w[Cout,Cin]^T + b[Cout]; pass undefined b for no bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// Embedding lookup: rows of table[V,D] by id -> [ids.size(), D].
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);

// Reductions and losses.
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor mse_loss(const Tensor& pred, const Tensor& target);

// Softmax over the trailing dimension, computed with max-subtraction.
// Rejects non-finite input.
Tensor softmax_last_dim(const Tensor& x);

// Normalization layers.
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Spatial ops on [B,C,H,W].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor upsample_nearest2x(const Tensor& x);
Tensor avg_pool2d(const Tensor& x, int factor);
// x[B,C,H,W] + t[B,C] broadcast over the spatial plane.
Tensor add_channel_map(const Tensor& x, const Tensor& t);
// x[B,...] + p[...] broadcast over the leading batch axis.
Tensor add_batch_bias(const Tensor& x, const Tensor& p);

}  // namespace spritediff
