#pragma once

#include <cstdint>
#include <vector>

#include "hyperace/tensor.hpp"

// Differentiable operators over NCHW feature maps and 2-D matrices.
//
// Each op adds its cost to the active FlopCounter using one convention:
//   conv2d    2 * N * Cout * (Cin / groups) * kh * kw * OH * OW  (+ N*Cout*OH*OW with bias)
//   matmul    2 * P * Q * R
//   pooling, activation, batch norm, softmax, resize, elementwise arithmetic:
//             1 per output element
//   concat, split, reshape, transpose: free
namespace hyperace {

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

/// Cross-correlation of x [N,C,H,W] with w [Cout, C/groups, kh, kw].
/// groups == C with Cout == C is a depthwise convolution.
Tensor conv2d(const Tensor& x, const Tensor& w, Conv2dOptions opt = {}, const Tensor& bias = {});

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);

Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Inference-form batch norm over channel axis 1 using stored statistics.
Tensor batchnorm(const Tensor& x, const Tensor& scale, const Tensor& shift, const Tensor& running_mean,
                 const Tensor& running_var, double eps);

/// Training-form batch norm: normalizes with the batch statistics and writes
/// the per-channel batch mean and (unbiased) variance to the out parameters.
Tensor batchnorm_train(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps,
                       std::vector<double>& batch_mean, std::vector<double>& batch_var);

Tensor global_avg_pool(const Tensor& x);  // [N,C,H,W] -> [N,C]
Tensor global_max_pool(const Tensor& x);  // [N,C,H,W] -> [N,C]
Tensor max_pool2d(const Tensor& x, int kernel, int stride, int padding);

enum class ResizeMode { Nearest, Area };

/// Integer-factor resampling. Nearest replicates pixels when enlarging; Area
/// averages non-overlapping blocks when shrinking. Same size returns x.
Tensor resize(const Tensor& x, std::int64_t height, std::int64_t width, ResizeMode mode);
/// Picks Nearest for upsampling and Area for downsampling.
Tensor resize(const Tensor& x, std::int64_t height, std::int64_t width);

Tensor concat(const std::vector<Tensor>& xs, int axis);
std::vector<Tensor> split(const Tensor& x, const std::vector<std::int64_t>& sizes, int axis);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// gamma [1] times x.
Tensor scale(const Tensor& x, const Tensor& gamma);
Tensor mul_const(const Tensor& x, double c);
/// Adds bias [Q] to every row of x [..., Q].
Tensor add_rowvec(const Tensor& x, const Tensor& bias);

Tensor reshape(const Tensor& x, Shape shape);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace hyperace
