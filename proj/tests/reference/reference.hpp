#pragma once

// Slow, loop-level implementations used to cross-check the optimized code.
// Nothing here shares code with the library beyond the Tensor container.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hyperace/detect.hpp"
#include "hyperace/nn.hpp"
#include "hyperace/tensor.hpp"

namespace hyperace::ref {

/// Six nested loops over (n, co, oy, ox, ci, ky, kx), zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding, int groups, const Tensor& bias = {});

/// Triple loop.
Tensor matmul(const Tensor& a, const Tensor& b);

struct AhcWeights {
  std::vector<double> prototypes;  // [M, C]
  std::vector<double> phi_w;       // [2C, M*C]
  std::vector<double> phi_b;       // [M*C]
  std::vector<double> w_pre, w_e, w_v;  // [C, C], input-major
};

/// Participation matrix [N, M] with explicit per-head dot products.
std::vector<double> ahc_participation(const std::vector<double>& x, std::int64_t n, std::int64_t c, int m, int heads,
                                      const AhcWeights& w);
/// Full AHC forward [N, C] with SiLU activations (or identity when silu is false).
std::vector<double> ahc_forward(const std::vector<double>& x, std::int64_t n, std::int64_t c, int m, int heads,
                                const AhcWeights& w, bool silu = true);

double iou(const Box& a, const Box& b);

/// Repeatedly takes the highest remaining score (lowest index on ties) and
/// drops every remaining same-class box overlapping it by more than thr.
std::vector<Detection> nms(std::vector<Detection> dets, double thr);

struct EncodedObject {
  Box box;
  int cls = 0;
  int level = 0;
};

/// Head maps that decode to exactly the given boxes. Each object is written
/// to the cell of its level containing the box center: the class logit is
/// +20, and every side distance t (in stride units, 0 <= t < bins-1) is split
/// over bins floor(t) and floor(t)+1 as log(1-f), log(f). All other logits
/// are -1e4.
std::vector<Tensor> encode(const std::vector<EncodedObject>& objects, const std::vector<std::int64_t>& grid_h,
                           const std::vector<std::int64_t>& grid_w, const std::vector<int>& strides, int reg_bins,
                           int num_classes);

struct GradcheckResult {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::string worst;  // "name[index]" of the worst coordinate
  double worst_analytic = 0, worst_numeric = 0;
};

/// Redraws parameters so activations keep their scale through deep stacks:
/// rank >= 2 weights He-uniform, norm scales in [0.5, 1.5], other vectors in
/// [-0.5, 0.5]. Tensors named gamma.* keep their values.
void gradcheck_init(const std::vector<NamedTensor>& params, std::uint64_t seed);

/// Central differences with step h against the tape gradient of `loss` for
/// every coordinate, or `per_tensor` random coordinates of each tensor when
/// positive. Relative error is |a - b| / max(|a|, |b|, 1e-8).
GradcheckResult gradcheck(const std::function<Tensor()>& loss, const std::vector<NamedTensor>& params,
                          int per_tensor = 0, std::uint64_t seed = 0, double h = 1e-5);

}  // namespace hyperace::ref
