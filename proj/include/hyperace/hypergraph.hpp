#pragma once

#include <cstdint>

#include "hyperace/nn.hpp"

namespace hyperace {

enum class Activation { SiLU, Identity };

Tensor activate(const Tensor& x, Activation a);

struct AhcConfig {
  std::int64_t channels = 0;  // C, vertex feature width
  int hyperedges = 4;         // M
  int heads = 4;              // h, must divide C
  Activation sigma = Activation::SiLU;
};

/// Adaptive hypergraph computation over a vertex matrix X [N, C].
///
/// Projection weights are stored input-major so that a projection is X * W:
///   w_pre, w_e, w_v  [C, C]
///   phi_w [2C, M*C], phi_b [M*C]   context mapping
///   prototypes       [M, C]        static hyperedge prototypes
class AdaptiveHypergraph : public Module {
 public:
  explicit AdaptiveHypergraph(const AhcConfig& cfg);

  /// Continuous participation matrix A [N, M]; each column sums to 1 over vertices.
  Tensor participation(const Tensor& x) const;
  /// Hyperedge aggregation then vertex update, X [N, C] with A [N, M] -> [N, C].
  Tensor convolve(const Tensor& x, const Tensor& a) const;
  Tensor forward(const Tensor& x) const { return convolve(x, participation(x)); }

  /// Cost for N vertices.
  Budget budget(std::int64_t n) const;

  AhcConfig cfg;
  Tensor prototypes, phi_w, phi_b, w_pre, w_e, w_v;

 private:
  void check_vertices(const Tensor& x) const;
  // used when no tape is recording
  Tensor participation_blocked(const Tensor& x) const;
  Tensor convolve_blocked(const Tensor& x, const Tensor& a) const;
};

/// CSP block whose processed path is an adaptive hypergraph computation:
/// two 1 x 1 projections, AHC on one, concat with the other, 1 x 1 fuse.
class C3AH : public Layer {
 public:
  C3AH(std::int64_t c1, std::int64_t c2, int hyperedges, int heads, double e = 0.5);
  Tensor forward(const Tensor& x) override;
  FeatureShape output_shape(const FeatureShape& in) const override { return {c2, in.h, in.w}; }
  Budget budget(const FeatureShape& in) const override;

  /// Participation matrix of image `index` in x, computed on the projected features.
  Tensor participation(const Tensor& x, std::int64_t index = 0);

  std::int64_t c1, c2, hidden;
  ConvBnAct cv1, cv2, cv3;
  AdaptiveHypergraph ahc;
};

/// [1, C, H, W] -> [H*W, C] and back.
Tensor map_to_vertices(const Tensor& x);
Tensor vertices_to_map(const Tensor& v, std::int64_t h, std::int64_t w);

}  // namespace hyperace
