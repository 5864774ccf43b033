#include "hyperace/hypergraph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace hyperace {

namespace {
std::uint64_t u(std::int64_t v) { return static_cast<std::uint64_t>(v); }

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// rows per block on the tape-free path; keeps the live set in cache
constexpr std::int64_t kRows = 256;

void activate_inplace(double* v, std::int64_t n, Activation a) {
  if (a != Activation::SiLU) return;
  // exp(-v) overflowing to inf still yields the right limit for finite v
  for (std::int64_t i = 0; i < n; ++i) v[i] /= 1.0 + std::exp(-v[i]);
}

ConstMap cmap(const Tensor& t, std::int64_t r, std::int64_t c) { return ConstMap(t.data().data(), r, c); }
}  // namespace

Tensor activate(const Tensor& x, Activation a) { return a == Activation::SiLU ? silu(x) : x; }

Tensor map_to_vertices(const Tensor& x) {
  if (x.rank() != 4 || x.dim(0) != 1) throw ShapeError("map_to_vertices", "expected [1,C,H,W], got " + to_string(x.shape()));
  return transpose(reshape(x, {x.dim(1), x.dim(2) * x.dim(3)}));
}

Tensor vertices_to_map(const Tensor& v, std::int64_t h, std::int64_t w) {
  if (v.rank() != 2 || v.dim(0) != h * w) {
    throw ShapeError("vertices_to_map", "expected [" + std::to_string(h * w) + ",C], got " + to_string(v.shape()));
  }
  return reshape(transpose(v), {1, v.dim(1), h, w});
}

AdaptiveHypergraph::AdaptiveHypergraph(const AhcConfig& c) : cfg(c) {
  const std::int64_t C = cfg.channels, M = cfg.hyperedges;
  if (C < 1) throw ShapeError("AdaptiveHypergraph", "channels must be >= 1");
  if (M < 1) throw std::invalid_argument("AdaptiveHypergraph: hyperedge count must be >= 1");
  if (cfg.heads < 1 || C % cfg.heads != 0) {
    throw ShapeError("AdaptiveHypergraph", "channels " + std::to_string(C) + " not divisible by heads " +
                                               std::to_string(cfg.heads));
  }
  prototypes = add_param("prototypes", {M, C}, {InitKind::Normal, 0.02});
  phi_w = add_param("phi.weight", {2 * C, M * C}, {InitKind::FanInUniform, 0.0, 2 * C});
  phi_b = add_param("phi.bias", {M * C}, {InitKind::Zero});
  w_pre = add_param("w_pre", {C, C}, {InitKind::FanInUniform, 0.0, C});
  w_e = add_param("w_e", {C, C}, {InitKind::FanInUniform, 0.0, C});
  w_v = add_param("w_v", {C, C}, {InitKind::FanInUniform, 0.0, C});
}

void AdaptiveHypergraph::check_vertices(const Tensor& x) const {
  if (!x.defined() || x.rank() != 2) throw ShapeError("AdaptiveHypergraph", "vertices must be a [N,C] matrix");
  if (x.dim(1) != cfg.channels) {
    throw ShapeError("AdaptiveHypergraph", "vertex width (axis 1) is " + std::to_string(x.dim(1)) + ", expected " +
                                               std::to_string(cfg.channels));
  }
  if (x.dim(0) < 1) throw ShapeError("AdaptiveHypergraph", "no vertices");
}

Tensor AdaptiveHypergraph::participation(const Tensor& x) const {
  check_vertices(x);
  const std::int64_t n = x.dim(0), C = cfg.channels, M = cfg.hyperedges;
  if (!active_tape()) return participation_blocked(x);
  // context from average and max pooling over vertices
  Tensor as_map = reshape(transpose(x), {1, C, n, 1});
  Tensor ctx = concat({global_avg_pool(as_map), global_max_pool(as_map)}, 1);
  Tensor delta = reshape(add_rowvec(matmul(ctx, phi_w), phi_b), {M, C});
  Tensor protos = add(prototypes, delta);
  Tensor z = matmul(x, w_pre);
  // mean over heads of per-head scaled dot products collapses to one product
  const double d_h = static_cast<double>(C / cfg.heads);
  Tensor s = mul_const(matmul(z, transpose(protos)), 1.0 / (cfg.heads * std::sqrt(d_h)));
  return softmax(s, 0);
}

Tensor AdaptiveHypergraph::convolve(const Tensor& x, const Tensor& a) const {
  check_vertices(x);
  if (a.rank() != 2 || a.dim(0) != x.dim(0) || a.dim(1) != cfg.hyperedges) {
    throw ShapeError("AdaptiveHypergraph", "participation must be [" + std::to_string(x.dim(0)) + "," +
                                               std::to_string(cfg.hyperedges) + "], got " + to_string(a.shape()));
  }
  if (!active_tape()) return convolve_blocked(x, a);
  Tensor edges = activate(matmul(matmul(transpose(a), x), w_e), cfg.sigma);
  return activate(matmul(matmul(a, edges), w_v), cfg.sigma);
}

// Same arithmetic as the taped path, streamed over row blocks; only the
// [N, M] logits and the outputs are ever whole.
Tensor AdaptiveHypergraph::participation_blocked(const Tensor& x) const {
  const std::int64_t n = x.dim(0), C = cfg.channels, M = cfg.hyperedges;
  const double* xd = x.data().data();
  Eigen::RowVectorXd ctx(2 * C);
  double* total = ctx.data();
  double* mx = total + C;
  std::fill(total, total + C, 0.0);
  std::fill(mx, mx + C, -std::numeric_limits<double>::infinity());
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = xd + i * C;
    for (std::int64_t k = 0; k < C; ++k) {
      total[k] += row[k];
      mx[k] = std::max(mx[k], row[k]);
    }
  }
  for (std::int64_t k = 0; k < C; ++k) total[k] /= static_cast<double>(n);
  Eigen::RowVectorXd delta = ctx * cmap(phi_w, 2 * C, M * C);
  delta += cmap(phi_b, 1, M * C);
  const RowMat protos = cmap(prototypes, M, C) + Eigen::Map<const RowMat>(delta.data(), M, C);
  const RowMat protos_t = protos.transpose();
  const double d_h = static_cast<double>(C / cfg.heads);
  const double scale = 1.0 / (cfg.heads * std::sqrt(d_h));
  const auto wp = cmap(w_pre, C, C);

  // output is appended from cache-hot blocks instead of zero-filled first
  std::vector<double> sv;
  sv.reserve(static_cast<std::size_t>(n * M));
  std::vector<double> col_max(M, -std::numeric_limits<double>::infinity()), col_sum(M, 0.0);
  RowMat z, blk;
  for (std::int64_t r0 = 0; r0 < n; r0 += kRows) {
    const std::int64_t rows = std::min(kRows, n - r0);
    z.noalias() = ConstMap(xd + r0 * C, rows, C) * wp;
    blk.noalias() = z * protos_t;
    blk *= scale;
    for (std::int64_t i = 0; i < rows; ++i)
      for (std::int64_t m = 0; m < M; ++m) col_max[m] = std::max(col_max[m], blk(i, m));
    sv.insert(sv.end(), blk.data(), blk.data() + rows * M);
  }
  // column softmax, walked row by row
  double* sd = sv.data();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t m = 0; m < M; ++m) {
      const double e = std::exp(sd[i * M + m] - col_max[m]);
      sd[i * M + m] = e;
      col_sum[m] += e;
    }
  }
  for (std::int64_t m = 0; m < M; ++m) col_sum[m] = 1.0 / col_sum[m];
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t m = 0; m < M; ++m) sd[i * M + m] *= col_sum[m];
  Tensor out({n, M}, std::move(sv));
  const std::uint64_t N = u(n), uc = u(C), um = u(M);
  add_flops(2 * uc + 2 * 2 * uc * um * uc + um * uc + um * uc + 2 * N * uc * uc + 2 * N * uc * um + 2 * N * um);
  return out;
}

Tensor AdaptiveHypergraph::convolve_blocked(const Tensor& x, const Tensor& a) const {
  const std::int64_t n = x.dim(0), C = cfg.channels, M = cfg.hyperedges;
  const double* xd = x.data().data();
  const double* ad = a.data().data();
  RowMat agg = RowMat::Zero(M, C);
  for (std::int64_t r0 = 0; r0 < n; r0 += kRows) {
    const std::int64_t rows = std::min(kRows, n - r0);
    agg.noalias() += ConstMap(ad + r0 * M, rows, M).transpose() * ConstMap(xd + r0 * C, rows, C);
  }
  RowMat edges = agg * cmap(w_e, C, C);
  activate_inplace(edges.data(), M * C, cfg.sigma);
  const auto wv = cmap(w_v, C, C);

  std::vector<double> ov;
  ov.reserve(static_cast<std::size_t>(n * C));
  RowMat gathered, blk;
  for (std::int64_t r0 = 0; r0 < n; r0 += kRows) {
    const std::int64_t rows = std::min(kRows, n - r0);
    gathered.noalias() = ConstMap(ad + r0 * M, rows, M) * edges;
    blk.noalias() = gathered * wv;
    activate_inplace(blk.data(), rows * C, cfg.sigma);
    ov.insert(ov.end(), blk.data(), blk.data() + rows * C);
  }
  Tensor out({n, C}, std::move(ov));
  const std::uint64_t N = u(n), uc = u(C), um = u(M);
  const std::uint64_t act = cfg.sigma == Activation::SiLU ? 1 : 0;
  add_flops(2 * um * N * uc + 2 * um * uc * uc + act * um * uc + 2 * N * um * uc + 2 * N * uc * uc + act * N * uc);
  return out;
}

Budget AdaptiveHypergraph::budget(std::int64_t n) const {
  const std::uint64_t C = u(cfg.channels), M = u(cfg.hyperedges), N = u(n);
  const std::uint64_t act = cfg.sigma == Activation::SiLU ? 1 : 0;
  Budget b;
  b.params = M * C + 2 * C * M * C + M * C + 3 * C * C;
  b.flops = 2 * C                      // context pooling
            + 2 * 2 * C * M * C + M * C  // mapping layer
            + M * C                      // prototype offset
            + 2 * N * C * C              // query projection
            + 2 * N * C * M + 2 * N * M  // similarity, scaling, softmax
            + 2 * M * N * C              // hyperedge aggregation
            + 2 * M * C * C + act * M * C  // edge projection
            + 2 * N * M * C              // vertex gathering
            + 2 * N * C * C + act * N * C;  // vertex projection
  return b;
}

C3AH::C3AH(std::int64_t c1_, std::int64_t c2_, int hyperedges, int heads, double e)
    : c1(c1_),
      c2(c2_),
      hidden(static_cast<std::int64_t>(std::floor(static_cast<double>(c1_) * e))),
      cv1(c1_, std::max<std::int64_t>(hidden, 1), 1),
      cv2(c1_, std::max<std::int64_t>(hidden, 1), 1),
      cv3(2 * std::max<std::int64_t>(hidden, 1), c2_, 1),
      ahc({std::max<std::int64_t>(hidden, 1), hyperedges, heads, Activation::SiLU}) {
  if (hidden < 1) throw ShapeError("C3AH", "hidden width floor(e * c1) is zero");
  add_child("cv1", cv1);
  add_child("cv2", cv2);
  add_child("cv3", cv3);
  add_child("ahc", ahc);
}

Tensor C3AH::forward(const Tensor& x) {
  Tensor proj = cv1.forward(x);
  const std::int64_t b = proj.dim(0), h = proj.dim(2), w = proj.dim(3);
  std::vector<Tensor> outs;
  auto images = b == 1 ? std::vector<Tensor>{proj} : split(proj, std::vector<std::int64_t>(b, 1), 0);
  for (auto& img : images) outs.push_back(vertices_to_map(ahc.forward(map_to_vertices(img)), h, w));
  Tensor enhanced = b == 1 ? outs[0] : concat(outs, 0);
  return cv3.forward(concat({enhanced, cv2.forward(x)}, 1));
}

Tensor C3AH::participation(const Tensor& x, std::int64_t index) {
  if (x.rank() != 4 || index < 0 || index >= x.dim(0)) throw ShapeError("C3AH", "image index out of range");
  Tensor proj = cv1.forward(x);
  auto images = split(proj, std::vector<std::int64_t>(proj.dim(0), 1), 0);
  return ahc.participation(map_to_vertices(images[index]));
}

Budget C3AH::budget(const FeatureShape& in) const {
  return cv1.budget(in) + cv2.budget(in) + ahc.budget(in.h * in.w) + cv3.budget({2 * hidden, in.h, in.w});
}

}  // namespace hyperace
