#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "hyperace/ops.hpp"
#include "hyperace/tensor.hpp"

namespace hyperace {

/// Per-image feature map extent.
struct FeatureShape {
  std::int64_t c = 0, h = 0, w = 0;
  bool operator==(const FeatureShape&) const = default;
};

/// Parameter count and forward FLOPs for one image.
struct Budget {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  Budget& operator+=(const Budget& o) {
    params += o.params;
    flops += o.flops;
    return *this;
  }
};
inline Budget operator+(Budget a, const Budget& b) { return a += b; }

enum class InitKind { Zero, One, Const, FanInUniform, Normal };

struct InitSpec {
  InitKind kind = InitKind::Zero;
  double arg = 0.0;          // value for Const, std for Normal
  std::int64_t fan_in = 1;  // FanInUniform bound is 1/sqrt(fan_in)
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Owner of named parameters, buffers and child modules.
///
/// Names are dotted paths ("neck.t4.cv1.conv.weight"). Initialization seeds a
/// generator from (seed, full name), so two networks that share a parameter
/// name start from the same values regardless of what else they contain.
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> buffers() const;
  /// Parameters and buffers, in registration order.
  std::vector<NamedTensor> state() const;
  std::uint64_t param_count() const;

  void init(std::uint64_t seed);
  void zero_grad();

 protected:
  Tensor add_param(const std::string& name, Shape shape, InitSpec spec);
  Tensor add_buffer(const std::string& name, Shape shape, double fill);
  void add_child(const std::string& name, Module& child);
  /// Runs after this module's own slots and children are initialized.
  virtual void after_init() {}

 private:
  struct Slot {
    std::string name;
    Tensor tensor;
    InitSpec spec;
    bool is_param;
  };
  void walk(const std::string& prefix, bool params, bool bufs, std::vector<NamedTensor>& out) const;
  void walk_init(const std::string& prefix, std::uint64_t seed);

  std::vector<Slot> slots_;
  std::vector<std::pair<std::string, Module*>> children_;
};

/// Single-input feature transform.
class Layer : public Module {
 public:
  virtual Tensor forward(const Tensor& x) = 0;
  virtual FeatureShape output_shape(const FeatureShape& in) const = 0;
  /// Closed-form parameter and FLOP count for one image of shape `in`.
  virtual Budget budget(const FeatureShape& in) const = 0;
};

/// Batch norm runs with batch statistics and updates running estimates
/// while a TrainingScope is alive on the current thread.
bool training();
class TrainingScope {
 public:
  explicit TrainingScope(bool on = true);
  ~TrainingScope();
  TrainingScope(const TrainingScope&) = delete;
  TrainingScope& operator=(const TrainingScope&) = delete;

 private:
  bool previous_;
};

class BatchNorm2d : public Layer {
 public:
  explicit BatchNorm2d(std::int64_t channels, double eps = 1e-3, double momentum = 0.03);
  Tensor forward(const Tensor& x) override;
  FeatureShape output_shape(const FeatureShape& in) const override { return in; }
  Budget budget(const FeatureShape& in) const override;

  Tensor scale, shift, running_mean, running_var;
  std::int64_t channels;
  double eps, momentum;
};

/// Plain convolution, optional bias, no normalization.
class Conv2d : public Layer {
 public:
  Conv2d(std::int64_t c1, std::int64_t c2, int k, int stride = 1, int groups = 1, bool bias = false);
  Tensor forward(const Tensor& x) override;
  FeatureShape output_shape(const FeatureShape& in) const override;
  Budget budget(const FeatureShape& in) const override;

  Tensor weight, bias;
  std::int64_t c1, c2;
  int k, stride, groups;
};

/// Convolution, batch norm, optional SiLU.
class ConvBnAct : public Layer {
 public:
  ConvBnAct(std::int64_t c1, std::int64_t c2, int k, int stride = 1, bool act = true);
  Tensor forward(const Tensor& x) override;
  FeatureShape output_shape(const FeatureShape& in) const override { return conv.output_shape(in); }
  Budget budget(const FeatureShape& in) const override;

  Conv2d conv;
  BatchNorm2d bn;
  bool act;
};

/// Depthwise k x k, pointwise 1 x 1, then one batch norm and SiLU.
class DSConv : public Layer {
 public:
  DSConv(std::int64_t c1, std::int64_t c2, int k, int stride = 1);
  Tensor forward(const Tensor& x) override;
  FeatureShape output_shape(const FeatureShape& in) const override;
  Budget budget(const FeatureShape& in) const override;

  Conv2d dw, pw;
  BatchNorm2d bn;
};

std::unique_ptr<Layer> make_conv_unit(bool ds, std::int64_t c1, std::int64_t c2, int k, int stride = 1);

struct CspConfig {
  int n = 1;             // bottlenecks (C3k) or inner blocks (C3k2)
  double e = 0.5;        // hidden ratio
  bool use_ds = true;    // depthwise-separable bottlenecks
  int k = 7;             // large kernel inside bottlenecks
  int inner = 1;         // bottlenecks per nested C3k inside C3k2
  bool use_c3k = true;   // C3k2 nests C3k blocks, else plain bottlenecks
};

/// 3 x 3 unit then k x k unit; identity skip when c1 == c2.
class Bottleneck : public Layer {
 public:
  Bottleneck(std::int64_t c1, std::int64_t c2, int k, bool ds);
  Tensor forward(const Tensor& x) override;
  FeatureShape output_shape(const FeatureShape& in) const override;
  Budget budget(const FeatureShape& in) const override;
  bool residual() const { return c1 == c2; }

  std::unique_ptr<Layer> cv1, cv2;
  std::int64_t c1, c2;
};

/// CSP block: reduced path through n bottlenecks beside a lateral 1 x 1 path.
class C3k : public Layer {
 public:
  C3k(std::int64_t c1, std::int64_t c2, const CspConfig& cfg);
  Tensor forward(const Tensor& x) override;
  FeatureShape output_shape(const FeatureShape& in) const override;
  Budget budget(const FeatureShape& in) const override;

  std::int64_t c1, c2, hidden;
  ConvBnAct cv1, cv2, cv3;
  std::vector<std::unique_ptr<Bottleneck>> m;
};

/// Unify, split into shortcut and processed halves, fuse.
class C3k2 : public Layer {
 public:
  C3k2(std::int64_t c1, std::int64_t c2, const CspConfig& cfg);
  Tensor forward(const Tensor& x) override;
  FeatureShape output_shape(const FeatureShape& in) const override;
  Budget budget(const FeatureShape& in) const override;

  std::int64_t c1, c2, hidden;
  ConvBnAct cv1, cv2;
  std::vector<std::unique_ptr<Layer>> m;
};

/// Spatial pyramid pooling with three chained 5 x 5 max pools.
class SPPF : public Layer {
 public:
  SPPF(std::int64_t c1, std::int64_t c2, int k = 5);
  Tensor forward(const Tensor& x) override;
  FeatureShape output_shape(const FeatureShape& in) const override;
  Budget budget(const FeatureShape& in) const override;

  std::int64_t c1, c2, hidden;
  int k;
  ConvBnAct cv1, cv2;
};

/// Integral hidden width c * e, or ShapeError.
std::int64_t hidden_width(const char* block, std::int64_t c, double e);

}  // namespace hyperace
