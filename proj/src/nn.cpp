#include "hyperace/nn.hpp"

#include <cmath>

#include "hyperace/rng.hpp"

namespace hyperace {

namespace {
thread_local bool g_training = false;

std::uint64_t u(std::int64_t v) { return static_cast<std::uint64_t>(v); }

std::int64_t conv_out(std::int64_t n, int k, int s) { return (n + 2 * (k / 2) - k) / s + 1; }
}  // namespace

bool training() { return g_training; }
TrainingScope::TrainingScope(bool on) : previous_(g_training) { g_training = on; }
TrainingScope::~TrainingScope() { g_training = previous_; }

// ---- Module ----------------------------------------------------------------

Tensor Module::add_param(const std::string& name, Shape shape, InitSpec spec) {
  Tensor t(std::move(shape));
  t.set_requires_grad(true);
  slots_.push_back({name, t, spec, true});
  return t;
}

Tensor Module::add_buffer(const std::string& name, Shape shape, double fill) {
  Tensor t(std::move(shape), fill);
  slots_.push_back({name, t, {InitKind::Const, fill, 1}, false});
  return t;
}

void Module::add_child(const std::string& name, Module& child) { children_.emplace_back(name, &child); }

void Module::walk(const std::string& prefix, bool params, bool bufs, std::vector<NamedTensor>& out) const {
  for (const auto& s : slots_) {
    if ((s.is_param && params) || (!s.is_param && bufs)) out.push_back({prefix + s.name, s.tensor});
  }
  for (const auto& [name, child] : children_) child->walk(prefix + name + ".", params, bufs, out);
}

std::vector<NamedTensor> Module::parameters() const {
  std::vector<NamedTensor> out;
  walk("", true, false, out);
  return out;
}

std::vector<NamedTensor> Module::buffers() const {
  std::vector<NamedTensor> out;
  walk("", false, true, out);
  return out;
}

std::vector<NamedTensor> Module::state() const {
  std::vector<NamedTensor> out;
  walk("", true, true, out);
  return out;
}

std::uint64_t Module::param_count() const {
  std::uint64_t n = 0;
  for (const auto& p : parameters()) n += u(p.tensor.numel());
  return n;
}

void Module::walk_init(const std::string& prefix, std::uint64_t seed) {
  for (auto& s : slots_) {
    auto data = s.tensor.mutable_data();
    Rng rng(derive_seed(seed, prefix + s.name));
    switch (s.spec.kind) {
      case InitKind::Zero:
        std::fill(data.begin(), data.end(), 0.0);
        break;
      case InitKind::One:
        std::fill(data.begin(), data.end(), 1.0);
        break;
      case InitKind::Const:
        std::fill(data.begin(), data.end(), s.spec.arg);
        break;
      case InitKind::FanInUniform: {
        const double b = 1.0 / std::sqrt(static_cast<double>(std::max<std::int64_t>(s.spec.fan_in, 1)));
        for (auto& v : data) v = rng.uniform(-b, b);
        break;
      }
      case InitKind::Normal:
        for (auto& v : data) v = s.spec.arg * rng.normal();
        break;
    }
  }
  for (auto& [name, child] : children_) child->walk_init(prefix + name + ".", seed);
  after_init();
}

void Module::init(std::uint64_t seed) { walk_init("", seed); }

void Module::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

// ---- BatchNorm2d -----------------------------------------------------------

BatchNorm2d::BatchNorm2d(std::int64_t c, double eps_, double momentum_)
    : channels(c), eps(eps_), momentum(momentum_) {
  if (c < 1) throw ShapeError("BatchNorm2d", "channels must be >= 1");
  if (!(eps_ > 0)) throw std::invalid_argument("BatchNorm2d: eps must be positive");
  scale = add_param("weight", {c}, {InitKind::One});
  shift = add_param("bias", {c}, {InitKind::Zero});
  running_mean = add_buffer("running_mean", {c}, 0.0);
  running_var = add_buffer("running_var", {c}, 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x) {
  if (!training()) return batchnorm(x, scale, shift, running_mean, running_var, eps);
  std::vector<double> mu, var;
  Tensor y = batchnorm_train(x, scale, shift, eps, mu, var);
  auto rm = running_mean.mutable_data();
  auto rv = running_var.mutable_data();
  for (std::int64_t c = 0; c < channels; ++c) {
    rm[c] = (1 - momentum) * rm[c] + momentum * mu[c];
    rv[c] = (1 - momentum) * rv[c] + momentum * var[c];
  }
  return y;
}

Budget BatchNorm2d::budget(const FeatureShape& in) const { return {u(2 * channels), u(in.c * in.h * in.w)}; }

// ---- Conv2d ----------------------------------------------------------------

Conv2d::Conv2d(std::int64_t c1_, std::int64_t c2_, int k_, int stride_, int groups_, bool with_bias)
    : c1(c1_), c2(c2_), k(k_), stride(stride_), groups(groups_) {
  if (c1 < 1 || c2 < 1) throw ShapeError("Conv2d", "channel counts must be >= 1");
  if (k < 1 || k % 2 == 0) throw ShapeError("Conv2d", "kernel must be odd, got " + std::to_string(k));
  if (groups < 1 || c1 % groups || c2 % groups) throw ShapeError("Conv2d", "channels not divisible by groups");
  const std::int64_t fan_in = c1 / groups * k * k;
  weight = add_param("weight", {c2, c1 / groups, k, k}, {InitKind::FanInUniform, 0.0, fan_in});
  if (with_bias) bias = add_param("bias", {c2}, {InitKind::FanInUniform, 0.0, fan_in});
}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.rank() == 4 && x.dim(1) != c1) {
    throw ShapeError("Conv2d", "channel dimension (axis 1) is " + std::to_string(x.dim(1)) + ", expected " +
                                   std::to_string(c1));
  }
  return conv2d(x, weight, {stride, k / 2, groups}, bias);
}

FeatureShape Conv2d::output_shape(const FeatureShape& in) const {
  return {c2, conv_out(in.h, k, stride), conv_out(in.w, k, stride)};
}

Budget Conv2d::budget(const FeatureShape& in) const {
  const FeatureShape o = output_shape(in);
  const std::uint64_t ohw = u(o.h * o.w);
  Budget b;
  b.params = u(c2 * (c1 / groups) * k * k) + (bias.defined() ? u(c2) : 0);
  b.flops = 2 * u(c2) * u(c1 / groups) * u(k * k) * ohw + (bias.defined() ? u(c2) * ohw : 0);
  return b;
}

// ---- ConvBnAct -------------------------------------------------------------

ConvBnAct::ConvBnAct(std::int64_t c1, std::int64_t c2, int k, int stride, bool act_)
    : conv(c1, c2, k, stride), bn(c2), act(act_) {
  add_child("conv", conv);
  add_child("bn", bn);
}

Tensor ConvBnAct::forward(const Tensor& x) {
  Tensor y = bn.forward(conv.forward(x));
  return act ? silu(y) : y;
}

Budget ConvBnAct::budget(const FeatureShape& in) const {
  const FeatureShape o = conv.output_shape(in);
  Budget b = conv.budget(in) + bn.budget(o);
  if (act) b.flops += u(o.c * o.h * o.w);
  return b;
}

// ---- DSConv ----------------------------------------------------------------

DSConv::DSConv(std::int64_t c1, std::int64_t c2, int k, int stride)
    : dw(c1, c1, k, stride, static_cast<int>(c1)), pw(c1, c2, 1), bn(c2) {
  add_child("dw", dw);
  add_child("pw", pw);
  add_child("bn", bn);
}

Tensor DSConv::forward(const Tensor& x) { return silu(bn.forward(pw.forward(dw.forward(x)))); }

FeatureShape DSConv::output_shape(const FeatureShape& in) const { return pw.output_shape(dw.output_shape(in)); }

Budget DSConv::budget(const FeatureShape& in) const {
  const FeatureShape mid = dw.output_shape(in);
  const FeatureShape o = pw.output_shape(mid);
  Budget b = dw.budget(in) + pw.budget(mid) + bn.budget(o);
  b.flops += u(o.c * o.h * o.w);
  return b;
}

std::unique_ptr<Layer> make_conv_unit(bool ds, std::int64_t c1, std::int64_t c2, int k, int stride) {
  if (ds) return std::make_unique<DSConv>(c1, c2, k, stride);
  return std::make_unique<ConvBnAct>(c1, c2, k, stride);
}

std::int64_t hidden_width(const char* block, std::int64_t c, double e) {
  if (!(e > 0.0 && e <= 1.0)) throw std::invalid_argument(std::string(block) + ": hidden ratio must lie in (0, 1]");
  const double v = static_cast<double>(c) * e;
  const auto h = static_cast<std::int64_t>(std::llround(v));
  if (std::abs(v - static_cast<double>(h)) > 1e-9 || h < 1) {
    throw ShapeError(block, std::to_string(c) + " channels x ratio " + std::to_string(e) +
                                " is not a whole channel count");
  }
  return h;
}

// ---- Bottleneck ------------------------------------------------------------

Bottleneck::Bottleneck(std::int64_t c1_, std::int64_t c2_, int k, bool ds)
    : cv1(make_conv_unit(ds, c1_, c2_, 3)), cv2(make_conv_unit(ds, c2_, c2_, k)), c1(c1_), c2(c2_) {
  add_child("cv1", *cv1);
  add_child("cv2", *cv2);
}

Tensor Bottleneck::forward(const Tensor& x) {
  Tensor y = cv2->forward(cv1->forward(x));
  return residual() ? add(x, y) : y;
}

FeatureShape Bottleneck::output_shape(const FeatureShape& in) const { return {c2, in.h, in.w}; }

Budget Bottleneck::budget(const FeatureShape& in) const {
  const FeatureShape mid = cv1->output_shape(in);
  Budget b = cv1->budget(in) + cv2->budget(mid);
  if (residual()) b.flops += u(c2 * in.h * in.w);
  return b;
}

// ---- C3k -------------------------------------------------------------------

C3k::C3k(std::int64_t c1_, std::int64_t c2_, const CspConfig& cfg)
    : c1(c1_),
      c2(c2_),
      hidden(hidden_width("C3k", c2_, cfg.e)),
      cv1(c1_, hidden, 1),
      cv2(c1_, hidden, 1),
      cv3(2 * hidden, c2_, 1) {
  if (cfg.n < 1) throw std::invalid_argument("C3k: n must be >= 1");
  add_child("cv1", cv1);
  add_child("cv2", cv2);
  add_child("cv3", cv3);
  for (int i = 0; i < cfg.n; ++i) {
    m.push_back(std::make_unique<Bottleneck>(hidden, hidden, cfg.k, cfg.use_ds));
    add_child("m" + std::to_string(i), *m.back());
  }
}

Tensor C3k::forward(const Tensor& x) {
  Tensor a = cv1.forward(x);
  for (auto& b : m) a = b->forward(a);
  return cv3.forward(concat({a, cv2.forward(x)}, 1));
}

FeatureShape C3k::output_shape(const FeatureShape& in) const { return {c2, in.h, in.w}; }

Budget C3k::budget(const FeatureShape& in) const {
  const FeatureShape mid{hidden, in.h, in.w};
  Budget b = cv1.budget(in) + cv2.budget(in) + cv3.budget({2 * hidden, in.h, in.w});
  for (const auto& blk : m) b += blk->budget(mid);
  return b;
}

// ---- C3k2 ------------------------------------------------------------------

C3k2::C3k2(std::int64_t c1_, std::int64_t c2_, const CspConfig& cfg)
    : c1(c1_),
      c2(c2_),
      hidden(hidden_width("C3k2", c2_, cfg.e)),
      cv1(c1_, 2 * hidden, 1),
      cv2(2 * hidden, c2_, 1) {
  if (cfg.n < 1) throw std::invalid_argument("C3k2: n must be >= 1");
  add_child("cv1", cv1);
  add_child("cv2", cv2);
  CspConfig inner = cfg;
  inner.n = cfg.inner;
  inner.e = 0.5;
  for (int i = 0; i < cfg.n; ++i) {
    if (cfg.use_c3k) {
      m.push_back(std::make_unique<C3k>(hidden, hidden, inner));
    } else {
      m.push_back(std::make_unique<Bottleneck>(hidden, hidden, cfg.k, cfg.use_ds));
    }
    add_child("m" + std::to_string(i), *m.back());
  }
}

Tensor C3k2::forward(const Tensor& x) {
  auto parts = split(cv1.forward(x), {hidden, hidden}, 1);
  Tensor b = parts[1];
  for (auto& blk : m) b = blk->forward(b);
  return cv2.forward(concat({parts[0], b}, 1));
}

FeatureShape C3k2::output_shape(const FeatureShape& in) const { return {c2, in.h, in.w}; }

Budget C3k2::budget(const FeatureShape& in) const {
  const FeatureShape mid{hidden, in.h, in.w};
  Budget b = cv1.budget(in) + cv2.budget({2 * hidden, in.h, in.w});
  for (const auto& blk : m) b += blk->budget(mid);
  return b;
}

// ---- SPPF ------------------------------------------------------------------

SPPF::SPPF(std::int64_t c1_, std::int64_t c2_, int k_)
    : c1(c1_), c2(c2_), hidden(hidden_width("SPPF", c1_, 0.5)), k(k_), cv1(c1_, hidden, 1), cv2(4 * hidden, c2_, 1) {
  add_child("cv1", cv1);
  add_child("cv2", cv2);
}

Tensor SPPF::forward(const Tensor& x) {
  std::vector<Tensor> ys{cv1.forward(x)};
  for (int i = 0; i < 3; ++i) ys.push_back(max_pool2d(ys.back(), k, 1, k / 2));
  return cv2.forward(concat(ys, 1));
}

FeatureShape SPPF::output_shape(const FeatureShape& in) const { return {c2, in.h, in.w}; }

Budget SPPF::budget(const FeatureShape& in) const {
  Budget b = cv1.budget(in) + cv2.budget({4 * hidden, in.h, in.w});
  b.flops += 3 * u(hidden * in.h * in.w);
  return b;
}

}  // namespace hyperace
