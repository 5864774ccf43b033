#include "hyperace/model.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace hyperace {

namespace {
std::uint64_t u(std::int64_t v) { return static_cast<std::uint64_t>(v); }

Tensor upsample2x(const Tensor& x) { return resize(x, x.dim(2) * 2, x.dim(3) * 2); }

std::array<std::int64_t, 3> split_widths(std::int64_t fused, const std::array<double, 3>& r) {
  const auto hi = static_cast<std::int64_t>(std::llround(static_cast<double>(fused) * r[0]));
  const auto lo = static_cast<std::int64_t>(std::llround(static_cast<double>(fused) * r[1]));
  const std::int64_t sh = fused - hi - lo;
  if (hi < 1 || lo < 1 || sh < 1) {
    throw ShapeError("HyperACE", "split of " + std::to_string(fused) + " channels leaves an empty group");
  }
  return {hi, lo, sh};
}
}  // namespace

// ---- config ----------------------------------------------------------------

ModelConfig ModelConfig::preset(const std::string& name) {
  ModelConfig c;
  c.variant = name;
  if (name == "n") {
    c.width = 0.25, c.depth = 0.5, c.max_channels = 1024, c.hyperedges = 4;
  } else if (name == "s") {
    c.width = 0.5, c.depth = 0.5, c.max_channels = 1024, c.hyperedges = 8;
  } else if (name == "l") {
    c.width = 1.125, c.depth = 1.0, c.max_channels = 640, c.hyperedges = 8;
  } else if (name == "x") {
    c.width = 1.75, c.depth = 0.67, c.max_channels = 1024, c.hyperedges = 12;
  } else if (name == "micro") {
    c.width = 0.0625, c.depth = 0.5, c.max_channels = 1024, c.hyperedges = 2;
    c.num_classes = 2;
    c.reg_bins = 4;
    c.large_kernel = 5;
  } else {
    throw std::invalid_argument("unknown variant '" + name + "' (expected n, s, l, x or micro)");
  }
  return c;
}

std::int64_t ModelConfig::channels(int base) const {
  return std::min<std::int64_t>(static_cast<std::int64_t>(base * width), max_channels);
}

int ModelConfig::repeats(int base) const { return std::max(static_cast<int>(std::lround(base * depth)), 1); }

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (!(width > 0)) fail("width must be positive");
  if (!(depth > 0)) fail("depth must be positive");
  if (max_channels < 1) fail("max_channels must be >= 1");
  if (hyperedges < 1) fail("hyperedges must be >= 1");
  if (num_classes < 1) fail("num_classes must be >= 1");
  if (reg_bins < 2) fail("reg_bins must be >= 2");
  if (large_kernel < 1 || large_kernel % 2 == 0) fail("large_kernel must be odd");
  if (!(early_ratio > 0 && early_ratio <= 1) || !(csp_ratio > 0 && csp_ratio <= 1)) fail("ratios must lie in (0, 1]");
  if (inner_blocks < 1) fail("inner_blocks must be >= 1");
  const auto& h = hyperace;
  if (h.branches_high < 1) fail("hyperace.branches_high must be >= 1");
  if (h.blocks_low < 1) fail("hyperace.blocks_low must be >= 1");
  double total = 0;
  for (double r : h.split) {
    if (!(r > 0)) fail("hyperace.split entries must be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) fail("hyperace.split must sum to 1");
  if (h.fuse_width < 1 || h.out_width < 1) fail("hyperace widths must be >= 1");
  if (h.heads < 1) fail("hyperace.heads must be >= 1");
  if (channels(64) < 1) fail("width too small for the stem");
}

using nlohmann::json;

std::string to_json(const ModelConfig& c, int indent) {
  json j = {
      {"variant", c.variant},
      {"width", c.width},
      {"depth", c.depth},
      {"max_channels", c.max_channels},
      {"hyperedges", c.hyperedges},
      {"num_classes", c.num_classes},
      {"reg_bins", c.reg_bins},
      {"use_ds", c.use_ds},
      {"large_kernel", c.large_kernel},
      {"early_ratio", c.early_ratio},
      {"csp_ratio", c.csp_ratio},
      {"inner_blocks", c.inner_blocks},
      {"hyperace",
       {{"branches_high", c.hyperace.branches_high},
        {"blocks_low", c.hyperace.blocks_low},
        {"split", c.hyperace.split},
        {"fuse_width", c.hyperace.fuse_width},
        {"out_width", c.hyperace.out_width},
        {"heads", c.hyperace.heads}}},
      {"tunnels",
       {{"backbone_neck", c.tunnels.backbone_neck},
        {"in_neck", c.tunnels.in_neck},
        {"neck_head", c.tunnels.neck_head}}},
  };
  return j.dump(indent);
}

namespace {
template <class T>
void take(const json& j, const char* key, T& out, std::set<std::string>& seen) {
  if (!j.contains(key)) return;
  seen.insert(key);
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(std::string("config: field '") + key + "' has the wrong type");
  }
}

void reject_unknown(const json& j, const std::set<std::string>& seen, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!seen.count(it.key())) throw std::invalid_argument("config: unknown field '" + where + it.key() + "'");
  }
}
}  // namespace

ModelConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  std::set<std::string> seen;
  std::string variant = "n";
  take(j, "variant", variant, seen);
  ModelConfig c = ModelConfig::preset(variant);
  take(j, "width", c.width, seen);
  take(j, "depth", c.depth, seen);
  take(j, "max_channels", c.max_channels, seen);
  take(j, "hyperedges", c.hyperedges, seen);
  take(j, "num_classes", c.num_classes, seen);
  take(j, "reg_bins", c.reg_bins, seen);
  take(j, "use_ds", c.use_ds, seen);
  take(j, "large_kernel", c.large_kernel, seen);
  take(j, "early_ratio", c.early_ratio, seen);
  take(j, "csp_ratio", c.csp_ratio, seen);
  take(j, "inner_blocks", c.inner_blocks, seen);
  if (j.contains("hyperace")) {
    seen.insert("hyperace");
    const json& h = j["hyperace"];
    if (!h.is_object()) throw std::invalid_argument("config: 'hyperace' must be an object");
    std::set<std::string> hs;
    take(h, "branches_high", c.hyperace.branches_high, hs);
    take(h, "blocks_low", c.hyperace.blocks_low, hs);
    take(h, "split", c.hyperace.split, hs);
    take(h, "fuse_width", c.hyperace.fuse_width, hs);
    take(h, "out_width", c.hyperace.out_width, hs);
    take(h, "heads", c.hyperace.heads, hs);
    reject_unknown(h, hs, "hyperace.");
  }
  if (j.contains("tunnels")) {
    seen.insert("tunnels");
    const json& t = j["tunnels"];
    if (!t.is_object()) throw std::invalid_argument("config: 'tunnels' must be an object");
    std::set<std::string> ts;
    take(t, "backbone_neck", c.tunnels.backbone_neck, ts);
    take(t, "in_neck", c.tunnels.in_neck, ts);
    take(t, "neck_head", c.tunnels.neck_head, ts);
    reject_unknown(t, ts, "tunnels.");
  }
  reject_unknown(j, seen, "");
  c.validate();
  return c;
}

ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

void save_config(const ModelConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config '" + path + "'");
  out << to_json(cfg) << '\n';
}

Tensor gated_fuse(const Tensor& f, const Tensor& h, const Tensor& gamma) {
  if (f.shape() != h.shape()) {
    throw ShapeError("gated_fuse", "feature " + to_string(f.shape()) + " and enhancement " + to_string(h.shape()) +
                                       " differ");
  }
  return add(f, scale(h, gamma));
}

// ---- HyperACE --------------------------------------------------------------

HyperACE::HyperACE(std::int64_t c3_, std::int64_t c4_, std::int64_t c5_, std::int64_t fused_, std::int64_t out_,
                   const HyperAceConfig& cfg, int hyperedges, const CspConfig& low_cfg)
    : c3(c3_),
      c4(c4_),
      c5(c5_),
      fused(fused_),
      out(out_),
      c_high(split_widths(fused_, cfg.split)[0]),
      c_low(split_widths(fused_, cfg.split)[1]),
      c_short(split_widths(fused_, cfg.split)[2]),
      fuse(c3_ + c4_ + c5_, fused_, 1),
      project(cfg.branches_high * c_high + c_low + c_short, out_, 1) {
  add_child("fuse", fuse);
  for (int i = 0; i < cfg.branches_high; ++i) {
    high.push_back(std::make_unique<C3AH>(c_high, c_high, hyperedges, cfg.heads));
    add_child("high" + std::to_string(i), *high.back());
  }
  for (int i = 0; i < cfg.blocks_low; ++i) {
    low.push_back(std::make_unique<C3k>(c_low, c_low, low_cfg));
    add_child("low" + std::to_string(i), *low.back());
  }
  add_child("project", project);
}

std::vector<Tensor> HyperACE::branch_inputs(const Tensor& b3, const Tensor& b4, const Tensor& b5) {
  for (const Tensor* t : {&b3, &b4, &b5}) {
    if (t->rank() != 4) throw ShapeError("HyperACE", "pyramid levels must be NCHW");
  }
  const std::int64_t h = b4.dim(2), w = b4.dim(3);
  if (b3.dim(2) != 2 * h || b3.dim(3) != 2 * w || 2 * b5.dim(2) != h || 2 * b5.dim(3) != w) {
    throw ShapeError("HyperACE", "pyramid extents " + to_string(b3.shape()) + ", " + to_string(b4.shape()) + ", " +
                                     to_string(b5.shape()) + " are not strides 8/16/32");
  }
  Tensor xb = fuse.forward(concat({resize(b3, h, w, ResizeMode::Area), b4, resize(b5, h, w, ResizeMode::Nearest)}, 1));
  return split(xb, {c_high, c_low, c_short}, 1);
}

Tensor HyperACE::high_input(const Tensor& b3, const Tensor& b4, const Tensor& b5) {
  return branch_inputs(b3, b4, b5)[0];
}

Tensor HyperACE::forward(const Tensor& b3, const Tensor& b4, const Tensor& b5) {
  auto parts = branch_inputs(b3, b4, b5);
  std::vector<Tensor> branches;
  for (auto& blk : high) branches.push_back(blk->forward(parts[0]));
  Tensor l = parts[1];
  for (auto& blk : low) l = blk->forward(l);
  branches.push_back(l);
  branches.push_back(parts[2]);
  return project.forward(concat(branches, 1));
}

Budget HyperACE::budget(const FeatureShape& s3, const FeatureShape& s4, const FeatureShape& s5) const {
  const std::uint64_t hw = u(s4.h * s4.w);
  Budget b;
  b.flops += u(s3.c) * hw + u(s5.c) * hw;  // resampling B3 and B5 to B4
  b += fuse.budget({c3 + c4 + c5, s4.h, s4.w});
  for (const auto& blk : high) b += blk->budget({c_high, s4.h, s4.w});
  for (const auto& blk : low) b += blk->budget({c_low, s4.h, s4.w});
  b += project.budget({static_cast<std::int64_t>(high.size()) * c_high + c_low + c_short, s4.h, s4.w});
  return b;
}

// ---- FullPAD ---------------------------------------------------------------

const char* destination_name(Destination d) {
  switch (d) {
    case Destination::B3: return "b3";
    case Destination::B4: return "b4";
    case Destination::B5: return "b5";
    case Destination::NeckTopDown4: return "neck_td4";
    case Destination::NeckBottomUp4: return "neck_bu4";
    case Destination::HeadP3: return "head_p3";
    case Destination::HeadP5: return "head_p5";
  }
  return "?";
}

bool destination_enabled(Destination d, const TunnelConfig& t) {
  switch (d) {
    case Destination::B3:
    case Destination::B4:
    case Destination::B5: return t.backbone_neck;
    case Destination::NeckTopDown4:
    case Destination::NeckBottomUp4: return t.in_neck;
    case Destination::HeadP3:
    case Destination::HeadP5: return t.neck_head;
  }
  return false;
}

FullPAD::FullPAD(std::int64_t y_channels, const std::array<std::int64_t, kDestinations>& dest_channels,
                 const TunnelConfig& tunnels)
    : y_channels_(y_channels) {
  for (int i = 0; i < kDestinations; ++i) {
    const auto d = static_cast<Destination>(i);
    if (!destination_enabled(d, tunnels)) continue;
    const std::string name = destination_name(d);
    proj_[i] = std::make_unique<ConvBnAct>(y_channels, dest_channels[i], 1);
    add_child("proj." + name, *proj_[i]);
    gamma_[i] = add_param("gamma." + name, {1}, {InitKind::Zero});
  }
}

void FullPAD::set_source(const Tensor& y) {
  if (y.rank() != 4 || y.dim(1) != y_channels_) {
    throw ShapeError("FullPAD", "source must be [N," + std::to_string(y_channels_) + ",H,W], got " +
                                    to_string(y.shape()));
  }
  y_ = y;
  resized_.clear();
}

Tensor FullPAD::enhanced(Destination d, std::int64_t h, std::int64_t w) {
  const int i = static_cast<int>(d);
  if (!proj_[i]) throw std::logic_error(std::string("FullPAD: destination ") + destination_name(d) + " is disabled");
  if (!y_.defined()) throw std::logic_error("FullPAD: no source feature");
  const Tape* tape = active_tape();
  const std::uint64_t serial = tape ? tape->serial() : 0;
  if (serial != resized_tape_) {
    resized_.clear();
    resized_tape_ = serial;
  }
  auto key = std::make_pair(h, w);
  auto it = resized_.find(key);
  if (it == resized_.end()) it = resized_.emplace(key, resize(y_, h, w)).first;
  return proj_[i]->forward(it->second);
}

Tensor FullPAD::apply(Destination d, const Tensor& f) {
  const int i = static_cast<int>(d);
  if (!proj_[i]) return f;
  return gated_fuse(f, enhanced(d, f.dim(2), f.dim(3)), gamma_[i]);
}

Budget FullPAD::budget(const FeatureShape& y, const std::array<FeatureShape, kDestinations>& dests) const {
  Budget b;
  std::set<std::pair<std::int64_t, std::int64_t>> sizes;
  for (int i = 0; i < kDestinations; ++i) {
    if (!proj_[i]) continue;
    const FeatureShape& d = dests[i];
    if (!(d.h == y.h && d.w == y.w) && sizes.insert({d.h, d.w}).second) b.flops += u(y.c * d.h * d.w);
    b += proj_[i]->budget({y.c, d.h, d.w});
    b.params += 1;
    b.flops += 2 * u(d.c * d.h * d.w);
  }
  return b;
}

// ---- head ------------------------------------------------------------------

HeadLevel::HeadLevel(std::int64_t c_in, std::int64_t c_box, std::int64_t c_cls, int reg_bins_, int num_classes_)
    : box0(c_in, c_box, 3),
      box1(c_box, c_box, 3),
      box_out(c_box, 4 * reg_bins_, 1, 1, 1, true),
      cls0(c_in, c_cls, 3),
      cls1(c_cls, c_cls, 3),
      cls_out(c_cls, num_classes_, 1, 1, 1, true),
      reg_bins(reg_bins_),
      num_classes(num_classes_) {
  add_child("box0", box0);
  add_child("box1", box1);
  add_child("box_out", box_out);
  add_child("cls0", cls0);
  add_child("cls1", cls1);
  add_child("cls_out", cls_out);
}

void HeadLevel::after_init() {
  const double prior = std::log(0.01 / 0.99);
  for (auto& v : cls_out.bias.mutable_data()) v = prior;
  // geometric prior over bins with a mean distance of about two strides
  auto b = box_out.bias.mutable_data();
  for (int i = 0; i < 4 * reg_bins; ++i) b[i] = -std::log(1.5) * (i % reg_bins);
}

Tensor HeadLevel::forward(const Tensor& x) {
  Tensor box = box_out.forward(box1.forward(box0.forward(x)));
  Tensor cls = cls_out.forward(cls1.forward(cls0.forward(x)));
  return concat({box, cls}, 1);
}

FeatureShape HeadLevel::output_shape(const FeatureShape& in) const {
  return {4 * reg_bins + num_classes, in.h, in.w};
}

Budget HeadLevel::budget(const FeatureShape& in) const {
  const FeatureShape sb{box0.conv.c2, in.h, in.w};
  const FeatureShape sc{cls0.pw.c2, in.h, in.w};
  return box0.budget(in) + box1.budget(sb) + box_out.budget(sb) + cls0.budget(in) + cls1.budget(sc) +
         cls_out.budget(sc);
}

// ---- network ---------------------------------------------------------------

namespace {
const ModelConfig& checked(const ModelConfig& c) {
  c.validate();
  return c;
}

CspConfig csp(const ModelConfig& c, double e) {
  CspConfig k;
  k.n = c.repeats(2);
  k.e = e;
  k.use_ds = c.use_ds;
  k.k = c.large_kernel;
  k.inner = c.inner_blocks;
  k.use_c3k = true;
  return k;
}
}  // namespace

Network::Network(const ModelConfig& cfg)
    : cfg_(checked(cfg)),
      c1_(cfg.channels(64)),
      c2_(cfg.channels(256)),
      c3_(cfg.channels(512)),
      c4_(cfg.channels(512)),
      c5_(cfg.channels(1024)),
      t4_(cfg.channels(512)),
      o3_(cfg.channels(256)),
      o4_(cfg.channels(512)),
      o5_(cfg.channels(1024)),
      stem0_(3, c1_, 3, 2),
      stem1_(c1_, cfg.channels(128), 3, 2),
      b2_(cfg.channels(128), c2_, csp(cfg, cfg.early_ratio)),
      down2_(c2_, cfg.channels(256), 3, 2),
      b3_(cfg.channels(256), c3_, csp(cfg, cfg.early_ratio)),
      down3_(c3_, cfg.channels(512), 3, 2),
      b4_(cfg.channels(512), c4_, csp(cfg, cfg.csp_ratio)),
      down4_(c4_, cfg.channels(1024), 3, 2),
      b5_(cfg.channels(1024), c5_, csp(cfg, cfg.csp_ratio)),
      sppf_(c5_, c5_),
      td4_(c5_ + c4_, t4_, csp(cfg, cfg.csp_ratio)),
      td3_(t4_ + c3_, o3_, csp(cfg, cfg.csp_ratio)),
      bu3_(o3_, o3_, 3, 2),
      bu4_(o3_ + t4_, o4_, csp(cfg, cfg.csp_ratio)),
      bu4down_(o4_, o4_, 3, 2),
      bu5_(o4_ + c5_, o5_, csp(cfg, cfg.csp_ratio)) {
  add_child("backbone.stem0", stem0_);
  add_child("backbone.stem1", stem1_);
  add_child("backbone.b2", b2_);
  add_child("backbone.down2", down2_);
  add_child("backbone.b3", b3_);
  add_child("backbone.down3", down3_);
  add_child("backbone.b4", b4_);
  add_child("backbone.down4", down4_);
  add_child("backbone.b5", b5_);
  add_child("backbone.sppf", sppf_);
  if (cfg_.tunnels.any()) {
    CspConfig low = csp(cfg_, 0.5);
    hyperace_ = std::make_unique<HyperACE>(c3_, c4_, c5_, cfg_.channels(cfg_.hyperace.fuse_width),
                                           cfg_.channels(cfg_.hyperace.out_width), cfg_.hyperace,
                                           cfg_.hyperedges, low);
    add_child("hyperace", *hyperace_);
    fullpad_ = std::make_unique<FullPAD>(cfg_.channels(cfg_.hyperace.out_width),
                                         std::array<std::int64_t, kDestinations>{c3_, c4_, c5_, t4_, o4_, o3_, o5_},
                                         cfg_.tunnels);
    add_child("fullpad", *fullpad_);
  }
  add_child("neck.td4", td4_);
  add_child("neck.td3", td3_);
  add_child("neck.bu3", bu3_);
  add_child("neck.bu4", bu4_);
  add_child("neck.bu4down", bu4down_);
  add_child("neck.bu5", bu5_);
  const std::int64_t c_box = std::max<std::int64_t>({16, o3_ / 4, 4 * cfg_.reg_bins});
  const std::int64_t c_cls = std::max<std::int64_t>(o3_, std::min(cfg_.num_classes, 100));
  const std::array<std::int64_t, 3> ins{o3_, o4_, o5_};
  for (int i = 0; i < 3; ++i) {
    head_[i] = std::make_unique<HeadLevel>(ins[i], c_box, c_cls, cfg_.reg_bins, cfg_.num_classes);
    add_child("head.p" + std::to_string(i + 3), *head_[i]);
  }
}

std::array<Tensor, 5> Network::run_backbone(const Tensor& image) {
  if (image.rank() != 4 || image.dim(1) != 3) {
    throw ShapeError("Network", "input must be [N,3,H,W], got " + to_string(image.shape()));
  }
  if (image.dim(2) % 32 || image.dim(3) % 32 || image.dim(2) == 0 || image.dim(3) == 0) {
    throw ShapeError("Network", "input height and width (axes 2, 3) must be positive multiples of 32, got " +
                                    to_string(image.shape()));
  }
  std::array<Tensor, 5> bb;
  bb[0] = stem0_.forward(image);
  bb[1] = b2_.forward(stem1_.forward(bb[0]));
  bb[2] = b3_.forward(down2_.forward(bb[1]));
  bb[3] = b4_.forward(down3_.forward(bb[2]));
  bb[4] = sppf_.forward(b5_.forward(down4_.forward(bb[3])));
  return bb;
}

Tensor Network::hypergraph_input(const Tensor& image) {
  if (!hyperace_) throw std::invalid_argument("network has no hypergraph layers (every tunnel is off)");
  auto bb = run_backbone(image);
  return hyperace_->high_input(bb[2], bb[3], bb[4]);
}

NetworkOutputs Network::forward(const Tensor& image) {
  NetworkOutputs out;
  out.backbone = run_backbone(image);
  auto& bb = out.backbone;

  auto gate = [&](Destination d, const Tensor& f) { return fullpad_ ? fullpad_->apply(d, f) : f; };
  if (hyperace_) {
    out.y = hyperace_->forward(bb[2], bb[3], bb[4]);
    fullpad_->set_source(out.y);
  }
  Tensor g3 = gate(Destination::B3, bb[2]);
  Tensor g4 = gate(Destination::B4, bb[3]);
  Tensor g5 = gate(Destination::B5, bb[4]);
  Tensor t4 = gate(Destination::NeckTopDown4, td4_.forward(concat({upsample2x(g5), g4}, 1)));
  Tensor p3 = gate(Destination::HeadP3, td3_.forward(concat({upsample2x(t4), g3}, 1)));
  Tensor p4 = gate(Destination::NeckBottomUp4, bu4_.forward(concat({bu3_.forward(p3), t4}, 1)));
  Tensor p5 = gate(Destination::HeadP5, bu5_.forward(concat({bu4down_.forward(p4), g5}, 1)));
  out.neck = {t4, p3, p4, p5};
  out.heads = {head_[0]->forward(p3), head_[1]->forward(p4), head_[2]->forward(p5)};
  return out;
}

std::vector<std::pair<std::string, Budget>> Network::budget(std::int64_t h, std::int64_t w) const {
  if (h % 32 || w % 32 || h <= 0 || w <= 0) throw ShapeError("Network", "input extent must be a multiple of 32");
  std::vector<std::pair<std::string, Budget>> parts;
  FeatureShape s{3, h, w};
  auto run = [&](const char* name, const Layer& l) {
    parts.emplace_back(name, l.budget(s));
    s = l.output_shape(s);
  };
  run("backbone.stem0", stem0_);
  run("backbone.stem1", stem1_);
  run("backbone.b2", b2_);
  run("backbone.down2", down2_);
  run("backbone.b3", b3_);
  const FeatureShape s3 = s;
  run("backbone.down3", down3_);
  run("backbone.b4", b4_);
  const FeatureShape s4 = s;
  run("backbone.down4", down4_);
  run("backbone.b5", b5_);
  run("backbone.sppf", sppf_);
  const FeatureShape s5 = s;
  if (hyperace_) {
    parts.emplace_back("hyperace", hyperace_->budget(s3, s4, s5));
    const FeatureShape y{hyperace_->out, s4.h, s4.w};
    parts.emplace_back("fullpad", fullpad_->budget(y, {s3, s4, s5, {t4_, s4.h, s4.w}, {o4_, s4.h, s4.w},
                                                       {o3_, s3.h, s3.w}, {o5_, s5.h, s5.w}}));
  }
  Budget up;
  up.flops = u(c5_ * s4.h * s4.w);
  parts.emplace_back("neck.upsample5", up);
  parts.emplace_back("neck.td4", td4_.budget({c5_ + c4_, s4.h, s4.w}));
  up.flops = u(t4_ * s3.h * s3.w);
  parts.emplace_back("neck.upsample4", up);
  parts.emplace_back("neck.td3", td3_.budget({t4_ + c3_, s3.h, s3.w}));
  parts.emplace_back("neck.bu3", bu3_.budget({o3_, s3.h, s3.w}));
  parts.emplace_back("neck.bu4", bu4_.budget({o3_ + t4_, s4.h, s4.w}));
  parts.emplace_back("neck.bu4down", bu4down_.budget({o4_, s4.h, s4.w}));
  parts.emplace_back("neck.bu5", bu5_.budget({o4_ + c5_, s5.h, s5.w}));
  parts.emplace_back("head.p3", head_[0]->budget({o3_, s3.h, s3.w}));
  parts.emplace_back("head.p4", head_[1]->budget({o4_, s4.h, s4.w}));
  parts.emplace_back("head.p5", head_[2]->budget({o5_, s5.h, s5.w}));
  return parts;
}

std::vector<std::pair<std::string, C3AH*>> Network::hypergraph_layers() {
  std::vector<std::pair<std::string, C3AH*>> out;
  if (!hyperace_) return out;
  for (std::size_t i = 0; i < hyperace_->high.size(); ++i) {
    out.emplace_back("hyperace.high" + std::to_string(i), hyperace_->high[i].get());
  }
  return out;
}

}  // namespace hyperace
