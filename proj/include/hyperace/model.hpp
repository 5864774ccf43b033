#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hyperace/hypergraph.hpp"
#include "hyperace/nn.hpp"

namespace hyperace {

struct HyperAceConfig {
  int branches_high = 2;                             // K parallel C3AH blocks
  int blocks_low = 1;                                // L stacked DS-C3k blocks
  std::array<double, 3> split{0.5, 0.25, 0.25};      // high, low, shortcut
  int fuse_width = 1024;                             // base width of the fused B3/B4/B5 map
  int out_width = 512;                               // base width of Y
  int heads = 4;
};

struct TunnelConfig {
  bool backbone_neck = true;  // B3, B4, B5 entering the neck
  bool in_neck = true;        // top-down P4 fusion and bottom-up P4 fusion
  bool neck_head = true;      // P3 and P5 head inputs
  bool any() const { return backbone_neck || in_neck || neck_head; }
};

struct ModelConfig {
  std::string variant = "n";
  double width = 0.25;
  double depth = 0.5;
  int max_channels = 1024;
  int hyperedges = 4;
  int num_classes = 80;
  int reg_bins = 16;
  bool use_ds = true;
  int large_kernel = 7;
  double early_ratio = 0.25;  // hidden ratio of the two shallow backbone stages
  double csp_ratio = 0.5;
  int inner_blocks = 1;
  HyperAceConfig hyperace;
  TunnelConfig tunnels;

  /// Named presets: n, s, l, x, micro.
  static ModelConfig preset(const std::string& name);
  void validate() const;

  std::int64_t channels(int base) const;
  int repeats(int base) const;
};

std::string to_json(const ModelConfig& cfg, int indent = 2);
ModelConfig config_from_json(const std::string& text);
ModelConfig load_config(const std::string& path);
void save_config(const ModelConfig& cfg, const std::string& path);

/// F + gamma * H.
Tensor gated_fuse(const Tensor& f, const Tensor& h, const Tensor& gamma);

/// Fuses B3/B4/B5 at B4 resolution and enhances the result through parallel
/// high-order (C3AH), low-order (DS-C3k) and identity branches.
class HyperACE : public Module {
 public:
  HyperACE(std::int64_t c3, std::int64_t c4, std::int64_t c5, std::int64_t fused, std::int64_t out,
           const HyperAceConfig& cfg, int hyperedges, const CspConfig& low);
  Tensor forward(const Tensor& b3, const Tensor& b4, const Tensor& b5);
  /// The map fed to every C3AH branch.
  Tensor high_input(const Tensor& b3, const Tensor& b4, const Tensor& b5);
  Budget budget(const FeatureShape& s3, const FeatureShape& s4, const FeatureShape& s5) const;

  std::int64_t c3, c4, c5, fused, out, c_high, c_low, c_short;
  ConvBnAct fuse;
  std::vector<std::unique_ptr<C3AH>> high;
  std::vector<std::unique_ptr<C3k>> low;
  ConvBnAct project;

 private:
  std::vector<Tensor> branch_inputs(const Tensor& b3, const Tensor& b4, const Tensor& b5);
};

enum class Destination { B3, B4, B5, NeckTopDown4, NeckBottomUp4, HeadP3, HeadP5 };
constexpr int kDestinations = 7;
const char* destination_name(Destination d);
bool destination_enabled(Destination d, const TunnelConfig& t);

/// Resizes Y to each enabled destination, projects it with a 1 x 1 unit and
/// adds it to the destination feature through a zero-initialized gate.
class FullPAD : public Module {
 public:
  FullPAD(std::int64_t y_channels, const std::array<std::int64_t, kDestinations>& dest_channels,
          const TunnelConfig& tunnels);

  void set_source(const Tensor& y);
  /// Gated feature for destination d; returns f unchanged when d is disabled.
  Tensor apply(Destination d, const Tensor& f);
  /// Enhanced feature H for d at the given spatial size.
  Tensor enhanced(Destination d, std::int64_t h, std::int64_t w);
  bool enabled(Destination d) const { return static_cast<bool>(proj_[static_cast<int>(d)]); }
  Tensor gamma(Destination d) const { return gamma_[static_cast<int>(d)]; }

  /// y_size is Y's extent, dest_sizes the per-destination feature extents.
  Budget budget(const FeatureShape& y, const std::array<FeatureShape, kDestinations>& dests) const;

 private:
  std::int64_t y_channels_;
  std::array<std::unique_ptr<ConvBnAct>, kDestinations> proj_;
  std::array<Tensor, kDestinations> gamma_;
  Tensor y_;
  std::map<std::pair<std::int64_t, std::int64_t>, Tensor> resized_;
  std::uint64_t resized_tape_ = 0;  // serial of the tape the cache was built on
};

/// Decoupled anchor-free head for one stride: a box branch predicting
/// 4 x reg_bins distance logits and a class branch predicting logits.
class HeadLevel : public Layer {
 public:
  HeadLevel(std::int64_t c_in, std::int64_t c_box, std::int64_t c_cls, int reg_bins, int num_classes);
  Tensor forward(const Tensor& x) override;
  FeatureShape output_shape(const FeatureShape& in) const override;
  Budget budget(const FeatureShape& in) const override;

  // Class logits start at a 1% prior, box bins at a short-distance prior.
  void after_init() override;

  ConvBnAct box0, box1;
  Conv2d box_out;
  DSConv cls0, cls1;
  Conv2d cls_out;
  int reg_bins, num_classes;
};

struct NetworkOutputs {
  std::array<Tensor, 3> heads;  // strides 8, 16, 32: [N, 4*reg_bins + classes, H/s, W/s]
  std::array<Tensor, 5> backbone;  // B1..B5 (B5 after the pooling block)
  Tensor y;                         // undefined when every tunnel is off
  std::array<Tensor, 4> neck;       // top-down P4, P3, bottom-up P4, P5 after gating
};

class Network : public Module {
 public:
  explicit Network(const ModelConfig& cfg);

  NetworkOutputs forward(const Tensor& image);
  std::array<Tensor, 3> detect(const Tensor& image) { return forward(image).heads; }

  /// Closed-form per-module budget for an input of h x w.
  std::vector<std::pair<std::string, Budget>> budget(std::int64_t h, std::int64_t w) const;

  /// Every C3AH block with its dotted name.
  std::vector<std::pair<std::string, C3AH*>> hypergraph_layers();
  /// Input of the C3AH blocks (stride 16) for an image batch.
  Tensor hypergraph_input(const Tensor& image);

  static constexpr std::array<int, 3> strides{8, 16, 32};
  const ModelConfig& config() const { return cfg_; }
  bool has_hyperace() const { return static_cast<bool>(hyperace_); }

 private:
  std::array<Tensor, 5> run_backbone(const Tensor& image);

  ModelConfig cfg_;
  std::int64_t c1_, c2_, c3_, c4_, c5_, t4_, o3_, o4_, o5_;
  ConvBnAct stem0_, stem1_;
  C3k2 b2_;
  ConvBnAct down2_;
  C3k2 b3_;
  ConvBnAct down3_;
  C3k2 b4_;
  ConvBnAct down4_;
  C3k2 b5_;
  SPPF sppf_;
  std::unique_ptr<HyperACE> hyperace_;
  std::unique_ptr<FullPAD> fullpad_;
  C3k2 td4_, td3_;
  ConvBnAct bu3_;
  C3k2 bu4_;
  ConvBnAct bu4down_;
  C3k2 bu5_;
  std::array<std::unique_ptr<HeadLevel>, 3> head_;
};

}  // namespace hyperace
