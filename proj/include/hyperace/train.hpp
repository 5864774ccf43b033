#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hyperace/model.hpp"
#include "hyperace/synthetic.hpp"

namespace hyperace {

struct LossConfig {
  int reg_bins = 16;
  int num_classes = 80;
  std::vector<int> strides{8, 16, 32};
  double band = 4.0;  // an object goes to the first stride with max side <= band * stride
  double radius = 2.5;  // positives lie within radius * stride of the object center
  double w_cls = 1.0, w_l1 = 1.0, w_iou = 2.0;
};

struct LossBreakdown {
  double cls = 0, l1 = 0, iou = 0;
  int positives = 0;
};

/// One positive cell: image, level, flattened cell index, and the target.
struct Positive {
  std::int64_t image = 0;
  int level = 0;
  std::int64_t cell = 0;
  GtBox target;
};

/// Center-in-box assignment within each object's stride band. A cell
/// claimed by several objects keeps the smallest one.
std::vector<Positive> assign_targets(const std::vector<std::array<std::int64_t, 2>>& grid_sizes,
                                     const std::vector<std::vector<GtBox>>& targets, const LossConfig& cfg);

/// Scalar training loss over head maps: class BCE on every cell plus L1 and
/// (1 - IoU) on the expected side distances of positive cells, all divided by
/// the positive count.
Tensor detection_loss(const std::vector<Tensor>& heads, const std::vector<std::vector<GtBox>>& targets,
                      const LossConfig& cfg, LossBreakdown* parts = nullptr);

/// Nesterov momentum SGD with decoupled selection of decayed tensors
/// (rank >= 2 weights decay, vectors and scalars do not).
class Sgd {
 public:
  Sgd(std::vector<NamedTensor> params, double momentum, double weight_decay);
  /// Returns the gradient norm before clipping.
  double step(double lr, double clip_norm);

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_, weight_decay_;
};

struct EvalResult {
  double recall = 0, precision = 0;
  int true_positives = 0, false_positives = 0, ground_truth = 0;
};

/// Class-aware greedy matching at IoU >= match_iou, highest score first.
EvalResult evaluate(Network& net, const std::vector<SyntheticScene>& scenes, double conf, double nms_iou,
                    double match_iou = 0.5, int batch = 32);

struct TrainOptions {
  int steps = 600;
  int batch = 16;
  double lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int warmup = 40;
  double final_lr_ratio = 0.05;
  double grad_clip = 10.0;
  std::uint64_t seed = 0;
  int train_scenes = 0;  // 0 draws fresh scenes every step
  SceneOptions scenes;
  int eval_every = 0;    // 0 evaluates only at the end
  int eval_scenes = 200;
  std::uint64_t eval_seed = 7919;
  double conf = 0.3;
  double nms_iou = 0.5;
  double recall_target = 0.9;
};

struct TrainResult {
  std::vector<double> loss;
  std::vector<std::pair<int, EvalResult>> evals;
  int steps_to_recall = -1;  // first evaluated step meeting recall_target
  EvalResult final_eval;
  double seconds = 0;
};

/// Trains with batch statistics on synthetic scenes. Throws if the loss
/// becomes non-finite, naming the step.
TrainResult train_toy(Network& net, const TrainOptions& opt,
                      const std::function<void(const std::string&)>& log = nullptr);

void write_loss_csv(const std::vector<double>& loss, const std::string& path);

LossConfig loss_config_for(const ModelConfig& cfg);

}  // namespace hyperace
