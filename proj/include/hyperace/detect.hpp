#pragma once

#include <algorithm>
#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "hyperace/tensor.hpp"

namespace hyperace {

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
};

struct Detection {
  Box box;
  int cls = 0;
  double score = 0;
};

/// Intersection over union; 0 when the union is empty.
double iou(const Box& a, const Box& b);

struct DecodeOptions {
  int reg_bins = 16;
  int num_classes = 80;
  double conf_threshold = 0.25;
  std::vector<int> strides{8, 16, 32};
  // Clip boxes to this extent when positive.
  double image_width = 0, image_height = 0;
};

/// Turns head maps [N, 4*reg_bins + classes, H, W] of image `index` into
/// detections. A cell scores sigmoid(best class logit); its box spans the
/// expected bin distance times the stride on each side of the cell center.
std::vector<Detection> decode(const std::vector<Tensor>& heads, const DecodeOptions& opt, std::int64_t index = 0);

/// Greedy per-class suppression. Candidates are visited by descending score
/// (ties by input order); output is in that order.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

/// One JSON object per line: {"box":[x1,y1,x2,y2],"class":c,"score":s}.
void write_json_lines(std::ostream& out, const std::vector<Detection>& dets);

}  // namespace hyperace
