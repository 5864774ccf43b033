#include "hyperace/detect.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <json.hpp>

namespace hyperace {

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<Detection> decode(const std::vector<Tensor>& heads, const DecodeOptions& opt, std::int64_t index) {
  if (heads.size() != opt.strides.size()) {
    throw ShapeError("decode", std::to_string(heads.size()) + " head maps for " + std::to_string(opt.strides.size()) +
                                   " strides");
  }
  const std::int64_t R = opt.reg_bins, nc = opt.num_classes, ch = 4 * R + nc;
  std::vector<Detection> out;
  std::vector<double> p(R);
  for (std::size_t lvl = 0; lvl < heads.size(); ++lvl) {
    const Tensor& t = heads[lvl];
    if (t.rank() != 4 || t.dim(1) != ch) {
      throw ShapeError("decode", "head map must have " + std::to_string(ch) + " channels (axis 1), got " +
                                     to_string(t.shape()));
    }
    if (index < 0 || index >= t.dim(0)) throw ShapeError("decode", "image index out of range");
    const std::int64_t H = t.dim(2), W = t.dim(3), hw = H * W;
    const double s = opt.strides[lvl];
    const double* base = t.data().data() + index * ch * hw;
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t x = 0; x < W; ++x) {
        const std::int64_t cell = y * W + x;
        int best = 0;
        double best_logit = base[(4 * R) * hw + cell];
        for (std::int64_t c = 1; c < nc; ++c) {
          const double v = base[(4 * R + c) * hw + cell];
          if (v > best_logit) best_logit = v, best = static_cast<int>(c);
        }
        const double score = 1.0 / (1.0 + std::exp(-best_logit));
        if (!(score >= opt.conf_threshold)) continue;
        std::array<double, 4> d{};
        for (int side = 0; side < 4; ++side) {
          double mx = -INFINITY;
          for (std::int64_t k = 0; k < R; ++k) mx = std::max(mx, base[(side * R + k) * hw + cell]);
          double total = 0;
          for (std::int64_t k = 0; k < R; ++k) total += p[k] = std::exp(base[(side * R + k) * hw + cell] - mx);
          double e = 0;
          for (std::int64_t k = 0; k < R; ++k) e += static_cast<double>(k) * p[k] / total;
          d[side] = e * s;
        }
        const double cx = (static_cast<double>(x) + 0.5) * s, cy = (static_cast<double>(y) + 0.5) * s;
        Box b{cx - d[0], cy - d[1], cx + d[2], cy + d[3]};
        if (opt.image_width > 0) b.x1 = std::max(b.x1, 0.0), b.x2 = std::min(b.x2, opt.image_width);
        if (opt.image_height > 0) b.y1 = std::max(b.y1, 0.0), b.y2 = std::min(b.y2, opt.image_height);
        if (!(b.x1 < b.x2) || !(b.y1 < b.y2)) continue;
        out.push_back({b, best, score});
      }
    }
  }
  return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<Detection> keep;
  for (std::size_t i : order) {
    const Detection& d = dets[i];
    bool suppressed = false;
    for (const Detection& k : keep) {
      if (k.cls == d.cls && iou(k.box, d.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) keep.push_back(d);
  }
  return keep;
}

void write_json_lines(std::ostream& out, const std::vector<Detection>& dets) {
  for (const auto& d : dets) {
    nlohmann::json j = {{"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}}, {"class", d.cls}, {"score", d.score}};
    out << j.dump() << '\n';
  }
}

}  // namespace hyperace
