#include "hyperace/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "hyperace/detect.hpp"
#include "hyperace/rng.hpp"

namespace hyperace {

LossConfig loss_config_for(const ModelConfig& cfg) {
  LossConfig l;
  l.reg_bins = cfg.reg_bins;
  l.num_classes = cfg.num_classes;
  l.strides.assign(Network::strides.begin(), Network::strides.end());
  return l;
}

std::vector<Positive> assign_targets(const std::vector<std::array<std::int64_t, 2>>& grid_sizes,
                                     const std::vector<std::vector<GtBox>>& targets, const LossConfig& cfg) {
  if (grid_sizes.size() != cfg.strides.size()) throw ShapeError("assign_targets", "grid count differs from strides");
  std::map<std::tuple<std::int64_t, int, std::int64_t>, Positive> claimed;
  for (std::size_t b = 0; b < targets.size(); ++b) {
    for (const auto& gt : targets[b]) {
      if (!(gt.box.x1 < gt.box.x2 && gt.box.y1 < gt.box.y2)) throw std::invalid_argument("assign_targets: empty box");
      if (gt.cls < 0 || gt.cls >= cfg.num_classes) throw std::invalid_argument("assign_targets: class out of range");
      const double m = std::max(gt.box.width(), gt.box.height());
      int level = static_cast<int>(cfg.strides.size()) - 1;
      for (std::size_t l = 0; l < cfg.strides.size(); ++l) {
        if (m <= cfg.band * cfg.strides[l]) {
          level = static_cast<int>(l);
          break;
        }
      }
      const double s = cfg.strides[level];
      const std::int64_t H = grid_sizes[level][0], W = grid_sizes[level][1];
      const double gcx = 0.5 * (gt.box.x1 + gt.box.x2), gcy = 0.5 * (gt.box.y1 + gt.box.y2);
      std::vector<std::int64_t> cells;
      for (std::int64_t y = 0; y < H; ++y) {
        const double cy = (static_cast<double>(y) + 0.5) * s;
        if (!(cy > gt.box.y1 && cy < gt.box.y2) || std::abs(cy - gcy) > cfg.radius * s) continue;
        for (std::int64_t x = 0; x < W; ++x) {
          const double cx = (static_cast<double>(x) + 0.5) * s;
          if (!(cx > gt.box.x1 && cx < gt.box.x2) || std::abs(cx - gcx) > cfg.radius * s) continue;
          cells.push_back(y * W + x);
        }
      }
      if (cells.empty()) {
        const auto x = std::clamp<std::int64_t>(static_cast<std::int64_t>(gcx / s), 0, W - 1);
        const auto y = std::clamp<std::int64_t>(static_cast<std::int64_t>(gcy / s), 0, H - 1);
        cells.push_back(y * W + x);
      }
      for (auto c : cells) {
        auto key = std::make_tuple(static_cast<std::int64_t>(b), level, c);
        auto it = claimed.find(key);
        if (it == claimed.end() || it->second.target.box.area() > gt.box.area()) {
          claimed[key] = Positive{static_cast<std::int64_t>(b), level, c, gt};
        }
      }
    }
  }
  std::vector<Positive> out;
  out.reserve(claimed.size());
  for (auto& [k, p] : claimed) out.push_back(p);
  return out;
}

namespace {
double bce(double z, double t) { return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z))); }
double sigm(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

struct SideTerms {
  std::array<double, 4> d{}, t{};
  double l1 = 0, iou = 0;
  std::array<double, 4> grad_iou{};  // d IoU / d d_j
};

// Box in stride units relative to the cell center: (-l, -t, r, b).
SideTerms side_terms(const std::array<double, 4>& d, const std::array<double, 4>& t) {
  SideTerms s;
  s.d = d;
  s.t = t;
  for (int j = 0; j < 4; ++j) s.l1 += std::abs(d[j] - t[j]);
  const double iw = std::min(d[2], t[2]) - std::max(-d[0], -t[0]);
  const double ih = std::min(d[3], t[3]) - std::max(-d[1], -t[1]);
  if (iw <= 0 || ih <= 0) return s;
  const double inter = iw * ih;
  const double ap = (d[0] + d[2]) * (d[1] + d[3]);
  const double ag = (t[0] + t[2]) * (t[1] + t[3]);
  const double uni = ap + ag - inter;
  if (uni <= 0) return s;
  s.iou = inter / uni;
  const std::array<double, 4> di{ih * (-d[0] > -t[0] ? 1.0 : 0.0), iw * (-d[1] > -t[1] ? 1.0 : 0.0),
                                 ih * (d[2] < t[2] ? 1.0 : 0.0), iw * (d[3] < t[3] ? 1.0 : 0.0)};
  const std::array<double, 4> da{d[1] + d[3], d[0] + d[2], d[1] + d[3], d[0] + d[2]};
  for (int j = 0; j < 4; ++j) s.grad_iou[j] = (di[j] * uni - inter * (da[j] - di[j])) / (uni * uni);
  return s;
}

struct LossWork {
  std::vector<Positive> pos;
  // per level, per (image, cell): assigned class or -1
  std::vector<std::vector<int>> cls_target;
};
}  // namespace

Tensor detection_loss(const std::vector<Tensor>& heads, const std::vector<std::vector<GtBox>>& targets,
                      const LossConfig& cfg, LossBreakdown* parts) {
  if (heads.size() != cfg.strides.size()) throw ShapeError("detection_loss", "head count differs from strides");
  const std::int64_t R = cfg.reg_bins, nc = cfg.num_classes, ch = 4 * R + nc;
  const std::int64_t B = static_cast<std::int64_t>(targets.size());
  std::vector<std::array<std::int64_t, 2>> grids;
  for (const auto& h : heads) {
    if (h.rank() != 4 || h.dim(0) != B || h.dim(1) != ch) {
      throw ShapeError("detection_loss", "head map must be [" + std::to_string(B) + "," + std::to_string(ch) +
                                             ",H,W], got " + to_string(h.shape()));
    }
    grids.push_back({h.dim(2), h.dim(3)});
  }
  auto work = std::make_shared<LossWork>();
  work->pos = assign_targets(grids, targets, cfg);
  for (const auto& g : grids) work->cls_target.emplace_back(static_cast<std::size_t>(B * g[0] * g[1]), -1);
  for (const auto& p : work->pos) {
    const auto hw = grids[p.level][0] * grids[p.level][1];
    work->cls_target[p.level][p.image * hw + p.cell] = p.target.cls;
  }
  const double norm = std::max<double>(1.0, static_cast<double>(work->pos.size()));

  auto expected = [R](const double* base, std::int64_t hw, std::int64_t cell, int side, std::vector<double>& p) {
    double mx = -INFINITY;
    for (std::int64_t k = 0; k < R; ++k) mx = std::max(mx, base[(side * R + k) * hw + cell]);
    double total = 0;
    for (std::int64_t k = 0; k < R; ++k) total += p[k] = std::exp(base[(side * R + k) * hw + cell] - mx);
    double e = 0;
    for (std::int64_t k = 0; k < R; ++k) {
      p[k] /= total;
      e += static_cast<double>(k) * p[k];
    }
    return e;
  };
  auto target_sides = [&cfg, R](const Positive& p, std::int64_t W) {
    const double s = cfg.strides[p.level];
    const double cx = (static_cast<double>(p.cell % W) + 0.5) * s, cy = (static_cast<double>(p.cell / W) + 0.5) * s;
    const Box& b = p.target.box;
    std::array<double, 4> t{(cx - b.x1) / s, (cy - b.y1) / s, (b.x2 - cx) / s, (b.y2 - cy) / s};
    for (auto& v : t) v = std::clamp(v, 0.0, static_cast<double>(R - 1) - 1e-3);
    return t;
  };

  double cls_sum = 0, l1_sum = 0, iou_sum = 0;
  for (std::size_t l = 0; l < heads.size(); ++l) {
    const std::int64_t hw = grids[l][0] * grids[l][1];
    const double* data = heads[l].data().data();
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t c = 0; c < nc; ++c) {
        const double* z = data + (b * ch + 4 * R + c) * hw;
        const int* tgt = work->cls_target[l].data() + b * hw;
        for (std::int64_t i = 0; i < hw; ++i) cls_sum += bce(z[i], tgt[i] == c ? 1.0 : 0.0);
      }
    }
  }
  std::vector<double> prob(R);
  for (const auto& p : work->pos) {
    const std::int64_t W = grids[p.level][1], hw = grids[p.level][0] * W;
    const double* base = heads[p.level].data().data() + p.image * ch * hw;
    std::array<double, 4> d{};
    for (int j = 0; j < 4; ++j) d[j] = expected(base, hw, p.cell, j, prob);
    SideTerms st = side_terms(d, target_sides(p, W));
    l1_sum += st.l1;
    iou_sum += 1.0 - st.iou;
  }
  const double total = (cfg.w_cls * cls_sum + cfg.w_l1 * l1_sum + cfg.w_iou * iou_sum) / norm;
  if (parts) *parts = {cls_sum / norm, l1_sum / norm, iou_sum / norm, static_cast<int>(work->pos.size())};

  bool track = false;
  if (active_tape())
    for (const auto& h : heads) track = track || h.requires_grad();
  Tensor out = Tensor::scalar(total);
  if (!track) return out;
  out.set_requires_grad(true);
  std::vector<std::shared_ptr<TensorImpl>> ins;
  for (const auto& h : heads) ins.push_back(h.impl());
  active_tape()->record(out.impl(), [ins, oi = out.impl().get(), work, grids, cfg, norm, R, nc, ch, B, expected,
                                     target_sides]() {
    const double g = oi->grad[0] / norm;
    for (std::size_t l = 0; l < ins.size(); ++l) {
      if (!ins[l]->requires_grad) continue;
      ins[l]->ensure_grad();
      const std::int64_t hw = grids[l][0] * grids[l][1];
      const double* data = ins[l]->data.data();
      double* grad = ins[l]->grad.data();
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = 0; c < nc; ++c) {
          const std::int64_t off = (b * ch + 4 * R + c) * hw;
          const int* tgt = work->cls_target[l].data() + b * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            grad[off + i] += g * cfg.w_cls * (sigm(data[off + i]) - (tgt[i] == c ? 1.0 : 0.0));
          }
        }
      }
    }
    std::vector<double> prob(R);
    for (const auto& p : work->pos) {
      auto& in = ins[p.level];
      if (!in->requires_grad) continue;
      const std::int64_t W = grids[p.level][1], hw = grids[p.level][0] * W;
      const double* base = in->data.data() + p.image * ch * hw;
      double* gbase = in->grad.data() + p.image * ch * hw;
      std::array<std::vector<double>, 4> probs;
      std::array<double, 4> d{};
      for (int j = 0; j < 4; ++j) {
        d[j] = expected(base, hw, p.cell, j, prob);
        probs[j] = prob;
      }
      SideTerms st = side_terms(d, target_sides(p, W));
      for (int j = 0; j < 4; ++j) {
        const double diff = d[j] - st.t[j];
        const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
        const double dd = g * (cfg.w_l1 * sign - cfg.w_iou * st.grad_iou[j]);
        for (std::int64_t k = 0; k < R; ++k) {
          gbase[(j * R + k) * hw + p.cell] += dd * probs[j][k] * (static_cast<double>(k) - d[j]);
        }
      }
    }
  });
  return out;
}

// ---- optimizer -------------------------------------------------------------

Sgd::Sgd(std::vector<NamedTensor> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params_) velocity_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
}

double Sgd::step(double lr, double clip_norm) {
  double sq = 0;
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  const double k = (clip_norm > 0 && norm > clip_norm) ? clip_norm / norm : 1.0;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    if (!t.has_grad()) continue;
    const bool decay = t.rank() >= 2;
    auto w = t.mutable_data();
    const auto g = t.grad();
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = k * g[j] + (decay ? weight_decay_ * w[j] : 0.0);
      v[j] = momentum_ * v[j] + gj;
      w[j] -= lr * (gj + momentum_ * v[j]);
    }
  }
  return norm;
}

// ---- evaluation ------------------------------------------------------------

EvalResult evaluate(Network& net, const std::vector<SyntheticScene>& scenes, double conf, double nms_iou,
                    double match_iou, int batch) {
  EvalResult r;
  const auto& mc = net.config();
  DecodeOptions opt;
  opt.reg_bins = mc.reg_bins;
  opt.num_classes = mc.num_classes;
  opt.conf_threshold = conf;
  opt.strides.assign(Network::strides.begin(), Network::strides.end());
  TrainingScope eval_mode(false);
  for (std::size_t start = 0; start < scenes.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(scenes.size(), start + static_cast<std::size_t>(batch));
    Tensor img = stack_images(scenes, start, end);
    opt.image_height = static_cast<double>(img.dim(2));
    opt.image_width = static_cast<double>(img.dim(3));
    auto heads = net.detect(img);
    std::vector<Tensor> hv(heads.begin(), heads.end());
    for (std::size_t i = start; i < end; ++i) {
      auto dets = nms(decode(hv, opt, static_cast<std::int64_t>(i - start)), nms_iou);
      const auto& gts = scenes[i].objects;
      std::vector<bool> used(gts.size(), false);
      r.ground_truth += static_cast<int>(gts.size());
      for (const auto& d : dets) {
        int best = -1;
        double best_iou = match_iou;
        for (std::size_t g = 0; g < gts.size(); ++g) {
          if (used[g] || gts[g].cls != d.cls) continue;
          const double v = iou(d.box, gts[g].box);
          if (v >= best_iou) best_iou = v, best = static_cast<int>(g);
        }
        if (best >= 0) {
          used[best] = true;
          ++r.true_positives;
        } else {
          ++r.false_positives;
        }
      }
    }
  }
  r.recall = r.ground_truth ? static_cast<double>(r.true_positives) / r.ground_truth : 0.0;
  const int n = r.true_positives + r.false_positives;
  r.precision = n ? static_cast<double>(r.true_positives) / n : 0.0;
  return r;
}

// ---- training --------------------------------------------------------------

TrainResult train_toy(Network& net, const TrainOptions& opt, const std::function<void(const std::string&)>& log) {
  if (opt.steps < 0 || opt.batch < 1) throw std::invalid_argument("train: steps must be >= 0 and batch >= 1");
  if (opt.lr < 0) throw std::invalid_argument("train: learning rate must be >= 0");
  if (opt.scenes.size % 32) throw std::invalid_argument("train: scene size must be a multiple of 32");
  const LossConfig lc = loss_config_for(net.config());
  for (auto s : opt.scenes.shapes) {
    if (static_cast<int>(s) >= lc.num_classes) throw std::invalid_argument("train: model has too few classes");
  }
  auto say = [&](const std::string& m) {
    if (log) log(m);
  };
  const auto t0 = std::chrono::steady_clock::now();
  Sgd sgd(net.parameters(), opt.momentum, opt.weight_decay);
  std::vector<SyntheticScene> fixed;
  if (opt.train_scenes > 0) fixed = make_scenes(opt.seed, opt.train_scenes, opt.scenes);
  std::vector<SyntheticScene> held_out;
  if (opt.eval_scenes > 0) held_out = make_scenes(opt.eval_seed, opt.eval_scenes, opt.scenes);

  TrainResult res;
  for (int step = 0; step < opt.steps; ++step) {
    std::vector<SyntheticScene> batch;
    if (!fixed.empty()) {
      for (int i = 0; i < opt.batch; ++i) batch.push_back(fixed[(static_cast<std::size_t>(step) * opt.batch + i) % fixed.size()]);
    } else {
      batch = make_scenes(derive_seed(opt.seed, "step" + std::to_string(step)), opt.batch, opt.scenes);
    }
    std::vector<std::vector<GtBox>> targets;
    for (const auto& s : batch) targets.push_back(s.objects);
    Tensor img = stack_images(batch, 0, batch.size());

    Tape tape;
    Tensor loss;
    LossBreakdown parts;
    {
      TapeScope scope(tape);
      TrainingScope train_mode(true);
      auto heads = net.detect(img);
      loss = detection_loss(std::vector<Tensor>(heads.begin(), heads.end()), targets, lc, &parts);
    }
    const double lv = loss.item();
    if (!std::isfinite(lv)) throw std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step));
    net.zero_grad();
    tape.backward(loss);
    tape.clear();

    double lr = opt.lr;
    if (step < opt.warmup) {
      lr *= static_cast<double>(step + 1) / opt.warmup;
    } else {
      const double span = std::max(1, opt.steps - opt.warmup);
      const double f = static_cast<double>(step - opt.warmup) / span;
      lr *= opt.final_lr_ratio + (1 - opt.final_lr_ratio) * 0.5 * (1 + std::cos(M_PI * f));
    }
    const double gnorm = sgd.step(lr, opt.grad_clip);
    res.loss.push_back(lv);
    if (step % 20 == 0 || step + 1 == opt.steps) {
      std::ostringstream os;
      os << "step " << step << " loss " << lv << " (cls " << parts.cls << " l1 " << parts.l1 << " iou " << parts.iou
         << " pos " << parts.positives << ") lr " << lr << " |g| " << gnorm;
      say(os.str());
    }
    if (opt.eval_every > 0 && (step + 1) % opt.eval_every == 0 && step + 1 < opt.steps && !held_out.empty()) {
      EvalResult e = evaluate(net, held_out, opt.conf, opt.nms_iou);
      res.evals.emplace_back(step + 1, e);
      std::ostringstream os;
      os << "eval step " << step + 1 << " recall " << e.recall << " precision " << e.precision;
      say(os.str());
      if (res.steps_to_recall < 0 && e.recall >= opt.recall_target) res.steps_to_recall = step + 1;
    }
  }
  if (!held_out.empty()) {
    res.final_eval = evaluate(net, held_out, opt.conf, opt.nms_iou);
    res.evals.emplace_back(opt.steps, res.final_eval);
    if (res.steps_to_recall < 0 && res.final_eval.recall >= opt.recall_target) res.steps_to_recall = opt.steps;
    std::ostringstream os;
    os << "final recall " << res.final_eval.recall << " precision " << res.final_eval.precision;
    say(os.str());
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

void write_loss_csv(const std::vector<double>& loss, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write loss trace '" + path + "'");
  out << "step,loss\n";
  out.precision(17);
  for (std::size_t i = 0; i < loss.size(); ++i) out << i << ',' << loss[i] << '\n';
}

}  // namespace hyperace
