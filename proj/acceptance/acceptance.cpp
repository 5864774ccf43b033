// One pass/fail line per acceptance criterion. Run with a criterion number
// (1-9) or with no argument for all of them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "hyperace/hypergraph.hpp"
#include "hyperace/model.hpp"
#include "hyperace/profiler.hpp"
#include "hyperace/rng.hpp"
#include "hyperace/train.hpp"
#include "reference/reference.hpp"
#include "reference/suite.hpp"

using namespace hyperace;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Tensor random_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(std::move(s));
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

void widen(AdaptiveHypergraph& a, std::uint64_t seed) {
  a.init(seed);
  Rng rng(seed ^ 0x5eed);
  for (Tensor t : {a.prototypes, a.phi_b}) {
    for (auto& v : t.mutable_data()) v = rng.uniform(-1, 1);
  }
}

struct Outcome {
  bool pass;
  std::string detail;
};

// ---- 1 ---------------------------------------------------------------------
Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  double ahc_err = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    AdaptiveHypergraph a({4, 2, 2});
    widen(a, seed);
    Rng rng(seed);
    Tensor x = random_tensor({4, 4}, rng, -2, 2);
    ref::AhcWeights w{vec(a.prototypes), vec(a.phi_w), vec(a.phi_b), vec(a.w_pre), vec(a.w_e), vec(a.w_v)};
    auto want = ref::ahc_forward(vec(x), 4, 4, 2, 2, w);
    Tensor got = a.forward(x);
    for (std::size_t i = 0; i < want.size(); ++i) ahc_err = std::max(ahc_err, std::abs(got.data()[i] - want[i]));
  }
  double conv_err = 0;
  int shapes = 0;
  Rng rng(101);
  for (; shapes < 150; ++shapes) {
    const std::int64_t g = 1 + static_cast<std::int64_t>(rng.below(3));
    const std::int64_t cin = g * (1 + static_cast<std::int64_t>(rng.below(4)));
    const std::int64_t cout = g * (1 + static_cast<std::int64_t>(rng.below(4)));
    const int k = 1 + 2 * static_cast<int>(rng.below(4));
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int pad = static_cast<int>(rng.below(static_cast<std::uint64_t>(k / 2 + 1)));
    const std::int64_t h = k + static_cast<std::int64_t>(rng.below(8)), w = k + static_cast<std::int64_t>(rng.below(8));
    Tensor x = random_tensor({1 + static_cast<std::int64_t>(rng.below(2)), cin, h, w}, rng);
    Tensor wt = random_tensor({cout, cin / g, k, k}, rng);
    Tensor b = rng.below(2) ? random_tensor({cout}, rng) : Tensor();
    Tensor got = conv2d(x, wt, {stride, pad, static_cast<int>(g)}, b);
    Tensor want = ref::conv2d(x, wt, stride, pad, static_cast<int>(g), b);
    for (std::int64_t i = 0; i < got.numel(); ++i) conv_err = std::max(conv_err, std::abs(got.data()[i] - want.data()[i]));
  }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "ahc max err " << ahc_err << ", conv max err " << conv_err << " over " << shapes << " shapes, " << secs << " s";
  return {ahc_err < 1e-10 && conv_err < 1e-10 && secs < 10, os.str()};
}

// ---- 2 ---------------------------------------------------------------------
Outcome gradient_suite() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::ostringstream os;
  for (const auto& e : ref::gradient_suite(20, 0)) {
    ok = ok && e.max_rel_error < 1e-4;
    os << e.name << " " << e.max_rel_error << (e.max_rel_error < 1e-4 ? "" : " (" + e.worst + ")") << "; ";
  }
  const double secs = seconds_since(t0);
  os << "20 seeds each, " << secs << " s";
  return {ok && secs < 300, os.str()};
}

// ---- 3 ---------------------------------------------------------------------
Outcome participation_normalization() {
  double worst_sum = 0;
  bool in_open_unit = true;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    const std::int64_t n = 2 + static_cast<std::int64_t>(rng.below(64));
    const int heads = 1 + static_cast<int>(rng.below(4));
    const std::int64_t c = heads * (1 + static_cast<std::int64_t>(rng.below(4)));
    const int m = 1 + static_cast<int>(rng.below(8));
    AdaptiveHypergraph a({c, m, heads});
    widen(a, seed);
    Tensor p = a.participation(random_tensor({n, c}, rng, -3, 3));
    for (int j = 0; j < m; ++j) {
      double t = 0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double v = p.data()[i * m + j];
        in_open_unit = in_open_unit && v > 0 && v < 1;
        t += v;
      }
      worst_sum = std::max(worst_sum, std::abs(t - 1));
    }
  }
  double worst_uniform = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    AdaptiveHypergraph a({8, 4, 2});
    widen(a, seed);
    const std::int64_t n = 10 + static_cast<std::int64_t>(seed) * 7;
    Tensor row = random_tensor({1, 8}, rng, -3, 3);
    Tensor p = a.participation(concat(std::vector<Tensor>(static_cast<std::size_t>(n), row), 0));
    for (double v : p.data()) worst_uniform = std::max(worst_uniform, std::abs(v - 1.0 / static_cast<double>(n)));
  }
  std::ostringstream os;
  os << "max |colsum-1| " << worst_sum << ", entries in (0,1): " << (in_open_unit ? "yes" : "no")
     << ", uniform max |a-1/N| " << worst_uniform;
  return {worst_sum <= 1e-9 && in_open_unit && worst_uniform <= 1e-9, os.str()};
}

// ---- 4 ---------------------------------------------------------------------
Outcome permutation_equivariance() {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::int64_t n = 16 + static_cast<std::int64_t>(rng.below(48)), c = 8;
    AdaptiveHypergraph a({c, 4, 2});
    widen(a, seed);
    Tensor x = random_tensor({n, c}, rng);
    std::vector<std::int64_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::int64_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(static_cast<std::uint64_t>(i + 1))]);
    Tensor xp({n, c});
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t k = 0; k < c; ++k) xp.mutable_data()[i * c + k] = x.data()[perm[i] * c + k];
    Tensor y = a.forward(x), yp = a.forward(xp);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t k = 0; k < c; ++k) worst = std::max(worst, std::abs(yp.data()[i * c + k] - y.data()[perm[i] * c + k]));
  }
  std::ostringstream os;
  os << "50 trials, max deviation " << worst;
  return {worst <= 1e-9, os.str()};
}

// ---- 5 ---------------------------------------------------------------------
Outcome budget_ratios() {
  const auto t0 = Clock::now();
  auto checks = reference_checks();
  bool ok = true;
  std::ostringstream os;
  for (const auto& c : checks) {
    ok = ok && c.passed();
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s %.3f/%.3f%s; ", c.name.c_str(), c.value, c.target, c.passed() ? "" : " MISS");
    os << buf;
  }
  os << seconds_since(t0) << " s";
  return {ok, os.str()};
}

// ---- 6 ---------------------------------------------------------------------
Outcome baseline_equivalence() {
  bool ok = true;
  std::ostringstream os;
  for (const char* v : {"n", "micro"}) {
    auto on = ModelConfig::preset(v), off = on;
    off.tunnels = {false, false, false};
    Network a(on), b(off);
    a.init(13);
    b.init(13);
    Rng rng(13);
    Tensor x = random_tensor({2, 3, 128, 96}, rng, 0, 1);
    auto ha = a.detect(x), hb = b.detect(x);
    std::size_t diff = 0;
    for (int i = 0; i < 3; ++i)
      for (std::int64_t k = 0; k < ha[i].numel(); ++k) diff += ha[i].data()[k] != hb[i].data()[k];
    ok = ok && diff == 0;
    os << v << ": " << diff << " differing outputs; ";
  }
  return {ok, os.str()};
}

// ---- 7 ---------------------------------------------------------------------
Outcome toy_learning() {
  auto run = [](bool tunnels, std::ostringstream& os) {
    auto cfg = ModelConfig::preset("n");
    cfg.num_classes = kShapeClasses;
    if (!tunnels) cfg.tunnels = {false, false, false};
    Network net(cfg);
    net.init(0);
    TrainOptions o;
    o.steps = 1500;
    o.lr = 0.05;
    o.eval_every = 100;
    auto r = train_toy(net, o, [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); });
    os << (tunnels ? "fullpad on" : "fullpad off") << ": recall " << r.final_eval.recall << " precision "
       << r.final_eval.precision << " steps-to-recall " << r.steps_to_recall << " in " << r.seconds << " s; ";
    return r;
  };
  std::ostringstream os;
  auto on = run(true, os);
  auto off = run(false, os);
  const bool quality = on.final_eval.recall >= 0.9 && on.final_eval.precision >= 0.8;
  const bool faster = on.steps_to_recall > 0 && (off.steps_to_recall < 0 || on.steps_to_recall <= off.steps_to_recall);
  const bool in_time = on.seconds <= 1800 && off.seconds <= 1800;
  return {quality && faster && in_time, os.str()};
}

// ---- 8 ---------------------------------------------------------------------
Outcome linear_complexity() {
  const std::int64_t C = 64;
  AdaptiveHypergraph a({C, 8, 4});
  a.init(0);
  const std::vector<std::int64_t> sizes{1000, 2000, 4000, 8000};
  std::vector<Tensor> xs;
  for (std::int64_t n : sizes) {
    Rng rng(static_cast<std::uint64_t>(n));
    xs.push_back(random_tensor({n, C}, rng));
    a.convolve(xs.back(), a.participation(xs.back()));  // warm-up
  }
  // sizes interleaved so slow phases of the machine hit all of them alike
  std::vector<double> times(sizes.size(), 1e30);
  for (int rep = 0; rep < 100; ++rep) {
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      const auto t0 = Clock::now();
      Tensor y = a.convolve(xs[i], a.participation(xs[i]));
      times[i] = std::min(times[i], seconds_since(t0));
    }
  }
  std::ostringstream os;
  for (std::size_t i = 0; i < sizes.size(); ++i) os << "N=" << sizes[i] << " " << times[i] * 1e3 << " ms; ";
  double worst = 0;
  for (std::size_t i = 1; i < times.size(); ++i) worst = std::max(worst, times[i] / times[i - 1]);
  os << "max ratio per doubling " << worst;
  return {worst <= 2.2, os.str()};
}

// ---- 9 ---------------------------------------------------------------------
Outcome post_processing() {
  std::size_t mismatches = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    std::vector<Detection> d;
    const int n = 1 + static_cast<int>(rng.below(80));
    for (int i = 0; i < n; ++i) {
      const double x = rng.uniform(0, 200), y = rng.uniform(0, 200);
      d.push_back({{x, y, x + rng.uniform(2, 60), y + rng.uniform(2, 60)}, static_cast<int>(rng.below(3)),
                   static_cast<double>(rng.below(25)) / 25.0 + 0.02});
    }
    const double thr = rng.uniform(0.2, 0.8);
    auto got = nms(d, thr), want = ref::nms(d, thr);
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < got.size(); ++i) {
      same = got[i].cls == want[i].cls && got[i].score == want[i].score && got[i].box.x1 == want[i].box.x1 &&
             got[i].box.y1 == want[i].box.y1 && got[i].box.x2 == want[i].box.x2 && got[i].box.y2 == want[i].box.y2;
    }
    mismatches += !same;
  }
  double worst_px = 0;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    Rng rng(seed);
    const std::vector<int> strides{8, 16, 32};
    std::vector<ref::EncodedObject> objs;
    for (int level = 0; level < 3; ++level) {
      const double s = strides[level];
      const double w = rng.uniform(s, std::min(320.0, 14 * s)), h = rng.uniform(s, std::min(320.0, 14 * s));
      const double cx = rng.uniform(w / 2, 320 - w / 2), cy = rng.uniform(h / 2, 320 - h / 2);
      objs.push_back({{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}, static_cast<int>(rng.below(80)), level});
    }
    auto heads = ref::encode(objs, {40, 20, 10}, {40, 20, 10}, strides, 16, 80);
    DecodeOptions opt;
    opt.conf_threshold = 0.5;
    auto dets = decode(heads, opt);
    if (dets.size() != objs.size()) return {false, "decode returned " + std::to_string(dets.size()) + " boxes"};
    for (std::size_t i = 0; i < objs.size(); ++i) {
      if (dets[i].cls != objs[i].cls) return {false, "class mismatch in round trip"};
      worst_px = std::max({worst_px, std::abs(dets[i].box.x1 - objs[i].box.x1), std::abs(dets[i].box.y1 - objs[i].box.y1),
                           std::abs(dets[i].box.x2 - objs[i].box.x2), std::abs(dets[i].box.y2 - objs[i].box.y2)});
    }
  }
  std::ostringstream os;
  os << "nms mismatches " << mismatches << "/1000, round-trip max error " << worst_px << " px";
  return {mismatches == 0 && worst_px < 1.0, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::function<Outcome()> criteria[] = {oracle_equivalence,    gradient_suite,   participation_normalization,
                                               permutation_equivariance, budget_ratios, baseline_equivalence,
                                               toy_learning,          linear_complexity, post_processing};
  int first = 1, last = 9;
  if (argc > 1) {
    first = last = std::atoi(argv[1]);
    if (first < 1 || first > 9) {
      std::fprintf(stderr, "usage: %s [1-9]\n", argv[0]);
      return 2;
    }
  }
  bool all = true;
  for (int k = first; k <= last; ++k) {
    Outcome o;
    try {
      o = criteria[k - 1]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d: %s: %s\n", k, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
