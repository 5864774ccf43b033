#include <doctest.h>

#include <numeric>

#include "helpers.hpp"
#include "hyperace/train.hpp"
#include "reference/reference.hpp"

using namespace hyperace;
using namespace hyperace::testing;

namespace {

ModelConfig micro3() {
  auto c = ModelConfig::preset("micro");
  c.num_classes = 3;
  return c;
}

}  // namespace

TEST_CASE("assignment picks one stride band per object") {
  LossConfig cfg;
  cfg.reg_bins = 16;
  cfg.num_classes = 3;
  const std::vector<std::array<std::int64_t, 2>> grids{{8, 8}, {4, 4}, {2, 2}};
  std::vector<std::vector<GtBox>> targets{{{{4, 4, 20, 20}, 0}, {{0, 0, 60, 50}, 1}}};
  auto pos = assign_targets(grids, targets, cfg);
  REQUIRE_FALSE(pos.empty());
  for (const auto& p : pos) {
    if (p.target.cls == 0) CHECK(p.level == 0);
    if (p.target.cls == 1) CHECK(p.level == 1);
    const std::int64_t w = grids[p.level][1];
    const double s = cfg.strides[p.level];
    const double cx = (static_cast<double>(p.cell % w) + 0.5) * s, cy = (static_cast<double>(p.cell / w) + 0.5) * s;
    CHECK(cx > p.target.box.x1);
    CHECK(cx < p.target.box.x2);
    CHECK(cy > p.target.box.y1);
    CHECK(cy < p.target.box.y2);
  }
  // a box too thin to contain any cell center still gets its center cell
  std::vector<std::vector<GtBox>> thin{{{{9, 9, 10, 40}, 2}}};
  CHECK(assign_targets(grids, thin, cfg).size() == 1);
}

TEST_CASE("detection loss gradient matches finite differences") {
  auto cfg = micro3();
  LossConfig lc = loss_config_for(cfg);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::int64_t ch = 4 * lc.reg_bins + lc.num_classes;
    std::vector<Tensor> heads{leaf({2, ch, 8, 8}, rng, -2, 2), leaf({2, ch, 4, 4}, rng, -2, 2),
                              leaf({2, ch, 2, 2}, rng, -2, 2)};
    auto scenes = make_scenes(seed, 2);
    std::vector<std::vector<GtBox>> targets{scenes[0].objects, scenes[1].objects};
    auto res = ref::gradcheck([&] { return detection_loss(heads, targets, lc); },
                              {{"p3", heads[0]}, {"p4", heads[1]}, {"p5", heads[2]}}, 40, seed);
    INFO("worst " << res.worst);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("zero learning rate keeps parameters and loss fixed") {
  Network net(micro3());
  net.init(0);
  std::vector<Tensor> before;
  for (auto& p : net.parameters()) before.push_back(p.tensor.clone());
  TrainOptions o;
  o.steps = 5;
  o.batch = 4;
  o.lr = 0.0;
  o.train_scenes = 4;
  o.eval_scenes = 0;
  auto r = train_toy(net, o);
  auto after = net.parameters();
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(bit_identical(before[i], after[i].tensor));
  REQUIRE(r.loss.size() == 5);
  for (double l : r.loss) CHECK(l == r.loss[0]);
}

TEST_CASE("single-rectangle scenes: loss halves within 500 steps") {
  Network net(micro3());
  net.init(0);
  TrainOptions o;
  o.steps = 500;
  o.batch = 8;
  o.lr = 0.05;
  o.warmup = 20;
  o.eval_scenes = 0;
  o.scenes.min_objects = o.scenes.max_objects = 1;
  o.scenes.shapes = {Shape2d::Rectangle};
  auto r = train_toy(net, o);
  const double head = std::accumulate(r.loss.begin(), r.loss.begin() + 10, 0.0) / 10;
  const double tail = std::accumulate(r.loss.end() - 10, r.loss.end(), 0.0) / 10;
  MESSAGE("initial " << head << " final " << tail);
  CHECK(tail < 0.5 * r.loss.front());
  CHECK(tail < 0.5 * head);
}

TEST_CASE("divergence names the step") {
  Network net(micro3());
  net.init(0);
  TrainOptions o;
  o.steps = 50;
  o.batch = 2;
  o.lr = 1e30;
  o.warmup = 0;
  o.grad_clip = 0;
  o.eval_scenes = 0;
  CHECK_THROWS_WITH(train_toy(net, o), doctest::Contains("non-finite loss at step"));
}

TEST_CASE("training option errors") {
  Network net(ModelConfig::preset("micro"));
  TrainOptions o;
  o.steps = 1;
  CHECK_THROWS_AS(train_toy(net, o), std::invalid_argument);  // 2 classes, 3 shapes
  o.lr = -1;
  CHECK_THROWS_AS(train_toy(net, o), std::invalid_argument);
}

TEST_CASE("evaluation with nothing above the threshold") {
  Network net(micro3());
  net.init(0);
  auto scenes = make_scenes(1, 4);
  auto e = evaluate(net, scenes, 0.999, 0.5);
  CHECK(e.true_positives == 0);
  CHECK(e.ground_truth > 0);
  CHECK(e.recall == 0.0);
}
