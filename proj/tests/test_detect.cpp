#include <doctest.h>

#include <sstream>

#include "helpers.hpp"
#include "hyperace/detect.hpp"
#include "reference/reference.hpp"

using namespace hyperace;
using namespace hyperace::testing;

namespace {

std::vector<Detection> random_dets(Rng& rng, int n, int classes) {
  std::vector<Detection> d;
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(0, 100), y = rng.uniform(0, 100);
    const double w = rng.uniform(2, 40), h = rng.uniform(2, 40);
    // coarse scores so ties occur
    const double s = static_cast<double>(rng.below(20)) / 20.0 + 0.05;
    d.push_back({{x, y, x + w, y + h}, static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))), s});
  }
  return d;
}

bool same(const std::vector<Detection>& a, const std::vector<Detection>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].cls != b[i].cls || a[i].score != b[i].score || a[i].box.x1 != b[i].box.x1 || a[i].box.y1 != b[i].box.y1 ||
        a[i].box.x2 != b[i].box.x2 || a[i].box.y2 != b[i].box.y2)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("iou properties") {
  Rng rng(1);
  for (int t = 0; t < 500; ++t) {
    auto d = random_dets(rng, 2, 1);
    const double ab = iou(d[0].box, d[1].box), ba = iou(d[1].box, d[0].box);
    CHECK(ab == ba);
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    CHECK(iou(d[0].box, d[0].box) == 1.0);
    CHECK(ab == doctest::Approx(ref::iou(d[0].box, d[1].box)).epsilon(1e-14));
  }
  CHECK(iou({0, 0, 0, 0}, {0, 0, 0, 0}) == 0.0);
}

TEST_CASE("nms fixed cases") {
  Detection a{{0, 0, 10, 10}, 0, 0.9}, b{{0, 0, 10, 10}, 0, 0.8};
  CHECK(nms({a}, 0.5).size() == 1);
  auto kept = nms({b, a}, 0.5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == 0.9);
  b.cls = 1;
  CHECK(nms({a, b}, 0.5).size() == 2);
  CHECK(nms({}, 0.5).empty());
}

TEST_CASE("nms matches the brute-force reference") {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    auto d = random_dets(rng, 1 + static_cast<int>(rng.below(60)), 1 + static_cast<int>(rng.below(3)));
    const double thr = rng.uniform(0.1, 0.9);
    auto got = nms(d, thr);
    CHECK(same(got, ref::nms(d, thr)));
    CHECK(same(nms(got, thr), got));
    for (std::size_t i = 1; i < got.size(); ++i) CHECK(got[i - 1].score >= got[i].score);
  }
}

TEST_CASE("decode of silent maps is empty") {
  DecodeOptions opt;
  opt.reg_bins = 4;
  opt.num_classes = 3;
  std::vector<Tensor> heads{Tensor({1, 19, 8, 8}, -1e4), Tensor({1, 19, 4, 4}, -1e4), Tensor({1, 19, 2, 2}, -1e4)};
  CHECK(decode(heads, opt).empty());
  heads.pop_back();
  CHECK_THROWS_AS(decode(heads, opt), ShapeError);
}

TEST_CASE("a single hot cell decodes to one box around its center") {
  DecodeOptions opt;
  opt.reg_bins = 4;
  opt.num_classes = 3;
  std::vector<Tensor> heads{Tensor({1, 19, 8, 8}, -1e4), Tensor({1, 19, 4, 4}, -1e4), Tensor({1, 19, 2, 2}, -1e4)};
  auto d = heads[1].mutable_data();
  const std::int64_t cell = 2 * 4 + 1, hw = 16;
  for (int side = 0; side < 4; ++side) d[(side * 4 + 1) * hw + cell] = 5.0;  // one stride each way
  d[(16 + 2) * hw + cell] = 3.0;
  auto dets = decode(heads, opt);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].cls == 2);
  const double cx = 1.5 * 16, cy = 2.5 * 16;
  CHECK(dets[0].box.x1 == doctest::Approx(cx - 16).epsilon(1e-6));
  CHECK(dets[0].box.y2 == doctest::Approx(cy + 16).epsilon(1e-6));
  CHECK(dets[0].score == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))));
}

TEST_CASE("decode inverts the encoder") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const int R = 16, nc = 3;
    const std::vector<int> strides{8, 16, 32};
    const std::int64_t S = 256;
    std::vector<ref::EncodedObject> objs;
    for (int level = 0; level < 3; ++level) {
      const double s = strides[level];
      // at least one stride wide so the cell center lies inside the box
      const double hi = std::min(static_cast<double>(S), (R - 2) * s);
      const double w = rng.uniform(s, hi), h = rng.uniform(s, hi);
      const double cx = rng.uniform(w / 2, S - w / 2), cy = rng.uniform(h / 2, S - h / 2);
      objs.push_back({{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}, static_cast<int>(rng.below(nc)), level});
    }
    auto heads = ref::encode(objs, {32, 16, 8}, {32, 16, 8}, strides, R, nc);
    DecodeOptions opt;
    opt.num_classes = nc;
    opt.conf_threshold = 0.5;
    auto dets = decode(heads, opt);
    REQUIRE(dets.size() == objs.size());
    for (std::size_t i = 0; i < objs.size(); ++i) {
      CHECK(dets[i].cls == objs[i].cls);
      CHECK(std::abs(dets[i].box.x1 - objs[i].box.x1) < 1.0);
      CHECK(std::abs(dets[i].box.y1 - objs[i].box.y1) < 1.0);
      CHECK(std::abs(dets[i].box.x2 - objs[i].box.x2) < 1.0);
      CHECK(std::abs(dets[i].box.y2 - objs[i].box.y2) < 1.0);
    }
  }
}

TEST_CASE("json lines output") {
  std::ostringstream out;
  write_json_lines(out, {{{1, 2, 3, 4}, 1, 0.5}});
  CHECK(out.str() == "{\"box\":[1.0,2.0,3.0,4.0],\"class\":1,\"score\":0.5}\n");
}
