#include <doctest.h>

#include "helpers.hpp"
#include "hyperace/nn.hpp"
#include "reference/reference.hpp"

using namespace hyperace;
using namespace hyperace::testing;

namespace {

void check_budget(Layer& l, const FeatureShape& in) {
  l.init(1);
  Rng rng(2);
  Tensor x = random_tensor({1, in.c, in.h, in.w}, rng);
  FlopCounter fc;
  Tensor y = l.forward(x);
  const Budget b = l.budget(in);
  CHECK(fc.flops() == b.flops);
  CHECK(l.param_count() == b.params);
  const FeatureShape out = l.output_shape(in);
  CHECK(y.shape() == Shape{1, out.c, out.h, out.w});
}

double grad_error(Layer& l, const FeatureShape& in, std::uint64_t seed, int per_tensor = 0) {
  l.init(seed);
  Rng rng(seed);
  Tensor x = leaf({2, in.c, in.h, in.w}, rng);
  Tensor r = random_tensor(l.forward(x).shape(), rng);
  auto params = l.parameters();
  params.push_back({"input", x});
  ref::gradcheck_init(l.parameters(), seed);
  auto res = ref::gradcheck([&] { return probe(l.forward(x), r); }, params, per_tensor, seed);
  INFO("worst " << res.worst);
  return res.max_rel_error;
}

}  // namespace

TEST_CASE("1x1 conv budget closed form") {
  ConvBnAct c(16, 32, 1);
  const Budget b = c.budget({16, 8, 8});
  CHECK(c.conv.budget({16, 8, 8}).params == 512);
  CHECK(c.conv.budget({16, 8, 8}).flops == 65536);
  CHECK(b.params == 512 + 64);
}

TEST_CASE("closed-form budgets equal instrumented counts") {
  SUBCASE("conv units") {
    ConvBnAct a(4, 8, 3, 2);
    check_budget(a, {4, 9, 9});
    DSConv d(4, 8, 7, 2);
    check_budget(d, {4, 9, 9});
    Conv2d c(4, 6, 1, 1, 1, true);
    check_budget(c, {4, 5, 5});
  }
  SUBCASE("csp blocks") {
    for (bool ds : {true, false}) {
      Bottleneck b(8, 8, 7, ds);
      check_budget(b, {8, 6, 6});
      C3k k(8, 12, {.n = 2, .use_ds = ds});
      check_budget(k, {8, 6, 6});
      C3k2 k2(8, 16, {.n = 2, .use_ds = ds, .inner = 2});
      check_budget(k2, {8, 6, 6});
      C3k2 plain(8, 16, {.n = 1, .use_ds = ds, .use_c3k = false});
      check_budget(plain, {8, 6, 6});
    }
    SPPF s(8, 8);
    check_budget(s, {8, 6, 6});
  }
}

TEST_CASE("depthwise-separable blocks are lighter than vanilla ones") {
  for (auto make : {+[](bool ds) -> std::unique_ptr<Layer> { return std::make_unique<C3k2>(64, 64, CspConfig{.use_ds = ds}); },
                    +[](bool ds) -> std::unique_ptr<Layer> { return std::make_unique<Bottleneck>(64, 64, 7, ds); }}) {
    const Budget on = make(true)->budget({64, 20, 20}), off = make(false)->budget({64, 20, 20});
    CHECK(on.params < off.params);
    CHECK(on.flops < off.flops);
  }
}

TEST_CASE("non-integral hidden widths are rejected") {
  CHECK_THROWS_AS(C3k(6, 6, {.e = 0.25}), ShapeError);
  CHECK_THROWS_AS(hidden_width("C3k", 3, 0.5), ShapeError);
}

TEST_CASE("training batch norm updates running statistics") {
  BatchNorm2d bn(2);
  bn.init(0);
  Rng rng(1);
  Tensor x = random_tensor({4, 2, 3, 3}, rng, 2.0, 4.0);
  bn.forward(x);
  CHECK(bn.running_mean.data()[0] == 0.0);
  {
    TrainingScope on;
    bn.forward(x);
  }
  CHECK(bn.running_mean.data()[0] == doctest::Approx(0.03 * 3.0).epsilon(0.05));
}

TEST_CASE("initialization depends only on seed and name") {
  C3k2 a(8, 8, {}), b(8, 8, {});
  a.init(4);
  b.init(4);
  auto pa = a.state(), pb = b.state();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(bit_identical(pa[i].tensor, pb[i].tensor));
  }
  b.init(5);
  CHECK_FALSE(bit_identical(a.parameters()[0].tensor, b.parameters()[0].tensor));
}

TEST_CASE("block gradients over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    DSConv dsconv(4, 6, 5, 1 + seed % 2);
    CHECK(grad_error(dsconv, {4, 5, 5}, seed) < 1e-4);
    Bottleneck bottleneck(4, 4, 5, true);
    CHECK(grad_error(bottleneck, {4, 5, 5}, seed) < 1e-4);
    C3k c3k(4, 4, {.n = 1, .use_ds = true, .k = 5});
    CHECK(grad_error(c3k, {4, 4, 4}, seed) < 1e-4);
    C3k2 c3k2(4, 8, {.n = 1, .use_ds = true, .k = 5});
    CHECK(grad_error(c3k2, {4, 4, 4}, seed) < 1e-4);
  }
}

TEST_CASE("vanilla and pooling block gradients") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Bottleneck b(4, 4, 3, false);
    CHECK(grad_error(b, {4, 4, 4}, seed) < 1e-4);
    SPPF s(4, 4, 3);
    CHECK(grad_error(s, {4, 4, 4}, seed) < 1e-4);
  }
}
