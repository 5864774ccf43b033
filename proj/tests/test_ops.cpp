#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "hyperace/ops.hpp"
#include "reference/reference.hpp"

using namespace hyperace;
using namespace hyperace::testing;

namespace {
constexpr int kSeeds = 100;

void check_grad(const std::function<Tensor()>& loss, const std::vector<Tensor>& inputs, std::uint64_t seed) {
  std::vector<NamedTensor> named;
  for (std::size_t i = 0; i < inputs.size(); ++i) named.push_back({"in" + std::to_string(i), inputs[i]});
  auto r = ref::gradcheck(loss, named, 0, seed);
  INFO("seed " << seed << " worst " << r.worst);
  CHECK(r.max_rel_error < 1e-4);
}
}  // namespace

TEST_CASE("conv2d matches the loop oracle on random shapes") {
  Rng rng(11);
  for (int t = 0; t < 120; ++t) {
    const int groups_pick = static_cast<int>(rng.below(3));
    const std::int64_t g = groups_pick == 0 ? 1 : (groups_pick == 1 ? 2 : 3);
    const std::int64_t cin = g * (1 + static_cast<std::int64_t>(rng.below(3)));
    const std::int64_t cout = groups_pick == 2 && rng.below(2) ? cin : g * (1 + static_cast<std::int64_t>(rng.below(3)));
    const int k = 1 + 2 * static_cast<int>(rng.below(3));
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int pad = static_cast<int>(rng.below(static_cast<std::uint64_t>(k / 2 + 1)));
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.below(2));
    const std::int64_t h = k + static_cast<std::int64_t>(rng.below(6)), w = k + static_cast<std::int64_t>(rng.below(6));
    Tensor x = random_tensor({n, cin, h, w}, rng);
    Tensor wt = random_tensor({cout, cin / g, k, k}, rng);
    Tensor b = rng.below(2) ? random_tensor({cout}, rng) : Tensor();
    Tensor got = conv2d(x, wt, {stride, pad, static_cast<int>(g)}, b);
    Tensor want = ref::conv2d(x, wt, stride, pad, static_cast<int>(g), b);
    REQUIRE(got.shape() == want.shape());
    CHECK(max_abs_diff(got, want) < 1e-10);
  }
}

TEST_CASE("depthwise fast path matches the loop oracle") {
  Rng rng(5);
  Tensor x = random_tensor({2, 6, 9, 7}, rng);
  Tensor w = random_tensor({6, 1, 7, 7}, rng);
  CHECK(max_abs_diff(conv2d(x, w, {1, 3, 6}), ref::conv2d(x, w, 1, 3, 6)) < 1e-10);
  CHECK(max_abs_diff(conv2d(x, w, {2, 3, 6}), ref::conv2d(x, w, 2, 3, 6)) < 1e-10);
}

TEST_CASE("matmul matches the triple loop") {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto p = 1 + static_cast<std::int64_t>(rng.below(9)), q = 1 + static_cast<std::int64_t>(rng.below(9)),
               r = 1 + static_cast<std::int64_t>(rng.below(9));
    Tensor a = random_tensor({p, q}, rng), b = random_tensor({q, r}, rng);
    CHECK(max_abs_diff(matmul(a, b), ref::matmul(a, b)) < 1e-12);
  }
}

TEST_CASE("shape errors name the operation") {
  Tensor a({2, 3}), b({4, 5});
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  CHECK_THROWS_WITH(add(a, b), doctest::Contains("add"));
  CHECK_THROWS_AS(conv2d(Tensor({1, 3, 4, 4}), Tensor({2, 2, 3, 3})), ShapeError);
  CHECK_THROWS_AS(concat({Tensor({1, 2, 3, 3}), Tensor({1, 2, 4, 3})}, 1), ShapeError);
  CHECK_THROWS_AS(reshape(a, {5}), ShapeError);
}

TEST_CASE("backward rejects non-scalar and foreign losses") {
  Tape tape;
  TapeScope scope(tape);
  Rng rng(1);
  Tensor x = leaf({2, 2}, rng);
  Tensor y = mul_const(x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
  CHECK_THROWS_AS(tape.backward(Tensor::scalar(1.0)), std::invalid_argument);
}

TEST_CASE("flop counter follows the documented convention") {
  Rng rng(2);
  Tensor x = random_tensor({1, 16, 8, 8}, rng), w = random_tensor({32, 16, 1, 1}, rng);
  {
    FlopCounter fc;
    conv2d(x, w);
    CHECK(fc.flops() == 65536);
  }
  {
    FlopCounter fc;
    matmul(random_tensor({3, 4}, rng), random_tensor({4, 5}, rng));
    CHECK(fc.flops() == 2 * 3 * 4 * 5);
  }
  {
    FlopCounter fc;
    silu(x);
    concat({x, x}, 1);
    reshape(x, {16, 64});
    CHECK(fc.flops() == static_cast<std::uint64_t>(x.numel()));
  }
  {
    FlopCounter outer;
    {
      FlopCounter inner;
      sigmoid(x);
      CHECK(inner.flops() == 1024);
    }
    CHECK(outer.flops() == 1024);
  }
  FlopCounter fc;
  CHECK(resize(x, 8, 8).impl() == x.impl());
  CHECK(fc.flops() == 0);
}

TEST_CASE("resize modes") {
  Tensor x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor up = resize(x, 4, 4, ResizeMode::Nearest);
  CHECK(up.data()[0] == 1);
  CHECK(up.data()[3] == 2);
  CHECK(up.data()[15] == 4);
  Tensor down = resize(up, 1, 1, ResizeMode::Area);
  CHECK(down.item() == doctest::Approx(2.5));
  CHECK_THROWS_AS(resize(x, 3, 3), ShapeError);
}

TEST_CASE("softmax sums to one along the axis") {
  Rng rng(8);
  Tensor s = softmax(random_tensor({5, 3}, rng, -30, 30), 0);
  for (int j = 0; j < 3; ++j) {
    double t = 0;
    for (int i = 0; i < 5; ++i) t += s.data()[i * 3 + j];
    CHECK(t == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("conv2d gradients over 100 seeds") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    const int g = seed % 3 == 0 ? 2 : 1;
    const int k = seed % 2 ? 3 : 1;
    Tensor x = leaf({2, 2 * g, 5, 4}, rng), w = leaf({2 * g, 2, k, k}, rng), b = leaf({2 * g}, rng);
    const int stride = seed % 4 == 1 ? 2 : 1;
    Tensor r2 = random_tensor(conv2d(x, w, {stride, k / 2, g}, b).shape(), rng);
    check_grad([&] { return probe(conv2d(x, w, {stride, k / 2, g}, b), r2); }, {x, w, b}, seed);
  }
}

TEST_CASE("depthwise conv gradients over 100 seeds") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(1000 + static_cast<std::uint64_t>(seed));
    Tensor x = leaf({1, 3, 6, 5}, rng), w = leaf({3, 1, 3, 3}, rng);
    const int stride = 1 + seed % 2;
    Tensor r = random_tensor(conv2d(x, w, {stride, 1, 3}).shape(), rng);
    check_grad([&] { return probe(conv2d(x, w, {stride, 1, 3}), r); }, {x, w}, seed);
  }
}

TEST_CASE("matmul, transpose and elementwise gradients over 100 seeds") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(2000 + static_cast<std::uint64_t>(seed));
    Tensor a = leaf({3, 4}, rng), b = leaf({4, 2}, rng), c = leaf({3, 2}, rng), bias = leaf({2}, rng);
    Tensor g = leaf({1}, rng);
    Tensor r = random_tensor({3, 2}, rng);
    check_grad(
        [&] {
          Tensor m = add_rowvec(matmul(a, b), bias);
          Tensor e = add(mul(m, c), scale(transpose(transpose(c)), g));
          return probe(mul_const(e, 0.7), r);
        },
        {a, b, c, bias, g}, seed);
  }
}

TEST_CASE("activation and softmax gradients over 100 seeds") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(3000 + static_cast<std::uint64_t>(seed));
    Tensor x = leaf({4, 3}, rng, -3, 3);
    Tensor r = random_tensor({4, 3}, rng);
    const int axis = seed % 2;
    check_grad([&] { return probe(add(softmax(silu(x), axis), sigmoid(x)), r); }, {x}, seed);
  }
}

TEST_CASE("batch norm gradients over 100 seeds") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(4000 + static_cast<std::uint64_t>(seed));
    Tensor x = leaf({3, 2, 3, 3}, rng), sc = leaf({2}, rng, 0.5, 1.5), sh = leaf({2}, rng);
    Tensor rm = random_tensor({2}, rng), rv = random_tensor({2}, rng, 0.5, 2.0);
    Tensor r = random_tensor({3, 2, 3, 3}, rng);
    check_grad([&] { return probe(batchnorm(x, sc, sh, rm, rv, 1e-3), r); }, {x, sc, sh}, seed);
    std::vector<double> bm, bv;
    check_grad([&] { return probe(batchnorm_train(x, sc, sh, 1e-3, bm, bv), r); }, {x, sc, sh}, seed);
  }
}

TEST_CASE("pooling, resize, concat and split gradients over 100 seeds") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(5000 + static_cast<std::uint64_t>(seed));
    Tensor x = leaf({1, 2, 4, 4}, rng), y = leaf({1, 3, 4, 4}, rng);
    Tensor r = random_tensor({1, 5, 4, 4}, rng), rp = random_tensor({1, 2}, rng);
    check_grad(
        [&] {
          Tensor pooled = max_pool2d(x, 3, 1, 1);
          Tensor down = resize(y, 2, 2, ResizeMode::Area);
          Tensor up = resize(down, 4, 4, ResizeMode::Nearest);
          Tensor cat = concat({pooled, up}, 1);
          auto parts = split(cat, {2, 3}, 1);
          Tensor g = add(global_avg_pool(parts[0]), global_max_pool(x));
          return add(probe(cat, r), add(probe(g, rp), mean(parts[1])));
        },
        {x, y}, seed);
  }
}
