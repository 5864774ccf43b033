#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "hyperace/image.hpp"
#include "hyperace/synthetic.hpp"

using namespace hyperace;
using namespace hyperace::testing;

namespace fs = std::filesystem;

TEST_CASE("ppm round trip at 8 bits") {
  Rng rng(1);
  Tensor img({1, 3, 5, 7});
  for (auto& v : img.mutable_data()) v = static_cast<double>(rng.below(256)) / 255.0;
  const auto p = fs::temp_directory_path() / "hyperace_io.ppm";
  write_ppm(img, p.string());
  Tensor back = read_image(p.string());
  CHECK(back.shape() == img.shape());
  CHECK(max_abs_diff(back, img) < 1e-12);
  fs::remove(p);
}

TEST_CASE("raw float round trip") {
  Rng rng(2);
  Tensor img = random_tensor({1, 3, 4, 6}, rng, 0, 1);
  const auto p = fs::temp_directory_path() / "hyperace_io.raw";
  write_raw(img, p.string());
  CHECK(fs::file_size(p) == 4u * 3 * 4 * 6);
  Tensor back = read_image(p.string(), 4, 6);
  CHECK(max_abs_diff(back, img) < 1e-7);
  CHECK_THROWS(read_raw(p.string(), 5, 6));
  fs::remove(p);
}

TEST_CASE("bad images are rejected") {
  const auto p = fs::temp_directory_path() / "hyperace_bad.ppm";
  {
    std::ofstream(p) << "P3\n2 2\n255\n";
  }
  CHECK_THROWS(read_ppm(p.string()));
  {
    std::ofstream(p, std::ios::binary) << "P6\n2 2\n255\nabc";
  }
  CHECK_THROWS(read_ppm(p.string()));
  fs::remove(p);
  CHECK_THROWS(read_ppm("/nonexistent.ppm"));
}

TEST_CASE("padding to a multiple") {
  Tensor img({1, 3, 30, 33}, 0.5);
  Tensor p = pad_to_multiple(img, 32, 0.0);
  CHECK(p.shape() == Shape{1, 3, 32, 64});
  CHECK(p.data()[0] == 0.5);
  CHECK(p.data()[32] == 0.5);
  CHECK(p.data()[33] == 0.0);
  CHECK(p.data()[31 * 64] == 0.0);
}

TEST_CASE("synthetic scenes keep their invariants") {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    auto s = make_scene(seed);
    REQUIRE_FALSE(s.objects.empty());
    CHECK(s.objects.size() <= 3);
    CHECK(s.image.shape() == Shape{1, 3, 64, 64});
    for (double v : s.image.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    for (const auto& o : s.objects) {
      CHECK(o.box.x1 >= 0);
      CHECK(o.box.y1 >= 0);
      CHECK(o.box.x2 <= 64);
      CHECK(o.box.y2 <= 64);
      CHECK(o.box.x1 < o.box.x2);
      CHECK(o.box.y1 < o.box.y2);
      CHECK(o.cls >= 0);
      CHECK(o.cls < kShapeClasses);
    }
  }
  auto a = make_scenes(5, 6), b = make_scenes(5, 6);
  for (int i = 0; i < 6; ++i) CHECK(bit_identical(a[i].image, b[i].image));
  CHECK(bit_identical(a[2].image, make_scene(derive_seed(5, "scene2")).image));
}
