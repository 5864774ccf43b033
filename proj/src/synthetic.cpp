#include "hyperace/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "hyperace/parallel.hpp"
#include "hyperace/rng.hpp"

namespace hyperace {

namespace {
bool inside(Shape2d s, const Box& b, double px, double py) {
  switch (s) {
    case Shape2d::Rectangle:
      return px >= b.x1 && px <= b.x2 && py >= b.y1 && py <= b.y2;
    case Shape2d::Ellipse: {
      const double cx = 0.5 * (b.x1 + b.x2), cy = 0.5 * (b.y1 + b.y2);
      const double rx = 0.5 * b.width(), ry = 0.5 * b.height();
      const double dx = (px - cx) / rx, dy = (py - cy) / ry;
      return dx * dx + dy * dy <= 1.0;
    }
    case Shape2d::Triangle: {
      if (py < b.y1 || py > b.y2) return false;
      const double t = (py - b.y1) / b.height();  // 0 at the apex, 1 at the base
      const double cx = 0.5 * (b.x1 + b.x2), half = 0.5 * b.width() * t;
      return px >= cx - half && px <= cx + half;
    }
  }
  return false;
}

double overlap_fraction(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  return iw * ih / std::min(a.area(), b.area());
}
}  // namespace

SyntheticScene make_scene(std::uint64_t seed, const SceneOptions& opt) {
  if (opt.size < 8) throw std::invalid_argument("scene size must be >= 8");
  if (opt.min_objects < 1 || opt.max_objects < opt.min_objects) throw std::invalid_argument("bad object count range");
  if (opt.shapes.empty()) throw std::invalid_argument("no shape classes enabled");
  if (!(opt.min_extent > 0 && opt.min_extent <= opt.max_extent && opt.max_extent <= 1)) {
    throw std::invalid_argument("bad object extent range");
  }
  Rng rng(seed);
  const std::int64_t S = opt.size;
  std::array<double, 3> bg{rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
  SyntheticScene scene;
  scene.image = Tensor({1, 3, S, S});
  auto px = scene.image.mutable_data();
  for (int c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < S * S; ++i) px[c * S * S + i] = bg[c];

  const int want = opt.min_objects + static_cast<int>(rng.below(opt.max_objects - opt.min_objects + 1));
  const auto lo = std::max<std::int64_t>(2, std::llround(opt.min_extent * S));
  const auto hi = std::max<std::int64_t>(lo, std::llround(opt.max_extent * S));
  for (int attempt = 0; attempt < 200 && static_cast<int>(scene.objects.size()) < want; ++attempt) {
    const std::int64_t w = lo + static_cast<std::int64_t>(rng.below(hi - lo + 1));
    const std::int64_t h = lo + static_cast<std::int64_t>(rng.below(hi - lo + 1));
    const std::int64_t x = static_cast<std::int64_t>(rng.below(S - w + 1));
    const std::int64_t y = static_cast<std::int64_t>(rng.below(S - h + 1));
    Box b{static_cast<double>(x), static_cast<double>(y), static_cast<double>(x + w), static_cast<double>(y + h)};
    bool clash = false;
    for (const auto& o : scene.objects) clash = clash || overlap_fraction(o.box, b) > opt.max_overlap;
    if (clash) continue;
    const Shape2d shape = opt.shapes[rng.below(opt.shapes.size())];
    std::array<double, 3> color{};
    for (int tries = 0; tries < 100; ++tries) {
      for (auto& c : color) c = rng.uniform();
      double dist = 0;
      for (int c = 0; c < 3; ++c) dist += std::abs(color[c] - bg[c]);
      if (dist > 0.6) break;
    }
    for (std::int64_t yy = y; yy < y + h; ++yy) {
      for (std::int64_t xx = x; xx < x + w; ++xx) {
        if (!inside(shape, b, xx + 0.5, yy + 0.5)) continue;
        for (int c = 0; c < 3; ++c) px[(c * S + yy) * S + xx] = color[c];
      }
    }
    scene.objects.push_back({b, static_cast<int>(shape)});
  }
  if (scene.objects.empty()) throw std::runtime_error("scene generation placed no object");
  for (auto& v : px) v = std::clamp(v + opt.noise * rng.normal(), 0.0, 1.0);
  return scene;
}

std::vector<SyntheticScene> make_scenes(std::uint64_t seed, int count, const SceneOptions& opt) {
  std::vector<SyntheticScene> out(static_cast<std::size_t>(std::max(count, 0)));
  parallel_for(count, [&](std::int64_t i) { out[i] = make_scene(derive_seed(seed, "scene" + std::to_string(i)), opt); });
  return out;
}

Tensor stack_images(const std::vector<SyntheticScene>& scenes, std::size_t begin, std::size_t end) {
  if (begin >= end || end > scenes.size()) throw std::invalid_argument("stack_images: bad range");
  const Shape& s = scenes[begin].image.shape();
  const std::int64_t per = scenes[begin].image.numel();
  Tensor out({static_cast<std::int64_t>(end - begin), s[1], s[2], s[3]});
  auto d = out.mutable_data();
  for (std::size_t i = begin; i < end; ++i) {
    if (scenes[i].image.shape() != s) throw ShapeError("stack_images", "scenes differ in size");
    std::copy(scenes[i].image.data().begin(), scenes[i].image.data().end(), d.begin() + (i - begin) * per);
  }
  return out;
}

}  // namespace hyperace
