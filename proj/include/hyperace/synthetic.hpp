#pragma once

#include <cstdint>
#include <vector>

#include "hyperace/detect.hpp"
#include "hyperace/tensor.hpp"

namespace hyperace {

enum class Shape2d { Rectangle = 0, Ellipse = 1, Triangle = 2 };
constexpr int kShapeClasses = 3;

struct GtBox {
  Box box;
  int cls = 0;
};

struct SyntheticScene {
  Tensor image;  // [1, 3, size, size] in [0, 1]
  std::vector<GtBox> objects;
};

struct SceneOptions {
  std::int64_t size = 64;
  int min_objects = 1;
  int max_objects = 3;
  double min_extent = 0.2;   // object side as a fraction of the image
  double max_extent = 0.55;
  double noise = 0.04;       // per-pixel Gaussian std
  double max_overlap = 0.15;  // largest intersection over the smaller box
  std::vector<Shape2d> shapes{Shape2d::Rectangle, Shape2d::Ellipse, Shape2d::Triangle};
};

/// Colored filled shapes over a noisy flat background; the class is the shape.
SyntheticScene make_scene(std::uint64_t seed, const SceneOptions& opt = {});
/// Scene i uses a seed derived from (seed, i); generation runs in parallel.
std::vector<SyntheticScene> make_scenes(std::uint64_t seed, int count, const SceneOptions& opt = {});

/// Stacks scene images into [N, 3, S, S].
Tensor stack_images(const std::vector<SyntheticScene>& scenes, std::size_t begin, std::size_t end);

}  // namespace hyperace
