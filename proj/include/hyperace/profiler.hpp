#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hyperace/model.hpp"

namespace hyperace {

/// FLOPs are 2 x multiply-accumulates. Pooling, activation, normalization,
/// softmax, resize and elementwise ops count 1 per output element.
struct BudgetReport {
  std::int64_t height = 640, width = 640;
  std::vector<std::pair<std::string, Budget>> parts;
  Budget total;
};

BudgetReport count_budget(const Network& net, std::int64_t height = 640, std::int64_t width = 640);
BudgetReport count_budget(const ModelConfig& cfg, std::int64_t height = 640, std::int64_t width = 640);

std::string report_json(const BudgetReport& r, int indent = 2);
std::string report_text(const BudgetReport& r);

/// One published budget figure and how close our configuration lands.
struct BudgetCheck {
  std::string name;
  double value = 0, target = 0;
  double tolerance = 0;
  bool relative = true;  // tolerance is a fraction of target, else absolute
  bool passed() const;
};

/// Absolute N/S totals (+-15%), DS on/off reductions for N and S (+-5 points),
/// and the S hyperedge sweep deltas from M = 2 to 16 (+-20% of the delta).
std::vector<BudgetCheck> reference_checks();
std::string checks_text(const std::vector<BudgetCheck>& checks);
std::string checks_json(const std::vector<BudgetCheck>& checks, int indent = 2);

struct ParticipationExport {
  std::string layer;
  Tensor matrix;  // [N, M], vertex-major
  std::int64_t grid_h = 0, grid_w = 0;
  int stride = 16;
  struct Vertex {
    int rank = 0;
    std::int64_t vertex = 0;
    double x = 0, y = 0;  // pixel center in input coordinates
    double weight = 0;
  };
  std::vector<std::vector<Vertex>> top;  // per hyperedge, descending weight
};

/// Participation matrix of the named C3AH layer for image [1, 3, H, W].
/// Throws invalid_argument listing available layers when `layer` is unknown.
ParticipationExport export_participation(Network& net, const Tensor& image, const std::string& layer, int top_k = 5);

/// "vertex,y,x,e0,e1,..." with grid coordinates.
void write_participation_csv(std::ostream& out, const ParticipationExport& e);
/// "hyperedge,rank,vertex,x,y,weight" with input-pixel coordinates.
void write_top_vertices_csv(std::ostream& out, const ParticipationExport& e);

}  // namespace hyperace
