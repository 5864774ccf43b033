#include "hyperace/profiler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace hyperace {

BudgetReport count_budget(const Network& net, std::int64_t height, std::int64_t width) {
  BudgetReport r;
  r.height = height;
  r.width = width;
  r.parts = net.budget(height, width);
  for (const auto& [name, b] : r.parts) r.total += b;
  return r;
}

BudgetReport count_budget(const ModelConfig& cfg, std::int64_t height, std::int64_t width) {
  Network net(cfg);
  return count_budget(net, height, width);
}

std::string report_json(const BudgetReport& r, int indent) {
  nlohmann::json parts = nlohmann::json::array();
  for (const auto& [name, b] : r.parts) parts.push_back({{"name", name}, {"params", b.params}, {"flops", b.flops}});
  nlohmann::json j = {{"input", {r.height, r.width}},
                      {"parts", parts},
                      {"total", {{"params", r.total.params}, {"flops", r.total.flops}}},
                      {"params_m", static_cast<double>(r.total.params) / 1e6},
                      {"gflops", static_cast<double>(r.total.flops) / 1e9}};
  return j.dump(indent);
}

std::string report_text(const BudgetReport& r) {
  std::size_t wname = 5;
  for (const auto& p : r.parts) wname = std::max(wname, p.first.size());
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %14s %18s\n", static_cast<int>(wname), "module", "params", "flops");
  out << buf;
  for (const auto& [name, b] : r.parts) {
    std::snprintf(buf, sizeof buf, "%-*s %14llu %18llu\n", static_cast<int>(wname), name.c_str(),
                  static_cast<unsigned long long>(b.params), static_cast<unsigned long long>(b.flops));
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-*s %14llu %18llu\n", static_cast<int>(wname), "total",
                static_cast<unsigned long long>(r.total.params), static_cast<unsigned long long>(r.total.flops));
  out << buf;
  std::snprintf(buf, sizeof buf, "input %lldx%lld: %.3f M params, %.3f GFLOPs\n", static_cast<long long>(r.height),
                static_cast<long long>(r.width), static_cast<double>(r.total.params) / 1e6,
                static_cast<double>(r.total.flops) / 1e9);
  out << buf;
  return out.str();
}

bool BudgetCheck::passed() const {
  const double allowed = relative ? tolerance * std::abs(target) : tolerance;
  return std::abs(value - target) <= allowed;
}

namespace {
struct Totals {
  double params_m, gflops;
};

Totals totals(ModelConfig cfg) {
  auto r = count_budget(cfg);
  return {static_cast<double>(r.total.params) / 1e6, static_cast<double>(r.total.flops) / 1e9};
}

double reduction(double on, double off) { return 100.0 * (off - on) / off; }
}  // namespace

std::vector<BudgetCheck> reference_checks() {
  std::vector<BudgetCheck> out;
  auto n = ModelConfig::preset("n"), s = ModelConfig::preset("s");
  auto n_off = n, s_off = s;
  n_off.use_ds = s_off.use_ds = false;
  const Totals tn = totals(n), ts = totals(s), tn_off = totals(n_off), ts_off = totals(s_off);

  out.push_back({"n.params_m", tn.params_m, 2.5, 0.15, true});
  out.push_back({"n.gflops", tn.gflops, 6.4, 0.15, true});
  out.push_back({"s.params_m", ts.params_m, 9.0, 0.15, true});
  out.push_back({"s.gflops", ts.gflops, 20.8, 0.15, true});
  out.push_back({"n.ds_params_reduction_pct", reduction(tn.params_m, tn_off.params_m), reduction(2.5, 3.1), 5, false});
  out.push_back({"n.ds_flops_reduction_pct", reduction(tn.gflops, tn_off.gflops), reduction(6.4, 7.9), 5, false});
  out.push_back({"s.ds_params_reduction_pct", reduction(ts.params_m, ts_off.params_m), reduction(9.0, 11.7), 5, false});
  out.push_back({"s.ds_flops_reduction_pct", reduction(ts.gflops, ts_off.gflops), reduction(20.8, 27.1), 5, false});

  auto s2 = s, s16 = s;
  s2.hyperedges = 2;
  s16.hyperedges = 16;
  const Totals t2 = totals(s2), t16 = totals(s16);
  out.push_back({"s.m2_to_m16_params_delta_m", t16.params_m - t2.params_m, 9.6 - 8.6, 0.2, true});
  out.push_back({"s.m2_to_m16_gflops_delta", t16.gflops - t2.gflops, 21.5 - 20.4, 0.2, true});
  return out;
}

std::string checks_text(const std::vector<BudgetCheck>& checks) {
  std::ostringstream out;
  char buf[256];
  for (const auto& c : checks) {
    std::snprintf(buf, sizeof buf, "%-30s %10.4f target %8.4f tol %s%.2f%s  %s\n", c.name.c_str(), c.value, c.target,
                  "+-", c.relative ? 100 * c.tolerance : c.tolerance, c.relative ? "%" : "", c.passed() ? "ok" : "MISS");
    out << buf;
  }
  return out.str();
}

std::string checks_json(const std::vector<BudgetCheck>& checks, int indent) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : checks) {
    j.push_back({{"name", c.name},
                 {"value", c.value},
                 {"target", c.target},
                 {"tolerance", c.tolerance},
                 {"relative", c.relative},
                 {"passed", c.passed()}});
  }
  return j.dump(indent);
}

ParticipationExport export_participation(Network& net, const Tensor& image, const std::string& layer, int top_k) {
  auto layers = net.hypergraph_layers();
  auto it = std::find_if(layers.begin(), layers.end(), [&](const auto& l) { return l.first == layer; });
  if (it == layers.end()) {
    std::string names;
    for (const auto& l : layers) names += (names.empty() ? "" : ", ") + l.first;
    throw std::invalid_argument("no C3AH layer named '" + layer + "'; available: " +
                                (names.empty() ? std::string("none") : names));
  }
  if (image.rank() != 4 || image.dim(0) != 1) {
    throw ShapeError("export_participation", "expected a single image [1,3,H,W], got " + to_string(image.shape()));
  }
  if (top_k < 0) throw std::invalid_argument("top_k must be non-negative");
  Tensor x = net.hypergraph_input(image);
  ParticipationExport e;
  e.layer = layer;
  e.grid_h = x.dim(2);
  e.grid_w = x.dim(3);
  e.stride = static_cast<int>(image.dim(2) / x.dim(2));
  e.matrix = it->second->participation(x, 0);

  const std::int64_t n = e.matrix.dim(0), m = e.matrix.dim(1);
  const auto& a = e.matrix.data();
  const std::int64_t k = std::min<std::int64_t>(top_k, n);
  for (std::int64_t j = 0; j < m; ++j) {
    std::vector<std::int64_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](std::int64_t p, std::int64_t q) {
      const double ap = a[p * m + j], aq = a[q * m + j];
      return ap > aq || (ap == aq && p < q);
    });
    std::vector<ParticipationExport::Vertex> top;
    for (std::int64_t r = 0; r < k; ++r) {
      const std::int64_t v = idx[r];
      top.push_back({static_cast<int>(r), v, (static_cast<double>(v % e.grid_w) + 0.5) * e.stride,
                     (static_cast<double>(v / e.grid_w) + 0.5) * e.stride, a[v * m + j]});
    }
    e.top.push_back(std::move(top));
  }
  return e;
}

void write_participation_csv(std::ostream& out, const ParticipationExport& e) {
  const std::int64_t n = e.matrix.dim(0), m = e.matrix.dim(1);
  out << "vertex,y,x";
  for (std::int64_t j = 0; j < m; ++j) out << ",e" << j;
  out << '\n';
  const auto& a = e.matrix.data();
  char buf[40];
  for (std::int64_t i = 0; i < n; ++i) {
    out << i << ',' << i / e.grid_w << ',' << i % e.grid_w;
    for (std::int64_t j = 0; j < m; ++j) {
      std::snprintf(buf, sizeof buf, ",%.17g", a[i * m + j]);
      out << buf;
    }
    out << '\n';
  }
}

void write_top_vertices_csv(std::ostream& out, const ParticipationExport& e) {
  out << "hyperedge,rank,vertex,x,y,weight\n";
  char buf[160];
  for (std::size_t j = 0; j < e.top.size(); ++j) {
    for (const auto& v : e.top[j]) {
      std::snprintf(buf, sizeof buf, "%zu,%d,%lld,%.1f,%.1f,%.17g\n", j, v.rank, static_cast<long long>(v.vertex), v.x,
                    v.y, v.weight);
      out << buf;
    }
  }
}

}  // namespace hyperace
