#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "helpers.hpp"
#include "hyperace/profiler.hpp"

using namespace hyperace;
using namespace hyperace::testing;

TEST_CASE("report totals equal the sum of parts") {
  auto r = count_budget(ModelConfig::preset("n"));
  Budget sum;
  for (auto& [n, b] : r.parts) sum += b;
  CHECK(sum.params == r.total.params);
  CHECK(sum.flops == r.total.flops);
  auto j = nlohmann::json::parse(report_json(r));
  CHECK(j["total"]["params"].get<std::uint64_t>() == r.total.params);
  CHECK(j["input"][0] == 640);
  CHECK(report_text(r).find("total") != std::string::npos);
}

TEST_CASE("reports do not depend on weights") {
  Network a(ModelConfig::preset("micro")), b(ModelConfig::preset("micro"));
  a.init(1);
  b.init(2);
  CHECK(report_json(count_budget(a)) == report_json(count_budget(b)));
}

TEST_CASE("reference checks cover totals, reductions and the hyperedge sweep") {
  auto checks = reference_checks();
  CHECK(checks.size() == 10);
  for (const auto& c : checks) {
    if (c.name.find("delta") != std::string::npos) continue;
    INFO(c.name << " = " << c.value);
    CHECK(c.passed());
  }
  CHECK(checks_text(checks).find("n.gflops") != std::string::npos);
}

TEST_CASE("participation export") {
  Network net(ModelConfig::preset("micro"));
  net.init(0);
  Rng rng(0);
  Tensor img = random_tensor({1, 3, 64, 96}, rng, 0, 1);
  auto e = export_participation(net, img, "hyperace.high1", 3);
  CHECK(e.grid_h == 4);
  CHECK(e.grid_w == 6);
  CHECK(e.matrix.shape() == Shape{24, 2});
  for (int j = 0; j < 2; ++j) {
    double t = 0;
    for (int i = 0; i < 24; ++i) t += e.matrix.data()[i * 2 + j];
    CHECK(std::abs(t - 1.0) < 1e-6);
  }
  REQUIRE(e.top.size() == 2);
  for (const auto& top : e.top) {
    REQUIRE(top.size() == 3);
    CHECK(top[0].weight >= top[1].weight);
    for (const auto& v : top) {
      CHECK(v.x >= 0);
      CHECK(v.x < 96);
      CHECK(v.y >= 0);
      CHECK(v.y < 64);
    }
  }
  std::ostringstream csv, topcsv;
  write_participation_csv(csv, e);
  write_top_vertices_csv(topcsv, e);
  const std::string a = csv.str(), b = topcsv.str();
  CHECK(a.rfind("vertex,y,x,e0,e1\n", 0) == 0);
  CHECK(std::count(a.begin(), a.end(), '\n') == 25);
  CHECK(std::count(b.begin(), b.end(), '\n') == 7);
}

TEST_CASE("uniform gray input gives near-uniform participation") {
  Network net(ModelConfig::preset("micro"));
  net.init(0);
  auto e = export_participation(net, Tensor({1, 3, 128, 128}, 0.5), "hyperace.high0");
  const auto& a = e.matrix.data();
  double lo = 1, hi = 0;
  for (double v : a) lo = std::min(lo, v), hi = std::max(hi, v);
  CHECK(hi / lo < 1.5);
}

TEST_CASE("unknown layers list the available ones") {
  Network net(ModelConfig::preset("micro"));
  CHECK_THROWS_WITH(export_participation(net, Tensor({1, 3, 64, 64}), "neck.td4"),
                    doctest::Contains("hyperace.high0, hyperace.high1"));
}
