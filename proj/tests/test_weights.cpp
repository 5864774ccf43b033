#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include <openssl/evp.h>

#include "helpers.hpp"
#include "hyperace/model.hpp"
#include "hyperace/weights.hpp"

using namespace hyperace;
using namespace hyperace::testing;

namespace fs = std::filesystem;

namespace {

std::string sha256(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Dyadic values survive any platform's arithmetic unchanged.
std::vector<NamedTensor> fixture_tensors() {
  Tensor a({2, 3}), b({4}), c({1, 1, 2, 2});
  for (std::int64_t i = 0; i < a.numel(); ++i) a.mutable_data()[i] = 0.25 * static_cast<double>(i) - 0.5;
  for (std::int64_t i = 0; i < b.numel(); ++i) b.mutable_data()[i] = -1.0 / static_cast<double>(1 << i);
  for (std::int64_t i = 0; i < c.numel(); ++i) c.mutable_data()[i] = 1024.0 * static_cast<double>(i);
  return {{"layer.weight", a}, {"layer.bias", b}, {"head.kernel", c}};
}

const fs::path kFixture = fs::path(HYPERACE_FIXTURE_DIR) / "tiny.yv13";
constexpr const char* kFixtureSha = "88c4d3e3812867cf2c5c726185efd90c25dbf4b34110f97b875bf175c9d4b6df";

}  // namespace

TEST_CASE("fixture digest is pinned") {
  const std::string bytes = slurp(kFixture);
  REQUIRE_FALSE(bytes.empty());
  CHECK(sha256(bytes) == kFixtureSha);
  CHECK(serialize_weights(fixture_tensors()) == bytes);
  auto parsed = parse_weights(bytes);
  REQUIRE(parsed.size() == 3);
  CHECK(parsed[0].name == "layer.weight");
  CHECK(serialize_weights(parsed) == bytes);
}

TEST_CASE("save, load, save is byte identical") {
  Network a(ModelConfig::preset("micro"));
  a.init(5);
  const auto dir = fs::temp_directory_path();
  const auto p1 = dir / "hyperace_w1.bin", p2 = dir / "hyperace_w2.bin";
  save_weights(a, p1.string());
  Network b(ModelConfig::preset("micro"));
  load_weights(b, p1.string());
  save_weights(b, p2.string());
  CHECK(slurp(p1) == slurp(p2));
  auto sa = a.state(), sb = b.state();
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(bit_identical(sa[i].tensor, sb[i].tensor));
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("malformed files raise named errors") {
  const std::string good = serialize_weights(fixture_tensors());
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_WITH_AS(parse_weights(bad_magic), doctest::Contains("magic"), WeightFileError);
  std::string bad_version = good;
  bad_version[4] = 9;
  CHECK_THROWS_WITH_AS(parse_weights(bad_version), doctest::Contains("version"), WeightFileError);
  CHECK_THROWS_AS(parse_weights(good.substr(0, good.size() - 3)), WeightFileError);
  CHECK_THROWS_AS(parse_weights(good + "x"), WeightFileError);
  CHECK_THROWS_AS(read_weights("/nonexistent/hyperace.bin"), WeightFileError);
}

TEST_CASE("shape and name mismatches name the tensor") {
  Network net(ModelConfig::preset("micro"));
  auto state = net.state();
  auto wrong_shape = state;
  wrong_shape[0].tensor = Tensor({1, 2, 3});
  CHECK_THROWS_WITH_AS(assign_weights(net, wrong_shape), doctest::Contains(state[0].name.c_str()), WeightFileError);
  auto missing = state;
  missing.pop_back();
  CHECK_THROWS_WITH_AS(assign_weights(net, missing), doctest::Contains(state.back().name.c_str()), WeightFileError);
  auto extra = state;
  extra.push_back({"stray.tensor", Tensor({1})});
  CHECK_THROWS_WITH_AS(assign_weights(net, extra), doctest::Contains("stray.tensor"), WeightFileError);
}
