#include "hyperace/weights.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace hyperace {

namespace {
static_assert(std::endian::native == std::endian::little, "weight I/O assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& b) : bytes_(b) {}
  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void read_doubles(double* dst, std::size_t n, const char* what) {
    need(n * sizeof(double), what);
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw WeightFileError(std::string("weight file truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
    }
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};
}  // namespace

std::string serialize_weights(const std::vector<NamedTensor>& tensors) {
  std::string out = "YV13";
  put<std::uint32_t>(out, kWeightFileVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put<std::int64_t>(out, e);
    const auto d = t.data();
    out.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double));
  }
  return out;
}

std::vector<NamedTensor> parse_weights(const std::string& bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != "YV13") throw WeightFileError("not a weight file (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kWeightFileVersion) {
    throw WeightFileError("unsupported weight file version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>("name length");
    std::string name = r.take(len, "name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw WeightFileError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    std::int64_t n = 1;
    for (auto& e : shape) {
      e = r.get<std::int64_t>("extent");
      if (e < 0 || e > (std::int64_t{1} << 40)) throw WeightFileError("tensor '" + name + "' has a bad extent");
      n *= e;
    }
    if (n > (std::int64_t{1} << 40)) throw WeightFileError("tensor '" + name + "' is too large");
    std::vector<double> data(static_cast<std::size_t>(n));
    r.read_doubles(data.data(), data.size(), "payload");
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  if (!r.done()) throw WeightFileError("trailing bytes after the last tensor");
  return out;
}

std::vector<NamedTensor> read_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightFileError("cannot open weight file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_weights(ss.str());
}

void write_weights(const std::vector<NamedTensor>& tensors, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw WeightFileError("cannot write weight file '" + path + "'");
  const std::string bytes = serialize_weights(tensors);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw WeightFileError("write failed for '" + path + "'");
}

void save_weights(const Module& m, const std::string& path) { write_weights(m.state(), path); }

void assign_weights(Module& m, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& nt : tensors) {
    if (!by_name.emplace(nt.name, &nt.tensor).second) throw WeightFileError("duplicate tensor '" + nt.name + "'");
  }
  auto state = m.state();
  for (auto& [name, dst] : state) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw WeightFileError("weight file lacks tensor '" + name + "'");
    if (it->second->shape() != dst.shape()) {
      throw WeightFileError("tensor '" + name + "' has shape " + to_string(it->second->shape()) + ", model expects " +
                            to_string(dst.shape()));
    }
  }
  if (by_name.size() != state.size()) {
    for (const auto& nt : tensors) {
      bool known = false;
      for (const auto& s : state) known = known || s.name == nt.name;
      if (!known) throw WeightFileError("weight file has unexpected tensor '" + nt.name + "'");
    }
  }
  for (auto& [name, dst] : state) {
    const auto src = by_name[name]->data();
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
}

void load_weights(Module& m, const std::string& path) { assign_weights(m, read_weights(path)); }

}  // namespace hyperace
