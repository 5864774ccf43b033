#include "hyperace/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace hyperace {

namespace {
std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void check_image(const char* op, const Tensor& t) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 3) {
    throw ShapeError(op, "image must be [1,3,H,W], got " + to_string(t.shape()));
  }
}
}  // namespace

Tensor read_ppm(const std::string& path) {
  const std::string bytes = slurp(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    std::int64_t v = 0;
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > (1 << 20)) break;
    }
    if (pos == start) throw std::runtime_error("PPM '" + path + "': missing " + what);
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw std::runtime_error("PPM '" + path + "': only binary P6 is supported");
  }
  pos = 2;
  const std::int64_t w = number("width"), h = number("height"), maxval = number("maxval");
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255) throw std::runtime_error("PPM '" + path + "': bad header");
  ++pos;  // single whitespace before the raster
  if (bytes.size() < pos + static_cast<std::size_t>(3 * w * h)) {
    throw std::runtime_error("PPM '" + path + "': truncated raster");
  }
  Tensor img({1, 3, h, w});
  auto d = img.mutable_data();
  for (std::int64_t i = 0; i < h * w; ++i) {
    for (int c = 0; c < 3; ++c) {
      d[c * h * w + i] = static_cast<unsigned char>(bytes[pos + 3 * i + c]) / static_cast<double>(maxval);
    }
  }
  return img;
}

void write_ppm(const Tensor& image, const std::string& path) {
  check_image("write_ppm", image);
  const std::int64_t h = image.dim(2), w = image.dim(3);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image '" + path + "'");
  out << "P6\n" << w << ' ' << h << "\n255\n";
  const auto d = image.data();
  std::string raster(static_cast<std::size_t>(3 * h * w), '\0');
  for (std::int64_t i = 0; i < h * w; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(d[c * h * w + i], 0.0, 1.0);
      raster[3 * i + c] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
  }
  out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
}

Tensor read_raw(const std::string& path, std::int64_t height, std::int64_t width) {
  if (height < 1 || width < 1) throw std::invalid_argument("raw image '" + path + "' needs a height and width");
  const std::string bytes = slurp(path);
  const std::size_t n = static_cast<std::size_t>(3 * height * width);
  if (bytes.size() != n * sizeof(float)) {
    throw std::runtime_error("raw image '" + path + "' holds " + std::to_string(bytes.size()) + " bytes, expected " +
                             std::to_string(n * sizeof(float)) + " for 1x3x" + std::to_string(height) + "x" +
                             std::to_string(width) + " float32");
  }
  std::vector<float> f(n);
  std::memcpy(f.data(), bytes.data(), bytes.size());
  return Tensor({1, 3, height, width}, std::vector<double>(f.begin(), f.end()));
}

void write_raw(const Tensor& image, const std::string& path) {
  check_image("write_raw", image);
  std::vector<float> f(image.data().begin(), image.data().end());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image '" + path + "'");
  out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
}

Tensor read_image(const std::string& path, std::int64_t height, std::int64_t width) {
  const bool ppm = path.size() >= 4 && path.compare(path.size() - 4, 4, ".ppm") == 0;
  return ppm ? read_ppm(path) : read_raw(path, height, width);
}

Tensor pad_to_multiple(const Tensor& image, std::int64_t multiple, double fill) {
  if (image.rank() != 4) throw ShapeError("pad_to_multiple", "expected NCHW");
  const std::int64_t n = image.dim(0), c = image.dim(1), h = image.dim(2), w = image.dim(3);
  const std::int64_t H = (h + multiple - 1) / multiple * multiple, W = (w + multiple - 1) / multiple * multiple;
  if (H == h && W == w) return image;
  Tensor out({n, c, H, W}, fill);
  auto dst = out.mutable_data();
  const auto src = image.data();
  for (std::int64_t k = 0; k < n * c; ++k)
    for (std::int64_t y = 0; y < h; ++y)
      std::copy_n(src.begin() + (k * h + y) * w, w, dst.begin() + (k * H + y) * W);
  return out;
}

}  // namespace hyperace
