#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "hyperace/nn.hpp"

namespace hyperace {

/// Malformed, truncated or mismatched weight file.
class WeightFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr std::uint32_t kWeightFileVersion = 1;

/// Layout (little-endian): "YV13", u32 version, u32 tensor count, then per
/// tensor: u32 name length, name bytes, u32 rank, rank x i64 extents,
/// numel x f64 payload.
std::string serialize_weights(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> parse_weights(const std::string& bytes);

std::vector<NamedTensor> read_weights(const std::string& path);
void write_weights(const std::vector<NamedTensor>& tensors, const std::string& path);

/// Parameters and buffers of `m`.
void save_weights(const Module& m, const std::string& path);
/// Copies every tensor of the file into `m`. The file must hold exactly the
/// module's names with matching shapes.
void load_weights(Module& m, const std::string& path);
void assign_weights(Module& m, const std::vector<NamedTensor>& tensors);

}  // namespace hyperace
