#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "irview/config.hpp"
#include "irview/layers.hpp"
#include "irview/tensor.hpp"

namespace irview {

struct NamedTensor {
  std::string name;
  Tensor<float> value;

  bool operator==(const NamedTensor&) const = default;
};

/// Serialized weights of one network plus the metadata needed to rebuild and reproduce it.
/// Binary layout (little-endian): magic "IRVWCKPT", u32 format version, u64 metadata length,
/// metadata as key=value text, u32 tensor count, then per tensor: u32 name length, name,
/// u32 rank, i32 dims[rank], raw float32 values.
struct Checkpoint {
  std::string kind;           // "vanilla", "predictor" or "classifier"
  KeyValueConfig metadata;    // model.*, train.*, seed, code_version, ...
  std::vector<NamedTensor> tensors;

  bool operator==(const Checkpoint& other) const {
    return kind == other.kind && metadata.entries() == other.metadata.entries() && tensors == other.tensors;
  }
};

std::string code_version();

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Layer names, shapes and the total parameter count, one tensor per line.
std::string describe(const Checkpoint& checkpoint);

/// Copies parameter values (not gradients) into a checkpoint body.
std::vector<NamedTensor> snapshot(const ParameterList<float>& params);

/// Loads values by name; throws LookupError on a missing tensor and ShapeError on a shape mismatch.
void restore(const ParameterList<float>& params, const std::vector<NamedTensor>& tensors);

/// FNV-1a over the raw bytes of every parameter value, in list order.
std::uint64_t weights_hash(const ParameterList<float>& params);

}  // namespace irview
