// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Checkpoint container, all integers little-endian:
//
//   "NBSEPCKP"                       8-byte magic
//   u32 version                      currently 1
//   u32 n_meta, then n_meta times    u32 key length, key, u32 value length, value
//                                    (keys sorted; numbers printed with %.17g)
//   u32 n_tensors, then per tensor   u32 name length, name, u8 dtype (0 f32, 1 f64),
//                                    u32 rank, u64 dims[rank], row-major values
//
// A model writes its ModelConfig as "model.*" metadata, "precision", and one
// tensor per parameter under the names of Model::parameters(). BN layers add
// "<layer>.running_mean" / "<layer>.running_var" (f64). The trainer appends
// "adam.m.<param>" / "adam.v.<param>" moments and "train.*" / "state.*" keys.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nbsep/network.hpp"
#include "nbsep/tensor.hpp"

namespace nbsep {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  return sizeof(T) == 4 ? DType::F32 : DType::F64;
}

struct CheckpointTensor {
  std::string name;
  DType dtype = DType::F64;
  Shape shape;
  std::vector<double> values;  // exact for f32 entries as well
};

struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const;
  const CheckpointTensor& require(const std::string& name) const;
  const std::string& meta(const std::string& key) const;
  /// Replaces a tensor of the same name or appends a new one.
  void put(CheckpointTensor tensor);
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// `origin` names the source in error messages.
Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

template <typename T>
void store_model(Checkpoint& ckpt, const Model<T>& model);

/// Rebuilds a model; parameters stored in the other precision are converted.
template <typename T>
Model<T> restore_model(const Checkpoint& ckpt);

}  // namespace nbsep
