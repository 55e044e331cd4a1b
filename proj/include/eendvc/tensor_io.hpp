// SPDX-License-Identifier: Apache-2.0
//
// safetensors reader/writer. Tensors are held as 2-D double matrices
// (first dimension x product of the rest) together with their full shape.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "eendvc/autograd.hpp"

namespace eendvc {

struct StoredTensor {
  std::vector<std::int64_t> shape;
  nn::Matrix data;
};

struct TensorArchive {
  std::map<std::string, std::string> metadata;
  std::map<std::string, StoredTensor> tensors;

  void put(const std::string& name, const nn::Matrix& m);
  const StoredTensor* find(const std::string& name) const;
};

/// Writes F64 tensors, names in sorted order, so identical archives are byte-identical.
void write_safetensors(const std::string& path, const TensorArchive& archive);
/// Accepts F64, F32, F16 and BF16 tensors.
TensorArchive read_safetensors(const std::string& path);

}  // namespace eendvc
