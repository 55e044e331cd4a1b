// SPDX-License-Identifier: Apache-2.0
//
// Transformer encoder backends (toy-transformer, whisper, wavlm).

#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "eendvc/encoder.hpp"
#include "eendvc/tensor_io.hpp"

namespace eendvc::foundation {

std::string block_prefix(const EncoderSpec& spec, int block);
/// Names of the two feed-forward projections inside a block.
std::pair<std::string, std::string> feed_forward_names(const EncoderSpec& spec);
std::int64_t parameter_count(const EncoderSpec& spec);
/// Tensors that stay fixed even under full fine-tuning.
bool is_fixed_buffer(const std::string& name);
/// Maps a checkpoint tensor name onto the internal naming scheme.
std::string normalize_name(const EncoderSpec& spec, const std::string& name);
/// Handles tensors that need conversion (weight-normalised convolutions) and
/// removes them from `missing` when satisfied.
void load_special(const EncoderSpec& spec, const TensorArchive& archive, Encoder& encoder,
                  std::vector<std::string>& missing);

std::unique_ptr<Encoder> make(const EncoderSpec& spec, std::uint64_t seed);

}  // namespace eendvc::foundation
