// SPDX-License-Identifier: Apache-2.0
//
// Local segmentation network: learnable layer fusion over an encoder's hidden
// states, a Conformer stack and a linear powerset classification head.

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eendvc/autograd.hpp"
#include "eendvc/encoder.hpp"
#include "eendvc/layers.hpp"
#include "eendvc/powerset.hpp"
#include "eendvc/tensor_io.hpp"
#include "eendvc/timeline.hpp"

namespace eendvc {

struct ConformerConfig {
  int layers = 4;
  int dim = 256;
  int ff_hidden = 1024;
  int heads = 4;
  int kernel = 31;
  double dropout = 0.1;

  /// Throws ConfigError on non-positive sizes, an even kernel, or dim not divisible by heads.
  void validate() const;
  nn::ConformerBlockConfig block() const { return {dim, ff_hidden, heads, kernel, dropout}; }

  friend bool operator==(const ConformerConfig&, const ConformerConfig&) = default;
};

void to_json(nlohmann::json& j, const ConformerConfig& c);
void from_json(const nlohmann::json& j, ConformerConfig& c);

/// softmax of the fusion logits.
std::vector<double> fusion_weights(std::span<const double> logits);

/// sum_l softmax(logits)_l * stack[l]; throws ShapeError when the lengths differ.
nn::Matrix fuse_layers(const LayerStack& stack, std::span<const double> logits);

struct SegmentationOutput {
  RowMatrix distribution;  // frames x classes, rows sum to 1
  Activity activity;       // frames x max_speakers
};

class SegmentationModel {
 public:
  SegmentationModel(const ConformerConfig& config, int layer_count, int hidden, const PowersetCodec& codec,
                    std::uint64_t seed);

  /// Frame-level class logits for the given encoder layers.
  nn::Var forward(nn::Tape& tape, std::span<const nn::Var> layers, const nn::Mode& mode) const;

  /// Evaluation-mode inference (dropout off). Throws NumericalError naming the
  /// first Conformer layer that produced non-finite activations.
  SegmentationOutput segment(const LayerStack& stack) const;

  const ConformerConfig& config() const { return config_; }
  const PowersetCodec& codec() const { return codec_; }
  int layer_count() const { return static_cast<int>(fusion_.value.cols()); }
  int input_dim() const { return hidden_; }

  nn::Parameter& fusion_logits() { return fusion_; }
  const nn::Parameter& fusion_logits() const { return fusion_; }
  std::vector<double> effective_fusion_weights() const;

  void visit(const std::string& prefix, const nn::ParamVisitor& fn);
  std::int64_t parameter_count();

 private:
  ConformerConfig config_;
  PowersetCodec codec_;
  int hidden_;
  nn::Parameter fusion_;
  std::unique_ptr<nn::Linear> input_proj_;  // absent when hidden == dim
  std::vector<nn::ConformerBlock> blocks_;
  nn::Linear head_;
};

SegmentationOutput segment_window(const LayerStack& stack, const SegmentationModel& model);

/// Differentiable powerset cross-entropy (mean over frames). Targets come from
/// assign_slots against the current prediction; `assignment` receives them.
nn::Var powerset_loss(nn::Tape& tape, const nn::Var& logits, const Activity& reference, const PowersetCodec& codec,
                      SlotAssignment* assignment = nullptr);

/// Mean per-frame cross-entropy of an already computed output against a reference
/// cropped to the window; the reference is discretized to the output's frame count.
double powerset_loss(const SegmentationOutput& output, const Annotation& reference, const PowersetCodec& codec,
                     double frame_duration = 0.02);

constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  std::unique_ptr<SegmentationModel> model;
  nlohmann::json metadata;  // format_version, conformer, codec, encoder, surface, lora, config
  TensorArchive encoder_tensors;  // names without the "encoder." prefix
};

/// Stores the model, the encoder tensors its surface can change (adapters for
/// LoRA, everything for full fine-tuning) and `config` as self-describing metadata.
void save_checkpoint(const std::string& path, SegmentationModel& model, Encoder& encoder, const nlohmann::json& config);
Checkpoint load_checkpoint(const std::string& path);
/// Re-applies a checkpoint's encoder tensors (attaching adapters first when needed).
void apply_encoder_tensors(const Checkpoint& checkpoint, Encoder& encoder);

}  // namespace eendvc
