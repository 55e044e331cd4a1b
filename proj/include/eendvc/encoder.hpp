// SPDX-License-Identifier: Apache-2.0
//
// Speech encoder backends behind one interface. Every backend returns all of
// its hidden layers at a common 20 ms frame rate so the segmentation model
// does not depend on which encoder produced them.

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eendvc/autograd.hpp"
#include "eendvc/layers.hpp"

namespace eendvc {

enum class EncoderFamily { toy, toy_transformer, whisper, wavlm };

struct EncoderSpec {
  std::string name;
  EncoderFamily family = EncoderFamily::toy;
  int layer_count = 4;  // hidden representations exposed (transformer blocks + 1)
  int hidden_size = 32;
  double output_frame_duration = 0.02;
  int sample_rate = 16000;
  std::optional<double> fixed_input_length;  // seconds

  // Transformer backends only.
  int blocks = 0;
  int heads = 0;
  int ff_dim = 0;
  int n_mels = 0;
  bool pre_norm = true;
  bool conv_layer_norm = false;  // wavlm: layer norm in every extractor conv
};

/// Known names: toy, toy-transformer, whisper-base, whisper-small,
/// whisper-medium, wavlm-base-plus, wavlm-large, wavlm-diarizen.
EncoderSpec encoder_spec(const std::string& name);
std::vector<std::string> known_encoders();

enum class TrainableSurface { frozen, feed_forward_lora, full };

std::string to_string(TrainableSurface surface);
/// Accepts "frozen", "lora" / "feed-forward-lora", "full".
TrainableSurface parse_surface(const std::string& text);

struct LoRATarget {
  std::string name;  // parameter name of the targeted weight
  int rows = 0;      // out features
  int cols = 0;      // in features
};

struct SurfaceInfo {
  std::vector<TrainableSurface> surfaces;
  std::vector<LoRATarget> lora_targets;
  std::int64_t encoder_parameters = 0;

  bool supports(TrainableSurface s) const;
  /// Parameters a rank-r adapter on every target adds: sum r * (rows + cols).
  std::int64_t lora_parameter_count(int rank) const;
};

/// Computed from the spec alone; no weights are allocated.
SurfaceInfo list_trainable_surfaces(const EncoderSpec& spec);

/// layers x frames x hidden.
struct LayerStack {
  std::vector<nn::Matrix> layers;

  int layer_count() const { return static_cast<int>(layers.size()); }
  int frames() const { return layers.empty() ? 0 : static_cast<int>(layers.front().rows()); }
  int hidden() const { return layers.empty() ? 0 : static_cast<int>(layers.front().cols()); }
};

struct EncoderOptions {
  std::uint64_t seed = 0;
  std::string weights_path;  // safetensors; empty = seeded initialisation
};

class Encoder {
 public:
  explicit Encoder(EncoderSpec spec) : spec_(std::move(spec)) {}
  virtual ~Encoder() = default;
  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;

  const EncoderSpec& spec() const { return spec_; }

  /// Output frames for a window of `samples` samples.
  int frames_for(std::size_t samples) const;

  /// Inference without gradient recording. Throws on a sample-rate mismatch or
  /// non-finite input.
  LayerStack encode_window(std::span<const float> waveform, int sample_rate) const;

  /// Records the forward pass; returns layer_count() nodes of frames x hidden.
  virtual std::vector<nn::Var> forward(nn::Tape& tape, std::span<const float> waveform, const nn::Mode& mode) const = 0;

  virtual void visit(const std::string& prefix, const nn::ParamVisitor& fn) = 0;

  SurfaceInfo surfaces() const { return list_trainable_surfaces(spec_); }

  /// Sets which encoder parameters the optimiser may touch. Requesting LoRA
  /// without adapters attached, or a surface the backend lacks, throws CapabilityError.
  void set_surface(TrainableSurface surface);
  TrainableSurface surface() const { return surface_; }

  virtual void attach_lora(int rank, double alpha, std::uint64_t seed);
  virtual void remove_lora();
  virtual void merge_lora();
  virtual void unmerge_lora();
  bool has_lora() const { return lora_attached_; }

  std::int64_t parameter_count();
  std::int64_t trainable_parameter_count();

  /// Copies matching tensors from a safetensors file; throws on missing or
  /// mis-shaped tensors.
  virtual void load_weights(const std::string& path);

 protected:
  /// Linear layers that receive adapters.
  virtual std::vector<nn::Linear*> lora_layers() { return {}; }

  EncoderSpec spec_;
  TrainableSurface surface_ = TrainableSurface::frozen;
  bool lora_attached_ = false;
};

std::unique_ptr<Encoder> make_encoder(const std::string& name, const EncoderOptions& options = {});
std::unique_ptr<Encoder> make_encoder(const EncoderSpec& spec, const EncoderOptions& options = {});

/// Mel filterbank features used by the toy backends: log(1 + mel power) of a
/// 25 ms Hann window centred on each 20 ms frame. frames x 40.
nn::Matrix toy_filterbank_features(std::span<const float> waveform, int frames);

/// Whisper-style log-mel spectrogram (n_fft 400, hop 160) of a waveform
/// already padded to the model's input length. n_frames x n_mels.
nn::Matrix whisper_log_mel(std::span<const float> waveform, int n_mels);

}  // namespace eendvc
