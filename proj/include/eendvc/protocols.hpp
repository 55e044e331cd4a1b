// SPDX-License-Identifier: Apache-2.0
//
// Training regimes (adult-only, combined, domain adaptation), window sampling,
// optimisation and end-to-end inference.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eendvc/audio.hpp"
#include "eendvc/eend.hpp"
#include "eendvc/embeddings.hpp"
#include "eendvc/encoder.hpp"
#include "eendvc/synth.hpp"
#include "eendvc/vclust.hpp"

namespace eendvc {

// ---------------------------------------------------------------- manifests

struct ManifestRecord {
  std::string uri;
  std::string audio;  // absolute, or relative to the manifest's directory
  std::string rttm;
  std::string dataset;
  std::string age_group = "adult";  // adult, older-adult, child-adult
};

/// JSON Lines, one record per line. Relative paths are resolved against the manifest file.
std::vector<ManifestRecord> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);

/// Renders each scene to `dir` as {uri}.wav and {uri}.rttm and writes
/// `dir`/{name}.jsonl; returns the manifest path.
std::string write_synthetic_corpus(const std::string& dir, const std::string& name,
                                   const std::vector<SyntheticSceneSpec>& scenes, const std::string& dataset);

// ---------------------------------------------------------------- configuration

enum class ProtocolKind { adult_only, combined, domain_adapt };
std::string to_string(ProtocolKind kind);
ProtocolKind parse_protocol(const std::string& text);

struct ProtocolSpec {
  ProtocolKind kind = ProtocolKind::adult_only;
  std::vector<std::string> train_manifests;
  std::vector<std::string> validation_manifests;
  std::string init_checkpoint;  // required for domain-adapt
};

struct TrainConfig {
  double head_lr = 1e-3;
  double encoder_lr = 2e-5;  // full fine-tuning only
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 16;
  int epochs = 30;
  double window = 8.0;  // training hop is 3/4 of the window (8 -> 6, 16 -> 12)
  std::uint64_t seed = 0;

  double train_hop() const { return 0.75 * window; }
  void validate() const;
};

struct LoRAConfig {
  int rank = 16;
  double alpha = 16.0;  // scaling alpha / rank
};

struct EncoderConfig {
  std::string name = "toy";
  std::uint64_t seed = 0;
  std::string weights;
};

struct RunConfig {
  ProtocolSpec protocol;
  TrainConfig train;
  TrainableSurface surface = TrainableSurface::frozen;
  LoRAConfig lora;
  EncoderConfig encoder;
  ConformerConfig conformer;
  int max_speakers = 4;
  int max_concurrent = 2;
  EmbeddingExtractorSpec embedding;
  std::uint64_t embedding_seed = 0;
  AHCConfig clustering;
  std::string out_dir = "run";

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing keys keep their defaults; unknown top-level keys throw ConfigError.
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::string& path);

// ---------------------------------------------------------------- data

struct Recording {
  ManifestRecord record;
  Waveform audio;
  Annotation reference;
};

/// Loads every readable recording; unreadable ones are skipped with a warning.
std::vector<Recording> load_recordings(const std::vector<ManifestRecord>& records);

struct WindowRef {
  int recording = 0;
  double start = 0.0;
};

/// Window starts 0, hop, 2 hop, ... while the window fits, then one zero-padded
/// tail window if at least one frame of audio remains uncovered.
std::vector<double> window_starts(double duration, double window, double hop, double frame_duration = 0.02);

struct WindowSample {
  std::vector<float> waveform;  // exactly window seconds, zero-padded
  Annotation reference;         // cropped, relative to the window start
  WindowRef ref;
};

class WindowSampler {
 public:
  WindowSampler(const std::vector<Recording>& recordings, double window, double hop, std::uint64_t seed);

  std::size_t size() const { return windows_.size(); }
  const std::vector<WindowRef>& windows() const { return windows_; }
  /// Seeded permutation of the windows for an epoch (same seed and epoch, same order).
  std::vector<std::size_t> epoch_order(int epoch) const;
  WindowSample sample(std::size_t index) const;

 private:
  const std::vector<Recording>* recordings_;
  double window_;
  std::uint64_t seed_;
  std::vector<WindowRef> windows_;
};

/// Fills or truncates to `samples`.
std::vector<float> slice_window(const Waveform& audio, double start, std::size_t samples);

// ---------------------------------------------------------------- optimisation

/// Decoupled weight decay Adam. Parameters without a gradient are skipped.
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8, double weight_decay = 0.01)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon), weight_decay_(weight_decay) {}

  void step(const std::vector<std::pair<nn::Parameter*, double>>& groups);
  int steps() const { return steps_; }

 private:
  struct Moments {
    nn::Matrix m, v;
  };
  double beta1_, beta2_, epsilon_, weight_decay_;
  int steps_ = 0;
  std::map<const nn::Parameter*, Moments> state_;
};

// ---------------------------------------------------------------- training

struct EpochLog {
  int epoch = 0;
  std::optional<double> train_loss;  // epoch 0 reports the untrained training-set loss
  double validation_loss = 0.0;
  std::vector<double> fusion_weights;
  std::int64_t trainable_parameters = 0;
  std::int64_t encoder_trainable_parameters = 0;
  double seconds = 0.0;
};

void to_json(nlohmann::json& j, const EpochLog& e);
void from_json(const nlohmann::json& j, EpochLog& e);

struct TrainResult {
  std::string checkpoint;
  std::string log;
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  double best_validation_loss = 0.0;
  int dropped_windows = 0;
};

/// Best epoch from a log: minimum validation loss over epochs >= 1, earliest on ties.
int best_epoch(const std::vector<EpochLog>& epochs);
std::vector<EpochLog> read_training_log(const std::string& path);

/// Holds the trainable pieces of one run.
struct TrainingState {
  std::unique_ptr<Encoder> encoder;
  std::unique_ptr<SegmentationModel> model;
  PowersetCodec codec{4, 2};
};

/// Builds encoder and model for a run, from the init checkpoint when one is
/// configured (required, and produced by adult-only training, for domain-adapt).
TrainingState prepare_training(const RunConfig& config);

/// Mean powerset loss over all usable windows of `recordings` in evaluation mode.
double evaluate_loss(const TrainingState& state, const std::vector<Recording>& recordings, double window,
                     double hop);

/// Runs the configured protocol; writes the best checkpoint and the per-epoch
/// log under config.out_dir.
TrainResult run_protocol(const RunConfig& config);

// ---------------------------------------------------------------- inference

class DiarizationPipeline {
 public:
  /// Rebuilds the encoder, model, embedding extractor and clustering settings
  /// stored in a checkpoint.
  static DiarizationPipeline from_checkpoint(const std::string& path);
  DiarizationPipeline(std::unique_ptr<Encoder> encoder, std::unique_ptr<SegmentationModel> model,
                      std::unique_ptr<EmbeddingExtractor> extractor, AHCConfig clustering, double window);

  /// Windows at hop = window, segmentation, local embeddings, clustering, reconciliation.
  Annotation infer(const std::string& uri, const Waveform& audio) const;
  std::vector<WindowResult> segment_windows(const Waveform& audio) const;

  double window() const { return window_; }
  AHCConfig& clustering() { return clustering_; }

 private:
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<SegmentationModel> model_;
  std::unique_ptr<EmbeddingExtractor> extractor_;
  AHCConfig clustering_;
  double window_;
};

Annotation infer_recording(const std::string& checkpoint, const std::string& uri, const Waveform& audio);

}  // namespace eendvc
