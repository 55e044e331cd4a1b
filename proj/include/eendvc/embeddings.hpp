// SPDX-License-Identifier: Apache-2.0
//
// Local speaker embeddings computed over a window's single-speaker frames.

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eendvc/eend.hpp"

namespace eendvc {

struct SpeakerEmbedding {
  Eigen::VectorXd vector;  // unit norm
  int window = 0;
  int slot = 0;
  double active_duration = 0.0;  // seconds of single-speaker activity used
};

struct EmbeddingExtractorSpec {
  std::string name = "toy";
  int dim = 64;
  double min_active_duration = 0.5;
  double frame_duration = 0.02;
  int sample_rate = 16000;

  void validate() const;
};

class EmbeddingExtractor {
 public:
  explicit EmbeddingExtractor(EmbeddingExtractorSpec spec) : spec_(std::move(spec)) { spec_.validate(); }
  virtual ~EmbeddingExtractor() = default;

  const EmbeddingExtractorSpec& spec() const { return spec_; }

  /// Raw (unnormalised) embedding of the given frames of `window`.
  virtual Eigen::VectorXd embed(std::span<const float> window, std::span<const int> frames) const = 0;

 protected:
  EmbeddingExtractorSpec spec_;
};

/// Mean log power spectrum (80-3500 Hz) of each frame's own samples, centred and
/// linearly detrended across bins, mapped through a seeded Gaussian projection.
class ToyEmbeddingExtractor final : public EmbeddingExtractor {
 public:
  explicit ToyEmbeddingExtractor(EmbeddingExtractorSpec spec = {}, std::uint64_t seed = 0);
  Eigen::VectorXd embed(std::span<const float> window, std::span<const int> frames) const override;

 private:
  Eigen::MatrixXd projection_;
};

/// Only the "toy" extractor ships; other names throw ConfigError.
std::unique_ptr<EmbeddingExtractor> make_extractor(const EmbeddingExtractorSpec& spec, std::uint64_t seed = 0);

/// One embedding per slot whose single-speaker frames last longer than the
/// extractor's minimum duration. Slots with a zero raw embedding are skipped.
std::vector<SpeakerEmbedding> extract_local_embeddings(std::span<const float> window,
                                                       const SegmentationOutput& segmentation,
                                                       const EmbeddingExtractor& extractor, int window_index = 0);

}  // namespace eendvc
