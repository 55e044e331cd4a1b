// SPDX-License-Identifier: Apache-2.0

#include "eendvc/embeddings.hpp"

#include <cmath>
#include <random>

#include "eendvc/audio.hpp"
#include "eendvc/error.hpp"

namespace eendvc {

namespace {
constexpr int kEmbeddingFft = 512;
constexpr double kLogFloor = 1e-10;
// Voiced band used by the toy extractor, as FFT bins.
constexpr int kBandLow = 80 * kEmbeddingFft / 16000;
constexpr int kBandHigh = 3500 * kEmbeddingFft / 16000;
constexpr int kBandBins = kBandHigh - kBandLow;
}  // namespace

void EmbeddingExtractorSpec::validate() const {
  if (dim < 2) throw ConfigError("embedding dimension must be at least 2");
  if (min_active_duration < 0.0) throw ConfigError("minimum active duration must be non-negative");
  if (frame_duration <= 0.0) throw ConfigError("frame duration must be positive");
}

ToyEmbeddingExtractor::ToyEmbeddingExtractor(EmbeddingExtractorSpec spec, std::uint64_t seed)
    : EmbeddingExtractor(std::move(spec)) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal;
  projection_.resize(spec_.dim, kBandBins);
  for (Eigen::Index i = 0; i < projection_.size(); ++i) projection_.data()[i] = normal(rng);
}

Eigen::VectorXd ToyEmbeddingExtractor::embed(std::span<const float> window, std::span<const int> frames) const {
  const int hop = static_cast<int>(std::lround(spec_.frame_duration * spec_.sample_rate));
  const std::vector<double> taper = hann_window(hop);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(kBandBins);
  if (frames.empty()) return Eigen::VectorXd::Zero(spec_.dim);
  std::vector<double> frame(static_cast<std::size_t>(hop));
  for (int f : frames) {
    const std::size_t begin = static_cast<std::size_t>(f) * static_cast<std::size_t>(hop);
    for (int i = 0; i < hop; ++i) {
      const std::size_t s = begin + static_cast<std::size_t>(i);
      frame[static_cast<std::size_t>(i)] = s < window.size() ? window[s] * taper[static_cast<std::size_t>(i)] : 0.0;
    }
    const auto power = power_spectrum(frame, kEmbeddingFft);
    for (int b = 0; b < kBandBins; ++b) mean(b) += std::log(power[static_cast<std::size_t>(kBandLow + b)] + kLogFloor);
  }
  mean /= static_cast<double>(frames.size());
  mean.array() -= mean.mean();
  // Linear detrend across the band.
  const Eigen::VectorXd ramp = Eigen::VectorXd::LinSpaced(kBandBins, -1.0, 1.0);
  mean -= ramp * (ramp.dot(mean) / ramp.dot(ramp));
  // Flat spectrum: digital silence.
  if (mean.cwiseAbs().maxCoeff() < 1e-9) return Eigen::VectorXd::Zero(spec_.dim);
  return projection_ * mean;
}

std::unique_ptr<EmbeddingExtractor> make_extractor(const EmbeddingExtractorSpec& spec, std::uint64_t seed) {
  if (spec.name == "toy") return std::make_unique<ToyEmbeddingExtractor>(spec, seed);
  throw ConfigError("unknown embedding extractor '" + spec.name + "'");
}

std::vector<SpeakerEmbedding> extract_local_embeddings(std::span<const float> window,
                                                       const SegmentationOutput& segmentation,
                                                       const EmbeddingExtractor& extractor, int window_index) {
  const Activity& act = segmentation.activity;
  const double fd = extractor.spec().frame_duration;
  std::vector<SpeakerEmbedding> out;
  for (Eigen::Index slot = 0; slot < act.cols(); ++slot) {
    std::vector<int> frames;
    for (Eigen::Index t = 0; t < act.rows(); ++t) {
      if (act(t, slot) == 0) continue;
      int active = 0;
      for (Eigen::Index s = 0; s < act.cols(); ++s) active += act(t, s) != 0;
      if (active == 1) frames.push_back(static_cast<int>(t));
    }
    const double duration = static_cast<double>(frames.size()) * fd;
    if (frames.empty() || duration <= extractor.spec().min_active_duration) continue;
    Eigen::VectorXd v = extractor.embed(window, frames);
    const double norm = v.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) continue;
    out.push_back({v / norm, window_index, static_cast<int>(slot), duration});
  }
  return out;
}

}  // namespace eendvc
