// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multi-speaker scenes: harmonic-plus-noise voices with
// age-dependent pitch, speaking rate and pausing, plus an exact reference.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eendvc/audio.hpp"
#include "eendvc/timeline.hpp"

namespace eendvc {

struct VoiceParams {
  std::string group = "adult-male";  // adult-male, adult-female, older-male, older-female, child
  double f0 = 120.0;                 // Hz
  double rate = 1.0;                 // speaking-rate multiplier
  double pause_probability = 0.2;    // chance of an internal pause per turn
  double formant_scale = 1.0;        // vocal-tract length factor
  double amplitude = 0.25;
};

struct SyntheticSceneSpec {
  std::string uri = "scene";
  int num_speakers = 2;
  double duration = 120.0;         // seconds
  double mean_turn = 3.0;          // seconds, before the rate multiplier
  double turn_spread = 0.4;        // log-normal sigma
  double overlap_fraction = 0.1;   // overlapped time / total speaker time
  std::string age_group = "adult";  // adult, older-adult, child-adult
  std::vector<VoiceParams> voices;  // empty: drawn from age_group and seed
  double noise_level = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Scene {
  Waveform audio;
  Annotation reference;
  std::vector<VoiceParams> voices;
};

/// Voices for `count` speakers of an age group, deterministic in `seed`.
std::vector<VoiceParams> draw_voices(const std::string& age_group, int count, std::uint64_t seed);

/// Deterministic in the spec (including seed). Reference segments are exactly
/// the intervals in which each voice is rendered.
Scene generate_scene(const SyntheticSceneSpec& spec);

}  // namespace eendvc
