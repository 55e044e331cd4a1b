// SPDX-License-Identifier: Apache-2.0

#include "eendvc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "eendvc/error.hpp"

namespace eendvc {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kMinSegment = 0.4;
constexpr double kMinOverlap = 0.3;
constexpr double kFade = 0.01;

struct Band {
  const char* group;
  double f0_low, f0_high, rate, pause, formant;
};

constexpr Band kBands[] = {
    {"adult-male", 85.0, 150.0, 1.0, 0.2, 1.0},    {"adult-female", 170.0, 250.0, 1.0, 0.2, 1.15},
    {"older-male", 75.0, 140.0, 0.85, 0.35, 0.97}, {"older-female", 150.0, 220.0, 0.85, 0.35, 1.1},
    {"child", 250.0, 400.0, 1.1, 0.3, 1.35},
};

const Band& band(const std::string& group) {
  for (const auto& b : kBands)
    if (group == b.group) return b;
  throw ConfigError("unknown voice group '" + group + "'");
}

double round_ms(double t) { return std::round(t * 1000.0) / 1000.0; }

struct Planned {
  double start, end;
  int speaker;
};

std::vector<Planned> plan_turns(const SyntheticSceneSpec& spec, const std::vector<VoiceParams>& voices,
                                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal;
  std::vector<Planned> segments;
  const double limit = spec.duration - 0.1;
  double cursor = 0.2 + 0.5 * unit(rng);
  int speaker = static_cast<int>(unit(rng) * spec.num_speakers) % spec.num_speakers;
  double speech = 0.0, overlap = 0.0;
  double last_start = cursor;  // start of the previous turn's final segment
  double earlier_end = 0.0;    // end of the turn before the previous one

  while (cursor < limit - kMinSegment) {
    const auto& v = voices[static_cast<std::size_t>(speaker)];
    const double length =
        std::clamp(spec.mean_turn / v.rate * std::exp(spec.turn_spread * normal(rng) - 0.5 * spec.turn_spread * spec.turn_spread),
                   1.0, 8.0);
    std::vector<std::pair<double, double>> turn;
    if (length > 2.0 && unit(rng) < v.pause_probability) {
      const double split = length * (0.35 + 0.3 * unit(rng));
      const double pause = 0.3 + 0.3 * unit(rng);
      turn = {{cursor, cursor + split}, {cursor + split + pause, cursor + length + pause}};
    } else {
      turn = {{cursor, cursor + length}};
    }
    for (auto& [s, e] : turn) {
      s = round_ms(s);
      e = round_ms(std::min(e, limit));
      if (e - s >= kMinSegment) {
        segments.push_back({s, e, speaker});
        speech += e - s;
      }
    }
    if (segments.empty() || turn.back().second >= limit) break;

    const double end = segments.back().end;
    last_start = segments.back().start;
    int next = speaker;
    if (spec.num_speakers > 1) {
      next = static_cast<int>(unit(rng) * (spec.num_speakers - 1)) % (spec.num_speakers - 1);
      if (next >= speaker) ++next;
    }
    // Overlap with the next turn when that keeps the running overlap ratio near the target.
    const double expected_next = spec.mean_turn / voices[static_cast<std::size_t>(next)].rate;
    const double wanted = spec.overlap_fraction * (speech + expected_next) - overlap;
    const double room = std::min({0.5 * (end - last_start), 0.5 * expected_next, 3.0});
    const double o = std::min({wanted, room, end - earlier_end});
    earlier_end = end;
    if (spec.num_speakers > 1 && spec.overlap_fraction > 0.0 && o >= kMinOverlap) {
      cursor = round_ms(end - o);
      overlap += end - cursor;
    } else {
      cursor = round_ms(end + 0.25 + 0.75 * unit(rng));
    }
    speaker = next;
  }
  return segments;
}

void render(const Planned& seg, const VoiceParams& v, std::vector<float>& out, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal;
  const int sr = kSampleRate;
  const auto first = static_cast<std::size_t>(std::llround(seg.start * sr));
  const auto last = static_cast<std::size_t>(std::llround(seg.end * sr));
  const double formants[3] = {600.0 * v.formant_scale, 1500.0 * v.formant_scale, 2600.0 * v.formant_scale};
  const double bandwidths[3] = {120.0, 180.0, 250.0};
  const double contour_phase = 2 * kPi * unit(rng);
  const double contour_rate = 0.5 + 0.6 * unit(rng);
  const double syllable_rate = 4.0 * v.rate;
  const double syllable_phase = 2 * kPi * unit(rng);
  const int harmonics = std::max(1, static_cast<int>(4000.0 / v.f0));
  std::vector<double> phase(static_cast<std::size_t>(harmonics), 0.0);
  const double duration = seg.end - seg.start;

  std::vector<double> gains(static_cast<std::size_t>(harmonics), 0.0);
  constexpr std::size_t kBlock = 80;
  for (std::size_t n = first; n < last && n < out.size(); ++n) {
    const double t = static_cast<double>(n - first) / sr;
    const double f0 = v.f0 * (1.0 + 0.08 * std::sin(2 * kPi * contour_rate * t + contour_phase) - 0.05 * t / duration);
    if ((n - first) % kBlock == 0) {
      for (int k = 1; k <= harmonics; ++k) {
        const double f = k * f0;
        double gain = 0.15 / k;
        for (int i = 0; i < 3; ++i) {
          const double d = (f - formants[i]) / bandwidths[i];
          gain += std::exp(-0.5 * d * d) / (i + 1);
        }
        gains[static_cast<std::size_t>(k - 1)] = f < 0.45 * sr ? gain : 0.0;
      }
    }
    double sample = 0.0;
    for (int k = 1; k <= harmonics; ++k) {
      auto& p = phase[static_cast<std::size_t>(k - 1)];
      p += 2 * kPi * k * f0 / sr;
      if (p > 2 * kPi) p -= 2 * kPi;
      sample += gains[static_cast<std::size_t>(k - 1)] * std::sin(p);
    }
    const double syllables = 0.65 + 0.35 * std::cos(2 * kPi * syllable_rate * t + syllable_phase);
    const double fade = std::min({1.0, t / kFade, (duration - t) / kFade});
    sample = v.amplitude * syllables * std::max(fade, 0.0) * (0.4 * sample + 0.03 * normal(rng));
    out[n] += static_cast<float>(sample);
  }
}

}  // namespace

void SyntheticSceneSpec::validate() const {
  if (num_speakers < 1) throw ConfigError("a scene needs at least one speaker");
  if (duration <= 1.0) throw ConfigError("scene duration must exceed one second");
  if (overlap_fraction < 0.0 || overlap_fraction >= 1.0) throw ConfigError("overlap fraction must lie in [0, 1)");
  if (mean_turn <= 0.0 || turn_spread < 0.0) throw ConfigError("turn-length parameters must be positive");
  if (!voices.empty() && static_cast<int>(voices.size()) != num_speakers)
    throw ConfigError("voice list length must equal the speaker count");
}

std::vector<VoiceParams> draw_voices(const std::string& age_group, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5851f42d4c957f2dULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::string> groups;
  const bool flip = unit(rng) < 0.5;
  for (int i = 0; i < count; ++i) {
    const bool female = (i % 2 == 1) != flip;
    if (age_group == "adult") {
      groups.emplace_back(female ? "adult-female" : "adult-male");
    } else if (age_group == "older-adult") {
      groups.emplace_back(female ? "older-female" : "older-male");
    } else if (age_group == "child-adult") {
      groups.emplace_back(i == 0 ? "child" : (female ? "adult-female" : "adult-male"));
    } else {
      throw ConfigError("unknown age group '" + age_group + "'");
    }
  }
  std::vector<VoiceParams> voices;
  for (int i = 0; i < count; ++i) {
    const Band& b = band(groups[static_cast<std::size_t>(i)]);
    VoiceParams v;
    v.group = b.group;
    // Spread same-group speakers across the band.
    int same = 0, index = 0;
    for (int j = 0; j < count; ++j)
      if (groups[static_cast<std::size_t>(j)] == groups[static_cast<std::size_t>(i)]) {
        if (j < i) ++index;
        ++same;
      }
    const double slot = (index + 0.25 + 0.5 * unit(rng)) / same;
    v.f0 = b.f0_low + slot * (b.f0_high - b.f0_low);
    v.rate = b.rate * (0.9 + 0.2 * unit(rng));
    v.pause_probability = b.pause;
    v.formant_scale = b.formant * (0.95 + 0.1 * unit(rng));
    v.amplitude = 0.2 + 0.1 * unit(rng);
    voices.push_back(v);
  }
  return voices;
}

Scene generate_scene(const SyntheticSceneSpec& spec) {
  spec.validate();
  Scene scene;
  scene.voices = spec.voices.empty() ? draw_voices(spec.age_group, spec.num_speakers, spec.seed) : spec.voices;
  std::mt19937_64 rng(spec.seed);
  const auto segments = plan_turns(spec, scene.voices, rng);

  const auto total = static_cast<std::size_t>(std::llround(spec.duration * kSampleRate));
  scene.audio.samples.assign(total, 0.0f);
  std::normal_distribution<double> noise(0.0, spec.noise_level);
  for (auto& s : scene.audio.samples) s = static_cast<float>(noise(rng));
  scene.reference = Annotation(spec.uri);
  for (const auto& seg : segments) {
    render(seg, scene.voices[static_cast<std::size_t>(seg.speaker)], scene.audio.samples, rng);
    scene.reference.add(Segment(seg.start, seg.end), spec.uri + "_s" + std::to_string(seg.speaker));
  }
  return scene;
}

}  // namespace eendvc
