// SPDX-License-Identifier: Apache-2.0
//
// Mono PCM audio I/O and spectral front-end helpers.

#pragma once

#include <complex>
#include <span>
#include <string>
#include <vector>

#include "eendvc/autograd.hpp"

namespace eendvc {

constexpr int kSampleRate = 16000;

struct Waveform {
  std::vector<float> samples;
  int sample_rate = kSampleRate;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Reads 16-bit PCM (or 32-bit float) mono RIFF/WAVE.
Waveform read_wav(const std::string& path);
/// Writes 16-bit PCM mono; samples are clipped to [-1, 1].
void write_wav(const std::string& path, const Waveform& wave);

std::vector<double> hann_window(int length, bool periodic = true);

/// |FFT|^2 of `frame` zero-padded to n_fft; returns n_fft / 2 + 1 bins.
std::vector<double> power_spectrum(std::span<const double> frame, int n_fft);

/// Slaney-style triangular mel filters with area normalisation
/// (n_mels x (n_fft / 2 + 1)).
nn::Matrix mel_filterbank(int n_mels, int n_fft, int sample_rate, double f_min, double f_max);

}  // namespace eendvc
