// SPDX-License-Identifier: Apache-2.0

#include "eendvc/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <unsupported/Eigen/FFT>

#include "eendvc/error.hpp"

namespace eendvc {

namespace {

template <typename T>
T read_le(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void put_le(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw IoError(path + ": not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const auto size = read_le<std::uint32_t>(&bytes[pos + 4]);
    const unsigned char* body = &bytes[pos + 8];
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - pos - 8);
    if (std::memcmp(&bytes[pos], "fmt ", 4) == 0 && avail >= 16) {
      format = read_le<std::uint16_t>(body);
      channels = read_le<std::uint16_t>(body + 2);
      rate = read_le<std::uint32_t>(body + 4);
      bits = read_le<std::uint16_t>(body + 14);
      if (format == 0xFFFE && avail >= 26) format = read_le<std::uint16_t>(body + 24);
    } else if (std::memcmp(&bytes[pos], "data", 4) == 0) {
      data = body;
      data_size = avail;
    }
    pos += 8 + size + (size & 1u);
  }
  if (!data) throw IoError(path + ": missing data chunk");
  if (channels != 1) throw IoError(path + ": only mono audio is supported");

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    w.samples.resize(data_size / 2);
    for (std::size_t i = 0; i < w.samples.size(); ++i)
      w.samples[i] = static_cast<float>(read_le<std::int16_t>(data + 2 * i)) / 32768.0f;
  } else if (format == 3 && bits == 32) {
    w.samples.resize(data_size / 4);
    for (std::size_t i = 0; i < w.samples.size(); ++i) w.samples[i] = read_le<float>(data + 4 * i);
  } else {
    throw IoError(path + ": unsupported sample format");
  }
  return w;
}

void write_wav(const std::string& path, const Waveform& wave) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const auto n = static_cast<std::uint32_t>(wave.samples.size());
  out.write("RIFF", 4);
  put_le<std::uint32_t>(out, 36 + 2 * n);
  out.write("WAVEfmt ", 8);
  put_le<std::uint32_t>(out, 16);
  put_le<std::uint16_t>(out, 1);
  put_le<std::uint16_t>(out, 1);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(wave.sample_rate));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  put_le<std::uint16_t>(out, 2);
  put_le<std::uint16_t>(out, 16);
  out.write("data", 4);
  put_le<std::uint32_t>(out, 2 * n);
  for (float s : wave.samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    put_le<std::int16_t>(out, static_cast<std::int16_t>(std::lrint(c * 32767.0f)));
  }
  if (!out) throw IoError("short write to " + path);
}

std::vector<double> hann_window(int length, bool periodic) {
  std::vector<double> w(static_cast<std::size_t>(length));
  const double denom = periodic ? length : length - 1;
  for (int i = 0; i < length; ++i) w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / denom);
  return w;
}

std::vector<double> power_spectrum(std::span<const double> frame, int n_fft) {
  std::vector<double> padded(static_cast<std::size_t>(n_fft), 0.0);
  std::copy_n(frame.begin(), std::min<std::size_t>(frame.size(), padded.size()), padded.begin());
  // kissfft plans are cached per instance; one per thread keeps calls reentrant.
  thread_local Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, padded);
  std::vector<double> power(static_cast<std::size_t>(n_fft / 2 + 1));
  for (std::size_t k = 0; k < power.size(); ++k) power[k] = std::norm(spec[k]);
  return power;
}

namespace {
double hz_to_mel(double f) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return f >= min_log_hz ? min_log_mel + std::log(f / min_log_hz) / logstep : f / f_sp;
}

double mel_to_hz(double m) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return m >= min_log_mel ? min_log_hz * std::exp(logstep * (m - min_log_mel)) : f_sp * m;
}
}  // namespace

nn::Matrix mel_filterbank(int n_mels, int n_fft, int sample_rate, double f_min, double f_max) {
  const int bins = n_fft / 2 + 1;
  std::vector<double> mel_f(static_cast<std::size_t>(n_mels + 2));
  const double lo = hz_to_mel(f_min), hi = hz_to_mel(f_max);
  for (int i = 0; i < n_mels + 2; ++i)
    mel_f[static_cast<std::size_t>(i)] = mel_to_hz(lo + (hi - lo) * i / (n_mels + 1));
  nn::Matrix w = nn::Matrix::Zero(n_mels, bins);
  for (int m = 0; m < n_mels; ++m) {
    const double left = mel_f[static_cast<std::size_t>(m)];
    const double centre = mel_f[static_cast<std::size_t>(m + 1)];
    const double right = mel_f[static_cast<std::size_t>(m + 2)];
    const double enorm = 2.0 / (right - left);
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      const double lower = (f - left) / (centre - left);
      const double upper = (right - f) / (right - centre);
      w(m, k) = std::max(0.0, std::min(lower, upper)) * enorm;
    }
  }
  return w;
}

}  // namespace eendvc
