// SPDX-License-Identifier: Apache-2.0

#include "eendvc/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <spdlog/spdlog.h>

#include "eendvc/audio.hpp"
#include "eendvc/error.hpp"
#include "eendvc/tensor_io.hpp"
#include "foundation.hpp"

namespace eendvc {

namespace {

EncoderSpec transformer_spec(std::string name, EncoderFamily family, int blocks, int hidden, int heads, int ff) {
  EncoderSpec s;
  s.name = std::move(name);
  s.family = family;
  s.blocks = blocks;
  s.layer_count = blocks + 1;
  s.hidden_size = hidden;
  s.heads = heads;
  s.ff_dim = ff;
  return s;
}

const std::map<std::string, EncoderSpec>& registry() {
  static const std::map<std::string, EncoderSpec> specs = [] {
    std::map<std::string, EncoderSpec> m;
    EncoderSpec toy;
    toy.name = "toy";
    m.emplace(toy.name, toy);

    auto tt = transformer_spec("toy-transformer", EncoderFamily::toy_transformer, 2, 32, 4, 64);
    m.emplace(tt.name, tt);

    for (auto [name, blocks, hidden, heads] : {std::tuple{"whisper-base", 6, 512, 8},
                                               std::tuple{"whisper-small", 12, 768, 12},
                                               std::tuple{"whisper-medium", 24, 1024, 16}}) {
      auto s = transformer_spec(name, EncoderFamily::whisper, blocks, hidden, heads, 4 * hidden);
      s.n_mels = 80;
      s.fixed_input_length = 30.0;
      m.emplace(s.name, s);
    }

    auto base_plus = transformer_spec("wavlm-base-plus", EncoderFamily::wavlm, 12, 768, 12, 3072);
    base_plus.pre_norm = false;
    m.emplace(base_plus.name, base_plus);
    auto large = transformer_spec("wavlm-large", EncoderFamily::wavlm, 24, 1024, 16, 4096);
    large.conv_layer_norm = true;
    m.emplace(large.name, large);
    auto diarizen = large;
    diarizen.name = "wavlm-diarizen";
    m.emplace(diarizen.name, diarizen);
    return m;
  }();
  return specs;
}

}  // namespace

EncoderSpec encoder_spec(const std::string& name) {
  const auto& r = registry();
  auto it = r.find(name);
  if (it == r.end()) throw ConfigError("unknown encoder '" + name + "'");
  return it->second;
}

std::vector<std::string> known_encoders() {
  std::vector<std::string> names;
  for (const auto& [name, spec] : registry()) names.push_back(name);
  return names;
}

std::string to_string(TrainableSurface surface) {
  switch (surface) {
    case TrainableSurface::frozen: return "frozen";
    case TrainableSurface::feed_forward_lora: return "lora";
    case TrainableSurface::full: return "full";
  }
  return "frozen";
}

TrainableSurface parse_surface(const std::string& text) {
  if (text == "frozen") return TrainableSurface::frozen;
  if (text == "lora" || text == "feed-forward-lora") return TrainableSurface::feed_forward_lora;
  if (text == "full") return TrainableSurface::full;
  throw ConfigError("unknown fine-tuning surface '" + text + "'");
}

bool SurfaceInfo::supports(TrainableSurface s) const {
  return std::find(surfaces.begin(), surfaces.end(), s) != surfaces.end();
}

std::int64_t SurfaceInfo::lora_parameter_count(int rank) const {
  std::int64_t n = 0;
  for (const auto& t : lora_targets) n += static_cast<std::int64_t>(rank) * (t.rows + t.cols);
  return n;
}

SurfaceInfo list_trainable_surfaces(const EncoderSpec& spec) {
  SurfaceInfo info;
  info.surfaces.push_back(TrainableSurface::frozen);
  if (spec.family == EncoderFamily::toy) {
    info.encoder_parameters = static_cast<std::int64_t>(spec.layer_count) * 40 * spec.hidden_size;
    return info;
  }
  info.surfaces.push_back(TrainableSurface::feed_forward_lora);
  info.surfaces.push_back(TrainableSurface::full);
  for (int b = 0; b < spec.blocks; ++b) {
    const std::string base = foundation::block_prefix(spec, b);
    const auto [up, down] = foundation::feed_forward_names(spec);
    info.lora_targets.push_back({base + up + ".weight", spec.ff_dim, spec.hidden_size});
    info.lora_targets.push_back({base + down + ".weight", spec.hidden_size, spec.ff_dim});
  }
  info.encoder_parameters = foundation::parameter_count(spec);
  return info;
}

int Encoder::frames_for(std::size_t samples) const {
  const double frames = static_cast<double>(samples) / (spec_.sample_rate * spec_.output_frame_duration);
  return static_cast<int>(std::llround(frames));
}

LayerStack Encoder::encode_window(std::span<const float> waveform, int sample_rate) const {
  if (sample_rate != spec_.sample_rate)
    throw Error("encoder " + spec_.name + " expects " + std::to_string(spec_.sample_rate) + " Hz audio, got " +
                std::to_string(sample_rate));
  for (float s : waveform)
    if (!std::isfinite(s)) throw NumericalError("waveform contains non-finite samples");
  nn::Tape tape(false);
  const auto vars = forward(tape, waveform, nn::Mode{});
  LayerStack stack;
  stack.layers.reserve(vars.size());
  for (const auto& v : vars) stack.layers.push_back(v.value());
  for (std::size_t l = 0; l < stack.layers.size(); ++l)
    if (!stack.layers[l].allFinite())
      throw NumericalError("encoder " + spec_.name + " produced non-finite values in layer " + std::to_string(l));
  return stack;
}

void Encoder::set_surface(TrainableSurface surface) {
  if (!surfaces().supports(surface))
    throw CapabilityError("encoder " + spec_.name + " does not support the " + to_string(surface) + " surface");
  if (surface == TrainableSurface::feed_forward_lora && !lora_attached_)
    throw CapabilityError("LoRA surface requested before adapters were attached");
  surface_ = surface;
  visit("", [&](const std::string& name, nn::Parameter& p) {
    const bool is_lora = name.find("lora_") != std::string::npos;
    switch (surface) {
      case TrainableSurface::frozen: p.trainable = false; break;
      case TrainableSurface::feed_forward_lora: p.trainable = is_lora; break;
      case TrainableSurface::full: p.trainable = !foundation::is_fixed_buffer(name); break;
    }
  });
}

void Encoder::attach_lora(int rank, double alpha, std::uint64_t seed) {
  auto layers = lora_layers();
  if (layers.empty())
    throw CapabilityError("encoder " + spec_.name + " has no transformer feed-forward layers for LoRA");
  nn::Rng rng(seed);
  for (auto* l : layers) l->attach_lora(rank, alpha, rng);
  lora_attached_ = true;
  set_surface(surface_ == TrainableSurface::feed_forward_lora ? surface_ : surface_);
}

void Encoder::remove_lora() {
  for (auto* l : lora_layers()) l->remove_lora();
  lora_attached_ = false;
  if (surface_ == TrainableSurface::feed_forward_lora) set_surface(TrainableSurface::frozen);
}

void Encoder::merge_lora() {
  for (auto* l : lora_layers()) l->merge_lora();
}

void Encoder::unmerge_lora() {
  for (auto* l : lora_layers()) l->unmerge_lora();
}

std::int64_t Encoder::parameter_count() {
  std::int64_t n = 0;
  visit("", [&](const std::string&, nn::Parameter& p) { n += p.size(); });
  return n;
}

std::int64_t Encoder::trainable_parameter_count() {
  std::int64_t n = 0;
  visit("", [&](const std::string&, nn::Parameter& p) {
    if (p.trainable) n += p.size();
  });
  return n;
}

void Encoder::load_weights(const std::string& path) {
  const auto archive = read_safetensors(path);
  std::map<std::string, const StoredTensor*> by_name;
  for (const auto& [name, t] : archive.tensors) by_name[foundation::normalize_name(spec_, name)] = &t;
  std::vector<std::string> missing;
  visit("", [&](const std::string& name, nn::Parameter& p) {
    if (name.find("lora_") != std::string::npos) return;
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      missing.push_back(name);
      return;
    }
    const auto& t = *it->second;
    if (t.data.size() != p.value.size() || (p.value.rows() > 1 && t.data.rows() != p.value.rows()))
      throw ShapeError("tensor '" + name + "' has an unexpected shape");
    std::copy_n(t.data.data(), t.data.size(), p.value.data());
  });
  foundation::load_special(spec_, archive, *this, missing);
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < std::min<std::size_t>(missing.size(), 5); ++i) list += " " + missing[i];
    throw IoError(path + ": " + std::to_string(missing.size()) + " encoder tensors missing:" + list);
  }
  spdlog::info("loaded {} encoder weights from {}", spec_.name, path);
}

nn::Matrix toy_filterbank_features(std::span<const float> waveform, int frames) {
  constexpr int kHop = 320, kWin = 400, kFft = 512, kMels = 40;
  constexpr double kPowerScale = 1e4;
  static const nn::Matrix filters = mel_filterbank(kMels, kFft, kSampleRate, 0.0, kSampleRate / 2.0);
  static const std::vector<double> window = hann_window(kWin);
  nn::Matrix features(frames, kMels);
  std::vector<double> frame(kWin);
  const auto n = static_cast<long>(waveform.size());
  for (int t = 0; t < frames; ++t) {
    const long begin = static_cast<long>(t) * kHop + kHop / 2 - kWin / 2;
    for (int i = 0; i < kWin; ++i) {
      const long s = begin + i;
      frame[static_cast<std::size_t>(i)] =
          (s >= 0 && s < n) ? waveform[static_cast<std::size_t>(s)] * window[static_cast<std::size_t>(i)] : 0.0;
    }
    const auto power = power_spectrum(frame, kFft);
    const Eigen::Map<const Eigen::VectorXd> p(power.data(), static_cast<Eigen::Index>(power.size()));
    features.row(t) = (kPowerScale * (filters * p).array()).log1p().matrix().transpose();
  }
  return features;
}

nn::Matrix whisper_log_mel(std::span<const float> waveform, int n_mels) {
  constexpr int kFft = 400, kHop = 160;
  static const std::vector<double> window = hann_window(kFft);
  const nn::Matrix filters = mel_filterbank(n_mels, kFft, kSampleRate, 0.0, kSampleRate / 2.0);
  const auto n = static_cast<long>(waveform.size());
  if (n <= kFft / 2) throw Error("waveform too short for the log-mel front end");
  const int frames = static_cast<int>(n / kHop);  // the final STFT frame is dropped
  nn::Matrix mel(frames, n_mels);
  std::vector<double> frame(kFft);
  auto reflect = [n](long i) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
  };
  for (int t = 0; t < frames; ++t) {
    const long begin = static_cast<long>(t) * kHop - kFft / 2;
    for (int i = 0; i < kFft; ++i)
      frame[static_cast<std::size_t>(i)] =
          waveform[static_cast<std::size_t>(reflect(begin + i))] * window[static_cast<std::size_t>(i)];
    const auto power = power_spectrum(frame, kFft);
    const Eigen::Map<const Eigen::VectorXd> p(power.data(), static_cast<Eigen::Index>(power.size()));
    mel.row(t) = (filters * p).transpose();
  }
  mel = mel.cwiseMax(1e-10).array().log10().matrix();
  const double floor = mel.maxCoeff() - 8.0;
  mel = ((mel.cwiseMax(floor).array() + 4.0) / 4.0).matrix();
  return mel;
}

namespace {

/// Mel filterbank followed by a seeded linear map per pseudo-layer.
class ToyEncoder final : public Encoder {
 public:
  ToyEncoder(EncoderSpec spec, std::uint64_t seed) : Encoder(std::move(spec)) {
    nn::Rng rng(seed ^ 0x70795eedULL);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(40.0));
    for (int l = 0; l < spec_.layer_count; ++l) {
      nn::Parameter p(nn::Matrix(40, spec_.hidden_size).unaryExpr([&](double) { return normal(rng); }));
      p.trainable = false;
      maps_.push_back(std::move(p));
    }
  }

  std::vector<nn::Var> forward(nn::Tape& tape, std::span<const float> waveform, const nn::Mode&) const override {
    const nn::Var features = tape.constant(toy_filterbank_features(waveform, frames_for(waveform.size())));
    std::vector<nn::Var> out;
    for (const auto& m : maps_) out.push_back(nn::matmul(features, tape.param(m)));
    return out;
  }

  void visit(const std::string& prefix, const nn::ParamVisitor& fn) override {
    for (std::size_t l = 0; l < maps_.size(); ++l) fn(prefix + "maps." + std::to_string(l), maps_[l]);
  }

 private:
  std::vector<nn::Parameter> maps_;
};

}  // namespace

std::unique_ptr<Encoder> make_encoder(const EncoderSpec& spec, const EncoderOptions& options) {
  std::unique_ptr<Encoder> enc;
  switch (spec.family) {
    case EncoderFamily::toy: enc = std::make_unique<ToyEncoder>(spec, options.seed); break;
    default: enc = foundation::make(spec, options.seed); break;
  }
  if (!options.weights_path.empty()) enc->load_weights(options.weights_path);
  enc->set_surface(TrainableSurface::frozen);
  return enc;
}

std::unique_ptr<Encoder> make_encoder(const std::string& name, const EncoderOptions& options) {
  return make_encoder(encoder_spec(name), options);
}

}  // namespace eendvc
