// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "eendvc/audio.hpp"
#include "eendvc/encoder.hpp"
#include "eendvc/error.hpp"
#include "eendvc/tensor_io.hpp"

namespace eendvc {
namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 0.1f);
  std::vector<float> out(n);
  for (auto& s : out) s = normal(rng);
  return out;
}

EncoderSpec small_wavlm() {
  EncoderSpec s = encoder_spec("wavlm-large");
  s.name = "wavlm-small-test";
  s.blocks = 2;
  s.layer_count = 3;
  s.hidden_size = 32;
  s.heads = 4;
  s.ff_dim = 48;
  return s;
}

EncoderSpec small_whisper() {
  EncoderSpec s = encoder_spec("whisper-base");
  s.name = "whisper-small-test";
  s.blocks = 2;
  s.layer_count = 3;
  s.hidden_size = 16;
  s.heads = 2;
  s.ff_dim = 32;
  return s;
}

nn::Parameter* find(Encoder& enc, const std::string& name) {
  nn::Parameter* out = nullptr;
  enc.visit("", [&](const std::string& n, nn::Parameter& p) {
    if (n == name) out = &p;
  });
  return out;
}

TEST(Encoder, RegistryAndSpecs) {
  const auto names = known_encoders();
  for (const char* n : {"toy", "toy-transformer", "whisper-base", "whisper-small", "whisper-medium", "wavlm-base-plus",
                        "wavlm-large", "wavlm-diarizen"})
    EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
  EXPECT_THROW(encoder_spec("hubert"), ConfigError);
  EXPECT_EQ(encoder_spec("whisper-small").layer_count, 13);
  EXPECT_EQ(encoder_spec("wavlm-large").layer_count, 25);
  EXPECT_EQ(encoder_spec("wavlm-base-plus").hidden_size, 768);
  for (const auto& n : names) EXPECT_DOUBLE_EQ(encoder_spec(n).output_frame_duration, 0.02);
}

TEST(Encoder, ToyShapesAndFrameRate) {
  auto enc = make_encoder("toy");
  const auto wave = noise(8 * 16000, 1);
  const auto stack = enc->encode_window(wave, 16000);
  EXPECT_EQ(stack.layer_count(), 4);
  EXPECT_EQ(stack.frames(), 400);
  EXPECT_EQ(stack.hidden(), 32);
  const auto sixteen = enc->encode_window(noise(16 * 16000, 2), 16000);
  EXPECT_EQ(sixteen.frames(), 800);
}

TEST(Encoder, ToySilenceGivesZeros) {
  auto enc = make_encoder("toy");
  const std::vector<float> silence(16000, 0.0f);
  for (const auto& layer : enc->encode_window(silence, 16000).layers) EXPECT_EQ(layer.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Encoder, DeterministicForSeed) {
  const auto wave = noise(32000, 3);
  for (const char* name : {"toy", "toy-transformer"}) {
    auto a = make_encoder(name, {.seed = 5});
    auto b = make_encoder(name, {.seed = 5});
    auto c = make_encoder(name, {.seed = 6});
    const auto sa = a->encode_window(wave, 16000);
    const auto sb = b->encode_window(wave, 16000);
    const auto sc = c->encode_window(wave, 16000);
    for (int l = 0; l < sa.layer_count(); ++l) EXPECT_EQ(sa.layers[l], sb.layers[l]);
    EXPECT_NE(sa.layers.back(), sc.layers.back());
  }
}

TEST(Encoder, RejectsBadInput) {
  auto enc = make_encoder("toy");
  auto wave = noise(16000, 4);
  EXPECT_THROW(enc->encode_window(wave, 8000), Error);
  wave[10] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(enc->encode_window(wave, 16000), NumericalError);
}

TEST(Encoder, ToyOffersFrozenOnly) {
  auto enc = make_encoder("toy");
  const auto info = enc->surfaces();
  EXPECT_TRUE(info.supports(TrainableSurface::frozen));
  EXPECT_FALSE(info.supports(TrainableSurface::feed_forward_lora));
  EXPECT_THROW(enc->attach_lora(16, 16, 0), CapabilityError);
  EXPECT_THROW(enc->set_surface(TrainableSurface::full), CapabilityError);
  EXPECT_EQ(enc->trainable_parameter_count(), 0);
  EXPECT_EQ(info.encoder_parameters, enc->parameter_count());
}

TEST(Encoder, LoRAParameterCount) {
  const auto info = list_trainable_surfaces(encoder_spec("toy-transformer"));
  EXPECT_EQ(info.lora_targets.size(), 4u);
  EXPECT_EQ(info.lora_parameter_count(16), 6144);
  auto enc = make_encoder("toy-transformer");
  EXPECT_THROW(enc->set_surface(TrainableSurface::feed_forward_lora), CapabilityError);
  enc->attach_lora(16, 16, 7);
  enc->set_surface(TrainableSurface::feed_forward_lora);
  EXPECT_EQ(enc->trainable_parameter_count(), 6144);
  enc->set_surface(TrainableSurface::full);
  EXPECT_EQ(enc->trainable_parameter_count(), enc->parameter_count());
  enc->set_surface(TrainableSurface::frozen);
  EXPECT_EQ(enc->trainable_parameter_count(), 0);
}

TEST(Encoder, RemovingAdaptersRestoresBaseOutput) {
  auto enc = make_encoder("toy-transformer", {.seed = 11});
  const auto wave = noise(48000, 5);
  const auto base = enc->encode_window(wave, 16000);
  enc->attach_lora(16, 16, 3);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 0.5);
  enc->visit("", [&](const std::string& name, nn::Parameter& p) {
    if (name.ends_with("lora_B"))
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = normal(rng);
  });
  const auto adapted = enc->encode_window(wave, 16000);
  EXPECT_GT((adapted.layers.back() - base.layers.back()).norm(), 1e-3);
  enc->merge_lora();
  enc->unmerge_lora();
  enc->remove_lora();
  EXPECT_FALSE(enc->has_lora());
  const auto restored = enc->encode_window(wave, 16000);
  for (int l = 0; l < base.layer_count(); ++l)
    EXPECT_LT((restored.layers[l] - base.layers[l]).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Encoder, MergedAdaptersMatchUnmerged) {
  auto enc = make_encoder("toy-transformer", {.seed = 2});
  enc->attach_lora(4, 4, 9);
  enc->visit("", [](const std::string& name, nn::Parameter& p) {
    if (name.ends_with("lora_B")) p.value.setConstant(0.05);
  });
  const auto wave = noise(16000, 6);
  const auto adapted = enc->encode_window(wave, 16000);
  enc->merge_lora();
  enc->remove_lora();
  const auto merged = enc->encode_window(wave, 16000);
  EXPECT_LT((merged.layers.back() - adapted.layers.back()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Encoder, AnalyticParameterCounts) {
  for (const char* name : {"toy", "toy-transformer", "whisper-base"}) {
    auto enc = make_encoder(name);
    EXPECT_EQ(list_trainable_surfaces(enc->spec()).encoder_parameters, enc->parameter_count()) << name;
  }
  for (const auto& spec : {small_wavlm(), small_whisper()}) {
    auto enc = make_encoder(spec);
    EXPECT_EQ(list_trainable_surfaces(spec).encoder_parameters, enc->parameter_count()) << spec.name;
  }
  auto base_plus = small_wavlm();
  base_plus.pre_norm = false;
  base_plus.conv_layer_norm = false;
  EXPECT_EQ(list_trainable_surfaces(base_plus).encoder_parameters, make_encoder(base_plus)->parameter_count());
}

TEST(Encoder, TransformerBackendsShareFrameRate) {
  const auto wave = noise(16000, 7);
  auto post_norm = small_wavlm();
  post_norm.pre_norm = false;
  post_norm.conv_layer_norm = false;
  for (const auto& spec : {small_wavlm(), post_norm, small_whisper()}) {
    auto enc = make_encoder(spec, {.seed = 1});
    const auto stack = enc->encode_window(wave, 16000);
    EXPECT_EQ(stack.layer_count(), spec.layer_count) << spec.name;
    EXPECT_EQ(stack.frames(), 50) << spec.name;
    EXPECT_EQ(stack.hidden(), spec.hidden_size) << spec.name;
  }
}

TEST(Encoder, WhisperPositionsStayFixed) {
  auto enc = make_encoder(small_whisper());
  enc->set_surface(TrainableSurface::full);
  EXPECT_FALSE(find(*enc, "encoder.embed_positions.weight")->trainable);
  EXPECT_TRUE(find(*enc, "encoder.conv1.weight")->trainable);
}

TEST(Encoder, LoadsPrefixedCheckpoint) {
  const auto path = std::filesystem::temp_directory_path() / "eendvc_encoder_weights.safetensors";
  auto source = make_encoder("toy-transformer", {.seed = 21});
  TensorArchive archive;
  source->visit("", [&](const std::string& name, nn::Parameter& p) { archive.put("model." + name, p.value); });
  write_safetensors(path.string(), archive);
  auto target = make_encoder("toy-transformer", {.seed = 22, .weights_path = path.string()});
  const auto wave = noise(16000, 8);
  EXPECT_LT((source->encode_window(wave, 16000).layers.back() - target->encode_window(wave, 16000).layers.back())
                .cwiseAbs()
                .maxCoeff(),
            1e-12);
  archive.tensors.erase("model.blocks.1.fc2.weight");
  write_safetensors(path.string(), archive);
  EXPECT_THROW(make_encoder("toy-transformer", {.weights_path = path.string()}), IoError);
  std::filesystem::remove(path);
}

TEST(Encoder, LoadsWeightNormalisedPositionalConv) {
  const auto spec = small_wavlm();
  auto source = make_encoder(spec, {.seed = 1});
  TensorArchive archive;
  source->visit("", [&](const std::string& name, nn::Parameter& p) {
    if (name != "encoder.pos_conv_embed.conv.weight") archive.put("wavlm." + name, p.value);
  });
  const int d = spec.hidden_size, in = d / 16, k = 128;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  nn::Matrix v(d, in * k);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = normal(rng);
  nn::Matrix g(1, k);
  for (int tap = 0; tap < k; ++tap) g(0, tap) = 0.5 + 0.01 * tap;
  archive.tensors["wavlm.encoder.pos_conv_embed.conv.weight_v"] = StoredTensor{{d, in, k}, v};
  archive.tensors["wavlm.encoder.pos_conv_embed.conv.weight_g"] = StoredTensor{{1, 1, k}, g.transpose()};
  const auto path = std::filesystem::temp_directory_path() / "eendvc_wavlm_weights.safetensors";
  write_safetensors(path.string(), archive);
  auto target = make_encoder(spec, {.seed = 2, .weights_path = path.string()});
  const nn::Matrix& w = find(*target, "encoder.pos_conv_embed.conv.weight")->value;
  for (int tap : {0, 17, 127}) {
    double norm = 0.0;
    for (int o = 0; o < d; ++o)
      for (int i = 0; i < in; ++i) norm += w(o, i * k + tap) * w(o, i * k + tap);
    EXPECT_NEAR(std::sqrt(norm), g(0, tap), 1e-9);
  }
  std::filesystem::remove(path);
}

TEST(AudioFrontEnd, MelFilterbankCoversSpectrum) {
  const auto fb = mel_filterbank(40, 512, 16000, 0.0, 8000.0);
  EXPECT_EQ(fb.rows(), 40);
  EXPECT_EQ(fb.cols(), 257);
  EXPECT_GE(fb.minCoeff(), 0.0);
  for (int m = 0; m < 40; ++m) EXPECT_GT(fb.row(m).sum(), 0.0);
}

TEST(AudioFrontEnd, WhisperLogMelShape) {
  std::vector<float> wave(480000, 0.0f);
  const auto mel = whisper_log_mel(wave, 80);
  EXPECT_EQ(mel.rows(), 3000);
  EXPECT_EQ(mel.cols(), 80);
  EXPECT_TRUE(mel.allFinite());
}

TEST(AudioFrontEnd, WavRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "eendvc_roundtrip.wav";
  Waveform w;
  w.samples = noise(1234, 9);
  write_wav(path.string(), w);
  const auto back = read_wav(path.string());
  ASSERT_EQ(back.samples.size(), w.samples.size());
  EXPECT_EQ(back.sample_rate, 16000);
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(back.samples[i], w.samples[i], 1.0 / 32767);
  std::filesystem::remove(path);
}

TEST(TensorIo, SafetensorsRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "eendvc_tensors.safetensors";
  TensorArchive a;
  a.metadata["config"] = "{\"x\":1}";
  a.put("b", nn::Matrix::Constant(2, 3, 0.25));
  a.put("a", nn::Matrix::Identity(4, 4));
  write_safetensors(path.string(), a);
  const auto b = read_safetensors(path.string());
  EXPECT_EQ(b.metadata.at("config"), "{\"x\":1}");
  EXPECT_EQ(b.find("a")->data, a.find("a")->data);
  EXPECT_EQ(b.find("b")->shape, (std::vector<std::int64_t>{2, 3}));
  EXPECT_EQ(b.find("missing"), nullptr);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace eendvc
