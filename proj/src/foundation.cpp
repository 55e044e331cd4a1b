// SPDX-License-Identifier: Apache-2.0

#include "foundation.hpp"

#include <algorithm>
#include <cmath>

#include "eendvc/error.hpp"

namespace eendvc::foundation {

using nn::Linear;
using nn::LayerNorm;
using nn::Matrix;
using nn::Mode;
using nn::MultiHeadAttention;
using nn::Parameter;
using nn::ParamVisitor;
using nn::Rng;
using nn::Tape;
using nn::Var;

namespace {

constexpr int kWhisperPositions = 1500;
constexpr int kWhisperSamples = 480000;
constexpr int kWavLMChannels = 512;
constexpr int kRelBuckets = 320;
constexpr int kRelMaxDistance = 800;
constexpr int kPosConvKernel = 128;
constexpr int kPosConvGroups = 16;

struct ConvShape {
  int kernel;
  int stride;
};
constexpr ConvShape kWavLMConvs[] = {{10, 5}, {3, 2}, {3, 2}, {3, 2}, {3, 2}, {2, 2}, {2, 2}};

Matrix uniform(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Parameter conv_weight(int out, int in_per_group, int kernel, Rng& rng) {
  return Parameter(uniform(out, static_cast<Eigen::Index>(in_per_group) * kernel,
                           1.0 / std::sqrt(static_cast<double>(in_per_group * kernel)), rng));
}

Var ones_col(Tape& tape, Eigen::Index n) { return tape.constant(Matrix::Ones(n, 1)); }

/// Pre-norm transformer block with GELU feed-forward and no key bias.
class PreNormBlock {
 public:
  PreNormBlock(int dim, int heads, int ff, Rng& rng)
      : attn_norm_(dim), ff_norm_(dim), attn_(dim, heads, rng, false), fc1_(dim, ff, true, rng), fc2_(ff, dim, true, rng) {}

  Var forward(Tape& tape, const Var& x, const Mode& mode) const {
    Var h = nn::add(x, attn_.forward(tape, attn_norm_.forward(tape, x), mode, 0.0));
    return nn::add(h, fc2_.forward(tape, nn::gelu(fc1_.forward(tape, ff_norm_.forward(tape, h)))));
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    attn_norm_.visit(prefix + "self_attn_layer_norm.", fn);
    attn_.visit(prefix + "self_attn.", fn);
    ff_norm_.visit(prefix + "final_layer_norm.", fn);
    fc1_.visit(prefix + "fc1.", fn);
    fc2_.visit(prefix + "fc2.", fn);
  }

  Linear* fc1() { return &fc1_; }
  Linear* fc2() { return &fc2_; }

 private:
  LayerNorm attn_norm_, ff_norm_;
  MultiHeadAttention attn_;
  Linear fc1_, fc2_;
};

std::int64_t pre_norm_block_params(std::int64_t d, std::int64_t ff) {
  return 4 * d * d + 3 * d + 4 * d + d * ff + ff + ff * d + d;
}

class ToyTransformerEncoder final : public Encoder {
 public:
  ToyTransformerEncoder(EncoderSpec spec, std::uint64_t seed) : Encoder(std::move(spec)) {
    Rng rng(seed ^ 0x7f4a7c15ULL);
    input_ = Linear(40, spec_.hidden_size, true, rng);
    for (int b = 0; b < spec_.blocks; ++b) blocks_.emplace_back(spec_.hidden_size, spec_.heads, spec_.ff_dim, rng);
    final_norm_ = LayerNorm(spec_.hidden_size);
  }

  std::vector<Var> forward(Tape& tape, std::span<const float> waveform, const Mode& mode) const override {
    const int frames = frames_for(waveform.size());
    const Var features = tape.constant(toy_filterbank_features(waveform, frames));
    Var h = nn::add(input_.forward(tape, features), tape.constant(nn::sinusoidal_positions(frames, spec_.hidden_size)));
    std::vector<Var> out{h};
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      h = blocks_[b].forward(tape, h, mode);
      out.push_back(b + 1 == blocks_.size() ? final_norm_.forward(tape, h) : h);
    }
    return out;
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) override {
    input_.visit(prefix + "input_proj.", fn);
    for (std::size_t b = 0; b < blocks_.size(); ++b)
      blocks_[b].visit(prefix + block_prefix(spec_, static_cast<int>(b)), fn);
    final_norm_.visit(prefix + "layer_norm.", fn);
  }

 protected:
  std::vector<Linear*> lora_layers() override {
    std::vector<Linear*> out;
    for (auto& b : blocks_) {
      out.push_back(b.fc1());
      out.push_back(b.fc2());
    }
    return out;
  }

 private:
  Linear input_;
  std::vector<PreNormBlock> blocks_;
  LayerNorm final_norm_;
};

class WhisperEncoder final : public Encoder {
 public:
  WhisperEncoder(EncoderSpec spec, std::uint64_t seed) : Encoder(std::move(spec)) {
    Rng rng(seed ^ 0x3c6ef372ULL);
    const int d = spec_.hidden_size;
    conv1_w_ = conv_weight(d, spec_.n_mels, 3, rng);
    conv1_b_ = Parameter(uniform(1, d, 1.0 / std::sqrt(3.0 * spec_.n_mels), rng));
    conv2_w_ = conv_weight(d, d, 3, rng);
    conv2_b_ = Parameter(uniform(1, d, 1.0 / std::sqrt(3.0 * d), rng));
    positions_ = Parameter(nn::sinusoidal_positions(kWhisperPositions, d));
    positions_.trainable = false;
    for (int b = 0; b < spec_.blocks; ++b) blocks_.emplace_back(d, spec_.heads, spec_.ff_dim, rng);
    final_norm_ = LayerNorm(d);
  }

  std::vector<Var> forward(Tape& tape, std::span<const float> waveform, const Mode& mode) const override {
    if (waveform.size() > static_cast<std::size_t>(kWhisperSamples))
      throw ShapeError(spec_.name + " accepts at most 30 s of audio per window");
    const int frames = frames_for(waveform.size());
    std::vector<float> padded(kWhisperSamples, 0.0f);
    std::copy(waveform.begin(), waveform.end(), padded.begin());
    const Var mel = tape.constant(whisper_log_mel(padded, spec_.n_mels));
    const Var b1 = tape.param(conv1_b_);
    const Var b2 = tape.param(conv2_b_);
    Var h = nn::gelu(nn::conv1d(mel, tape.param(conv1_w_), &b1, 3, 1, 1, 1));
    h = nn::gelu(nn::conv1d(h, tape.param(conv2_w_), &b2, 3, 2, 1, 1));
    h = nn::add(h, tape.param(positions_));
    std::vector<Var> out{nn::slice_rows(h, 0, frames)};
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      h = blocks_[b].forward(tape, h, mode);
      const Var layer = b + 1 == blocks_.size() ? final_norm_.forward(tape, h) : h;
      out.push_back(nn::slice_rows(layer, 0, frames));
    }
    return out;
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) override {
    fn(prefix + "encoder.conv1.weight", conv1_w_);
    fn(prefix + "encoder.conv1.bias", conv1_b_);
    fn(prefix + "encoder.conv2.weight", conv2_w_);
    fn(prefix + "encoder.conv2.bias", conv2_b_);
    fn(prefix + "encoder.embed_positions.weight", positions_);
    for (std::size_t b = 0; b < blocks_.size(); ++b)
      blocks_[b].visit(prefix + block_prefix(spec_, static_cast<int>(b)), fn);
    final_norm_.visit(prefix + "encoder.layer_norm.", fn);
  }

 protected:
  std::vector<Linear*> lora_layers() override {
    std::vector<Linear*> out;
    for (auto& b : blocks_) {
      out.push_back(b.fc1());
      out.push_back(b.fc2());
    }
    return out;
  }

 private:
  Parameter conv1_w_, conv1_b_, conv2_w_, conv2_b_, positions_;
  std::vector<PreNormBlock> blocks_;
  LayerNorm final_norm_;
};

/// Bucketed signed distance (key - query), bidirectional.
int relative_bucket(int distance) {
  const int half = kRelBuckets / 2;
  const int exact = half / 2;
  int bucket = distance > 0 ? half : 0;
  const int magnitude = std::abs(distance);
  if (magnitude < exact) return bucket + magnitude;
  const double scaled = std::log(static_cast<double>(magnitude) / exact) /
                        std::log(static_cast<double>(kRelMaxDistance) / exact) * (half - exact);
  return bucket + std::min(half - 1, exact + static_cast<int>(scaled));
}

struct WavLMLayer {
  MultiHeadAttention attn;
  Linear gate_proj;
  Parameter gate_const;
  std::optional<Parameter> rel_embed;
  LayerNorm norm, final_norm;
  Linear ff_in, ff_out;

  WavLMLayer(const EncoderSpec& spec, bool first, Rng& rng)
      : attn(spec.hidden_size, spec.heads, rng, true),
        gate_proj(spec.hidden_size / spec.heads, 8, true, rng),
        gate_const(Matrix::Ones(1, spec.heads)),
        norm(spec.hidden_size),
        final_norm(spec.hidden_size),
        ff_in(spec.hidden_size, spec.ff_dim, true, rng),
        ff_out(spec.ff_dim, spec.hidden_size, true, rng) {
    if (first) rel_embed = Parameter(uniform(kRelBuckets, spec.heads, 0.1, rng));
  }

  Var feed_forward(Tape& tape, const Var& x) const {
    return ff_out.forward(tape, nn::gelu(ff_in.forward(tape, x)));
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    attn.visit(prefix + "attention.", fn);
    gate_proj.visit(prefix + "attention.gru_rel_pos_linear.", fn);
    fn(prefix + "attention.gru_rel_pos_const", gate_const);
    if (rel_embed) fn(prefix + "attention.rel_attn_embed.weight", *rel_embed);
    norm.visit(prefix + "layer_norm.", fn);
    ff_in.visit(prefix + "feed_forward.intermediate_dense.", fn);
    ff_out.visit(prefix + "feed_forward.output_dense.", fn);
    final_norm.visit(prefix + "final_layer_norm.", fn);
  }
};

class WavLMEncoder final : public Encoder {
 public:
  WavLMEncoder(EncoderSpec spec, std::uint64_t seed) : Encoder(std::move(spec)) {
    Rng rng(seed ^ 0x510e527fULL);
    const int d = spec_.hidden_size;
    int in = 1;
    for (std::size_t i = 0; i < std::size(kWavLMConvs); ++i) {
      conv_w_.push_back(conv_weight(kWavLMChannels, in, kWavLMConvs[i].kernel, rng));
      if (i == 0 || spec_.conv_layer_norm) {
        conv_gamma_.emplace_back(Matrix::Ones(1, kWavLMChannels));
        conv_beta_.emplace_back(Matrix::Zero(1, kWavLMChannels));
      }
      in = kWavLMChannels;
    }
    proj_norm_ = LayerNorm(kWavLMChannels);
    proj_ = Linear(kWavLMChannels, d, true, rng);
    pos_w_ = conv_weight(d, d / kPosConvGroups, kPosConvKernel, rng);
    pos_b_ = Parameter(Matrix::Zero(1, d));
    enc_norm_ = LayerNorm(d);
    for (int b = 0; b < spec_.blocks; ++b) layers_.emplace_back(spec_, b == 0, rng);
  }

  std::vector<Var> forward(Tape& tape, std::span<const float> waveform, const Mode& mode) const override {
    const int frames = frames_for(waveform.size());
    const long n = static_cast<long>(waveform.size());
    const long needed = static_cast<long>(frames) * 320 + 80;
    const long left = 40;
    Matrix audio = Matrix::Zero(std::max(needed, n + 80), 1);
    for (long i = 0; i < n; ++i) audio(left + i, 0) = waveform[static_cast<std::size_t>(i)];
    if (spec_.conv_layer_norm && n > 0) {
      const auto body = audio.block(left, 0, n, 1);
      const double mean = body.mean();
      const double var = (body.array() - mean).square().mean();
      audio.block(left, 0, n, 1) = ((body.array() - mean) / std::sqrt(var + 1e-7)).matrix();
    }

    Var h = tape.constant(std::move(audio));
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
      h = nn::conv1d(h, tape.param(conv_w_[i]), nullptr, kWavLMConvs[i].kernel, kWavLMConvs[i].stride, 0, 1);
      if (spec_.conv_layer_norm) {
        h = nn::layer_norm(h, tape.param(conv_gamma_[i]), tape.param(conv_beta_[i]));
      } else if (i == 0) {
        h = group_norm(tape, h);
      }
      h = nn::gelu(h);
    }
    if (h.rows() < frames) throw ShapeError("feature extractor produced too few frames");
    h = nn::slice_rows(h, 0, frames);
    h = proj_.forward(tape, proj_norm_.forward(tape, h));

    const Var pos_bias = tape.param(pos_b_);
    Var pos = nn::conv1d(h, tape.param(pos_w_), &pos_bias, kPosConvKernel, 1, kPosConvKernel / 2, kPosConvGroups);
    h = nn::add(h, nn::gelu(nn::slice_rows(pos, 0, frames)));
    if (!spec_.pre_norm) h = enc_norm_.forward(tape, h);

    const auto buckets = bucket_index(frames);
    const Var table = tape.param(*layers_.front().rel_embed);
    std::vector<Var> position_bias(static_cast<std::size_t>(spec_.heads));
    for (int head = 0; head < spec_.heads; ++head)
      position_bias[static_cast<std::size_t>(head)] = nn::gather(table, buckets, head);

    std::vector<Var> out{h};
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const WavLMLayer& layer = layers_[l];
      const nn::AttentionBias bias = [&](Tape& t, int head, const Var& input) {
        return nn::mul_col(position_bias[static_cast<std::size_t>(head)], gate(t, layer, head, input));
      };
      if (spec_.pre_norm) {
        const Var normed = layer.norm.forward(tape, h);
        h = nn::add(h, layer.attn.forward(tape, normed, mode, 0.0, &bias));
        h = nn::add(h, layer.feed_forward(tape, layer.final_norm.forward(tape, h)));
        out.push_back(l + 1 == layers_.size() ? enc_norm_.forward(tape, h) : h);
      } else {
        h = layer.norm.forward(tape, nn::add(h, layer.attn.forward(tape, h, mode, 0.0, &bias)));
        h = layer.final_norm.forward(tape, nn::add(h, layer.feed_forward(tape, h)));
        out.push_back(h);
      }
    }
    return out;
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) override {
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
      const std::string base = prefix + "feature_extractor.conv_layers." + std::to_string(i) + ".";
      fn(base + "conv.weight", conv_w_[i]);
      if (i < conv_gamma_.size()) {
        fn(base + "layer_norm.weight", conv_gamma_[i]);
        fn(base + "layer_norm.bias", conv_beta_[i]);
      }
    }
    proj_norm_.visit(prefix + "feature_projection.layer_norm.", fn);
    proj_.visit(prefix + "feature_projection.projection.", fn);
    fn(prefix + "encoder.pos_conv_embed.conv.weight", pos_w_);
    fn(prefix + "encoder.pos_conv_embed.conv.bias", pos_b_);
    enc_norm_.visit(prefix + "encoder.layer_norm.", fn);
    for (std::size_t l = 0; l < layers_.size(); ++l)
      layers_[l].visit(prefix + block_prefix(spec_, static_cast<int>(l)), fn);
  }

 protected:
  std::vector<Linear*> lora_layers() override {
    std::vector<Linear*> out;
    for (auto& l : layers_) {
      out.push_back(&l.ff_in);
      out.push_back(&l.ff_out);
    }
    return out;
  }

 private:
  /// One group per channel: every channel is normalised over time.
  Var group_norm(Tape& tape, const Var& x) const {
    const Var t = nn::transpose(x);
    const Var normed = nn::layer_norm(t, tape.constant(Matrix::Ones(1, t.cols())),
                                      tape.constant(Matrix::Zero(1, t.cols())));
    return nn::add_row(nn::mul_row(nn::transpose(normed), tape.param(conv_gamma_[0])), tape.param(conv_beta_[0]));
  }

  /// Per-query gate a * (b * c - 1) + 2 from the head's slice of the attention input.
  Var gate(Tape& tape, const WavLMLayer& layer, int head, const Var& input) const {
    const Eigen::Index dh = input.cols() / spec_.heads;
    const Var proj = layer.gate_proj.forward(tape, nn::slice_cols(input, head * dh, dh));
    const Var a = nn::sigmoid(nn::matmul(nn::slice_cols(proj, 0, 4), ones_col(tape, 4)));
    const Var b = nn::sigmoid(nn::matmul(nn::slice_cols(proj, 4, 4), ones_col(tape, 4)));
    const Var c = nn::slice_cols(tape.param(layer.gate_const), head, 1);
    return nn::add_scalar(nn::mul(a, nn::add_scalar(nn::mul_scalar(b, c), -1.0)), 2.0);
  }

  static Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> bucket_index(int frames) {
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> idx(frames, frames);
    for (int i = 0; i < frames; ++i)
      for (int j = 0; j < frames; ++j) idx(i, j) = relative_bucket(j - i);
    return idx;
  }

  std::vector<Parameter> conv_w_, conv_gamma_, conv_beta_;
  LayerNorm proj_norm_;
  Linear proj_;
  Parameter pos_w_, pos_b_;
  LayerNorm enc_norm_;
  std::vector<WavLMLayer> layers_;
};

const Parameter* find_param(Encoder& encoder, const std::string& wanted, Parameter** out) {
  encoder.visit("", [&](const std::string& name, Parameter& p) {
    if (name == wanted) *out = &p;
  });
  return *out;
}

}  // namespace

std::string block_prefix(const EncoderSpec& spec, int block) {
  const std::string root = spec.family == EncoderFamily::toy_transformer ? "blocks." : "encoder.layers.";
  return root + std::to_string(block) + ".";
}

std::pair<std::string, std::string> feed_forward_names(const EncoderSpec& spec) {
  if (spec.family == EncoderFamily::wavlm) return {"feed_forward.intermediate_dense", "feed_forward.output_dense"};
  return {"fc1", "fc2"};
}

std::int64_t parameter_count(const EncoderSpec& spec) {
  const std::int64_t d = spec.hidden_size, ff = spec.ff_dim, h = spec.heads, blocks = spec.blocks;
  switch (spec.family) {
    case EncoderFamily::toy: return static_cast<std::int64_t>(spec.layer_count) * 40 * d;
    case EncoderFamily::toy_transformer: return 40 * d + d + blocks * pre_norm_block_params(d, ff) + 2 * d;
    case EncoderFamily::whisper:
      return spec.n_mels * 3 * d + d + d * 3 * d + d + kWhisperPositions * d + blocks * pre_norm_block_params(d, ff) +
             2 * d;
    case EncoderFamily::wavlm: {
      const std::int64_t c = kWavLMChannels;
      std::int64_t n = c * 10 + 4 * c * c * 3 + 2 * c * c * 2;
      n += (spec.conv_layer_norm ? 7 : 1) * 2 * c;
      n += 2 * c + c * d + d;
      n += d * (d / kPosConvGroups) * kPosConvKernel + d;
      n += 2 * d;
      const std::int64_t dh = d / h;
      n += blocks * (4 * d * d + 4 * d + 4 * d + 2 * d * ff + ff + d + 8 * dh + 8 + h);
      n += kRelBuckets * h;
      return n;
    }
  }
  return 0;
}

bool is_fixed_buffer(const std::string& name) { return name.ends_with("embed_positions.weight"); }

std::string normalize_name(const EncoderSpec& spec, const std::string& name) {
  static const char* roots[] = {"encoder.", "feature_extractor.", "feature_projection.", "blocks.", "input_proj.", "layer_norm."};
  std::size_t best = std::string::npos;
  for (const char* root : roots) {
    for (std::size_t pos = name.find(root); pos != std::string::npos; pos = name.find(root, pos + 1)) {
      if (pos == 0 || name[pos - 1] == '.') {
        best = std::min(best, pos);
        break;
      }
    }
  }
  std::string out = best == std::string::npos ? name : name.substr(best);
  if (spec.family == EncoderFamily::whisper && best == std::string::npos) out = "encoder." + out;
  return out;
}

void load_special(const EncoderSpec& spec, const TensorArchive& archive, Encoder& encoder,
                  std::vector<std::string>& missing) {
  if (spec.family != EncoderFamily::wavlm) return;
  const std::string target = "encoder.pos_conv_embed.conv.weight";
  auto it = std::find(missing.begin(), missing.end(), target);
  if (it == missing.end()) return;
  const StoredTensor* g = nullptr;
  const StoredTensor* v = nullptr;
  for (const auto& [name, t] : archive.tensors) {
    const std::string n = normalize_name(spec, name);
    if (n == "encoder.pos_conv_embed.conv.weight_g" || n == "encoder.pos_conv_embed.conv.parametrizations.weight.original0")
      g = &t;
    if (n == "encoder.pos_conv_embed.conv.weight_v" || n == "encoder.pos_conv_embed.conv.parametrizations.weight.original1")
      v = &t;
  }
  if (!g || !v) return;
  // Weight norm over dim 2: one magnitude per kernel tap.
  if (v->shape.size() != 3 || g->data.size() != v->shape[2]) throw ShapeError("unexpected positional convolution shape");
  const Eigen::Index out = v->shape[0], in = v->shape[1], k = v->shape[2];
  Matrix w = v->data;
  for (Eigen::Index tap = 0; tap < k; ++tap) {
    double norm = 0.0;
    for (Eigen::Index o = 0; o < out; ++o)
      for (Eigen::Index i = 0; i < in; ++i) norm += w(o, i * k + tap) * w(o, i * k + tap);
    const double factor = g->data.data()[tap] / std::max(std::sqrt(norm), 1e-12);
    for (Eigen::Index o = 0; o < out; ++o)
      for (Eigen::Index i = 0; i < in; ++i) w(o, i * k + tap) *= factor;
  }
  Parameter* p = nullptr;
  find_param(encoder, target, &p);
  if (!p || p->value.size() != w.size()) throw ShapeError("unexpected positional convolution shape");
  std::copy_n(w.data(), w.size(), p->value.data());
  missing.erase(it);
}

std::unique_ptr<Encoder> make(const EncoderSpec& spec, std::uint64_t seed) {
  switch (spec.family) {
    case EncoderFamily::toy_transformer: return std::make_unique<ToyTransformerEncoder>(spec, seed);
    case EncoderFamily::whisper: return std::make_unique<WhisperEncoder>(spec, seed);
    case EncoderFamily::wavlm: return std::make_unique<WavLMEncoder>(spec, seed);
    case EncoderFamily::toy: break;
  }
  throw ConfigError("no transformer backend for encoder " + spec.name);
}

}  // namespace eendvc::foundation
