// SPDX-License-Identifier: Apache-2.0

#include "eendvc/eend.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "eendvc/error.hpp"

namespace eendvc {

void ConformerConfig::validate() const {
  if (layers < 1 || dim < 1 || ff_hidden < 1 || heads < 1 || kernel < 1)
    throw ConfigError("conformer sizes must be positive");
  if (dim % heads != 0) throw ConfigError("conformer dim must be divisible by the head count");
  if (kernel % 2 == 0) throw ConfigError("conformer kernel must be odd");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("conformer dropout must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const ConformerConfig& c) {
  j = {{"layers", c.layers}, {"dim", c.dim},         {"ff_hidden", c.ff_hidden},
       {"heads", c.heads},   {"kernel", c.kernel}, {"dropout", c.dropout}};
}

void from_json(const nlohmann::json& j, ConformerConfig& c) {
  c.layers = j.value("layers", c.layers);
  c.dim = j.value("dim", c.dim);
  c.ff_hidden = j.value("ff_hidden", c.ff_hidden);
  c.heads = j.value("heads", c.heads);
  c.kernel = j.value("kernel", c.kernel);
  c.dropout = j.value("dropout", c.dropout);
}

std::vector<double> fusion_weights(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += w[i] = std::exp(logits[i] - top);
  for (auto& x : w) x /= total;
  return w;
}

nn::Matrix fuse_layers(const LayerStack& stack, std::span<const double> logits) {
  if (stack.layers.empty() || logits.size() != stack.layers.size())
    throw ShapeError("fusion weights do not match the layer count");
  const auto w = fusion_weights(logits);
  nn::Matrix out = nn::Matrix::Zero(stack.frames(), stack.hidden());
  for (std::size_t l = 0; l < w.size(); ++l) {
    if (stack.layers[l].rows() != out.rows() || stack.layers[l].cols() != out.cols())
      throw ShapeError("layer " + std::to_string(l) + " has a different shape");
    out += w[l] * stack.layers[l];
  }
  return out;
}

SegmentationModel::SegmentationModel(const ConformerConfig& config, int layer_count, int hidden,
                                     const PowersetCodec& codec, std::uint64_t seed)
    : config_(config), codec_(codec), hidden_(hidden) {
  config_.validate();
  if (layer_count < 1 || hidden < 1) throw ConfigError("encoder layer count and hidden size must be positive");
  nn::Rng rng(seed);
  fusion_ = nn::Parameter(nn::Matrix::Zero(1, layer_count));
  if (hidden != config_.dim) input_proj_ = std::make_unique<nn::Linear>(hidden, config_.dim, true, rng);
  for (int i = 0; i < config_.layers; ++i) blocks_.emplace_back(config_.block(), rng);
  head_ = nn::Linear(config_.dim, codec_.num_classes(), true, rng);
}

nn::Var SegmentationModel::forward(nn::Tape& tape, std::span<const nn::Var> layers, const nn::Mode& mode) const {
  if (static_cast<int>(layers.size()) != layer_count())
    throw ShapeError("expected " + std::to_string(layer_count()) + " encoder layers, got " +
                     std::to_string(layers.size()));
  if (layers.front().cols() != hidden_) throw ShapeError("encoder hidden size does not match the model");
  nn::Var h = nn::weighted_layer_sum(layers, tape.param(fusion_));
  if (input_proj_) h = input_proj_->forward(tape, h);
  const int frames = static_cast<int>(h.rows());
  h = nn::add(h, tape.constant(nn::sinusoidal_positions(frames, config_.dim)));
  h = nn::dropout_rng_apply(h, config_.dropout, mode);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    h = blocks_[i].forward(tape, h, mode);
    if (!h.value().allFinite())
      throw NumericalError("non-finite activations after conformer layer " + std::to_string(i));
  }
  return head_.forward(tape, h);
}

SegmentationOutput SegmentationModel::segment(const LayerStack& stack) const {
  nn::Tape tape(false);
  std::vector<nn::Var> layers;
  for (const auto& l : stack.layers) layers.push_back(tape.constant(l));
  const nn::Var probs = nn::softmax_rows(forward(tape, layers, nn::Mode{}));
  SegmentationOutput out;
  out.distribution = probs.value();
  out.activity = codec_.decode_argmax(out.distribution);
  return out;
}

std::vector<double> SegmentationModel::effective_fusion_weights() const {
  return fusion_weights(std::span<const double>(fusion_.value.data(), static_cast<std::size_t>(fusion_.value.size())));
}

void SegmentationModel::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
  fn(prefix + "fusion.logits", fusion_);
  if (input_proj_) input_proj_->visit(prefix + "input_proj.", fn);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].visit(prefix + "conformer." + std::to_string(i) + ".", fn);
  head_.visit(prefix + "head.", fn);
}

std::int64_t SegmentationModel::parameter_count() {
  std::int64_t n = 0;
  visit("", [&](const std::string&, nn::Parameter& p) { n += p.size(); });
  return n;
}

SegmentationOutput segment_window(const LayerStack& stack, const SegmentationModel& model) {
  return model.segment(stack);
}

nn::Var powerset_loss(nn::Tape&, const nn::Var& logits, const Activity& reference, const PowersetCodec& codec,
                      SlotAssignment* assignment) {
  if (reference.rows() != logits.rows()) throw ShapeError("reference frames do not match the prediction");
  if (logits.cols() != codec.num_classes()) throw ShapeError("prediction width does not match the codec");
  const nn::Matrix& z = logits.value();
  RowMatrix probs(z.rows(), z.cols());
  for (Eigen::Index t = 0; t < z.rows(); ++t) {
    const auto e = (z.row(t).array() - z.row(t).maxCoeff()).exp();
    probs.row(t) = e / e.sum();
  }
  SlotAssignment a = assign_slots(reference, probs, codec);
  nn::Var loss = nn::cross_entropy(logits, a.targets);
  if (assignment) *assignment = std::move(a);
  return loss;
}

double powerset_loss(const SegmentationOutput& output, const Annotation& reference, const PowersetCodec& codec,
                     double frame_duration) {
  const auto frames = static_cast<int>(output.distribution.rows());
  if (frames == 0) throw ShapeError("empty prediction");
  const auto activity = discretize(reference, frame_duration, frames, reference.labels());
  const auto a = assign_slots(activity, output.distribution, codec);
  return a.nll / frames;
}

void save_checkpoint(const std::string& path, SegmentationModel& model, Encoder& encoder,
                     const nlohmann::json& config) {
  TensorArchive archive;
  model.visit("model.", [&](const std::string& name, nn::Parameter& p) { archive.put(name, p.value); });
  const TrainableSurface surface = encoder.surface();
  int lora_rank = 0;
  encoder.visit("", [&](const std::string& name, nn::Parameter& p) {
    const bool is_lora = name.find("lora_") != std::string::npos;
    if (is_lora && name.ends_with("lora_A")) lora_rank = static_cast<int>(p.value.rows());
    if (surface == TrainableSurface::full || is_lora) archive.put("encoder." + name, p.value);
  });
  nlohmann::json meta = {
      {"format_version", kCheckpointFormatVersion},
      {"conformer", model.config()},
      {"codec", {{"max_speakers", model.codec().max_speakers()}, {"max_concurrent", model.codec().max_concurrent()}}},
      {"encoder", encoder.spec().name},
      {"encoder_layers", model.layer_count()},
      {"encoder_hidden", model.input_dim()},
      {"surface", to_string(surface)},
      {"lora", {{"rank", lora_rank}, {"alpha", lora_rank}}},
      {"fusion_weights", model.effective_fusion_weights()},
      {"config", config},
  };
  archive.metadata["eendvc"] = meta.dump();
  write_safetensors(path, archive);
}

Checkpoint load_checkpoint(const std::string& path) {
  TensorArchive archive = read_safetensors(path);
  auto it = archive.metadata.find("eendvc");
  if (it == archive.metadata.end()) throw IoError(path + ": not a segmentation checkpoint");
  Checkpoint ck;
  try {
    ck.metadata = nlohmann::json::parse(it->second);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": corrupt checkpoint metadata: " + e.what());
  }
  const int version = ck.metadata.value("format_version", 0);
  if (version != kCheckpointFormatVersion)
    throw IoError(path + ": unsupported checkpoint format version " + std::to_string(version));
  const auto conformer = ck.metadata.at("conformer").get<ConformerConfig>();
  const PowersetCodec codec(ck.metadata.at("codec").at("max_speakers").get<int>(),
                            ck.metadata.at("codec").at("max_concurrent").get<int>());
  ck.model = std::make_unique<SegmentationModel>(conformer, ck.metadata.at("encoder_layers").get<int>(),
                                                 ck.metadata.at("encoder_hidden").get<int>(), codec, 0);
  ck.model->visit("model.", [&](const std::string& name, nn::Parameter& p) {
    const StoredTensor* t = archive.find(name);
    if (!t) throw IoError(path + ": missing tensor " + name);
    if (t->data.rows() != p.value.rows() || t->data.cols() != p.value.cols())
      throw ShapeError(path + ": tensor " + name + " has the wrong shape");
    p.value = t->data;
  });
  for (auto& [name, tensor] : archive.tensors)
    if (name.starts_with("encoder.")) ck.encoder_tensors.tensors.emplace(name.substr(8), std::move(tensor));
  return ck;
}

void apply_encoder_tensors(const Checkpoint& checkpoint, Encoder& encoder) {
  if (checkpoint.metadata.value("encoder", std::string()) != encoder.spec().name)
    throw ConfigError("checkpoint was trained with encoder '" + checkpoint.metadata.value("encoder", std::string()) +
                      "', not '" + encoder.spec().name + "'");
  const auto& lora = checkpoint.metadata.at("lora");
  const int rank = lora.value("rank", 0);
  if (rank > 0 && !encoder.has_lora()) encoder.attach_lora(rank, lora.value("alpha", static_cast<double>(rank)), 0);
  int applied = 0;
  encoder.visit("", [&](const std::string& name, nn::Parameter& p) {
    const StoredTensor* t = checkpoint.encoder_tensors.find(name);
    if (!t) return;
    if (t->data.rows() != p.value.rows() || t->data.cols() != p.value.cols())
      throw ShapeError("checkpoint encoder tensor " + name + " has the wrong shape");
    p.value = t->data;
    ++applied;
  });
  if (applied != static_cast<int>(checkpoint.encoder_tensors.tensors.size()))
    throw IoError("checkpoint holds encoder tensors the encoder does not have");
}

}  // namespace eendvc
