// SPDX-License-Identifier: Apache-2.0

#include "eendvc/protocols.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "eendvc/error.hpp"

namespace eendvc {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- manifests

namespace {

const std::vector<std::string>& age_groups() {
  static const std::vector<std::string> groups{"adult", "older-adult", "child-adult"};
  return groups;
}

std::string resolve(const fs::path& base, const std::string& path) {
  if (path.empty()) return path;
  const fs::path p(path);
  return p.is_absolute() ? p.string() : (base / p).lexically_normal().string();
}

}  // namespace

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  const fs::path base = fs::path(path).parent_path();
  std::vector<ManifestRecord> records;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(number, path + ": " + e.what());
    }
    ManifestRecord r;
    try {
      r.uri = j.at("uri").get<std::string>();
      r.audio = resolve(base, j.at("audio").get<std::string>());
      r.rttm = resolve(base, j.value("rttm", std::string()));
      r.dataset = j.value("dataset", std::string());
      r.age_group = j.value("age_group", std::string("adult"));
    } catch (const json::exception& e) {
      throw ParseError(number, path + ": " + e.what());
    }
    if (std::find(age_groups().begin(), age_groups().end(), r.age_group) == age_groups().end())
      throw ParseError(number, path + ": unknown age group '" + r.age_group + "'");
    records.push_back(std::move(r));
  }
  return records;
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path);
  for (const auto& r : records)
    out << json{{"uri", r.uri}, {"audio", r.audio}, {"rttm", r.rttm}, {"dataset", r.dataset}, {"age_group", r.age_group}}
               .dump()
        << '\n';
}

std::string write_synthetic_corpus(const std::string& dir, const std::string& name,
                                   const std::vector<SyntheticSceneSpec>& scenes, const std::string& dataset) {
  fs::create_directories(dir);
  std::vector<ManifestRecord> records;
  for (const auto& spec : scenes) {
    const Scene scene = generate_scene(spec);
    const fs::path wav = fs::path(dir) / (spec.uri + ".wav");
    const fs::path rttm = fs::path(dir) / (spec.uri + ".rttm");
    write_wav(wav.string(), scene.audio);
    write_rttm_file(rttm.string(), {{spec.uri, scene.reference}});
    records.push_back({spec.uri, wav.filename().string(), rttm.filename().string(), dataset, spec.age_group});
  }
  const std::string path = (fs::path(dir) / (name + ".jsonl")).string();
  write_manifest(path, records);
  return path;
}

// ---------------------------------------------------------------- configuration

std::string to_string(ProtocolKind kind) {
  switch (kind) {
    case ProtocolKind::adult_only: return "adult-only";
    case ProtocolKind::combined: return "combined";
    case ProtocolKind::domain_adapt: return "domain-adapt";
  }
  return "adult-only";
}

ProtocolKind parse_protocol(const std::string& text) {
  if (text == "adult-only") return ProtocolKind::adult_only;
  if (text == "combined") return ProtocolKind::combined;
  if (text == "domain-adapt") return ProtocolKind::domain_adapt;
  throw ConfigError("unknown protocol '" + text + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (window <= 0.0) throw ConfigError("window must be positive");
  if (head_lr <= 0.0 || encoder_lr <= 0.0) throw ConfigError("learning rates must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
}

void RunConfig::validate() const {
  train.validate();
  conformer.validate();
  embedding.validate();
  clustering.validate();
  if (lora.rank < 1) throw ConfigError("LoRA rank must be at least 1");
  if (protocol.train_manifests.empty()) throw ConfigError("no training manifests configured");
  if (protocol.validation_manifests.empty()) throw ConfigError("no validation manifests configured");
  if (protocol.kind == ProtocolKind::domain_adapt && protocol.init_checkpoint.empty())
    throw ConfigError("domain adaptation needs an init checkpoint");
  PowersetCodec(max_speakers, max_concurrent);
}

void to_json(json& j, const RunConfig& c) {
  j = json{
      {"protocol",
       {{"kind", to_string(c.protocol.kind)},
        {"train_manifests", c.protocol.train_manifests},
        {"validation_manifests", c.protocol.validation_manifests},
        {"init_checkpoint", c.protocol.init_checkpoint}}},
      {"train",
       {{"head_lr", c.train.head_lr},
        {"encoder_lr", c.train.encoder_lr},
        {"weight_decay", c.train.weight_decay},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"epsilon", c.train.epsilon},
        {"batch_size", c.train.batch_size},
        {"epochs", c.train.epochs},
        {"window", c.train.window},
        {"seed", c.train.seed}}},
      {"surface", to_string(c.surface)},
      {"lora", {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}}},
      {"encoder", {{"name", c.encoder.name}, {"seed", c.encoder.seed}, {"weights", c.encoder.weights}}},
      {"conformer", c.conformer},
      {"codec", {{"max_speakers", c.max_speakers}, {"max_concurrent", c.max_concurrent}}},
      {"embedding",
       {{"name", c.embedding.name},
        {"dim", c.embedding.dim},
        {"min_active_duration", c.embedding.min_active_duration},
        {"seed", c.embedding_seed}}},
      {"clustering",
       {{"threshold", c.clustering.threshold},
        {"min_cluster_size", c.clustering.min_cluster_size},
        {"min_speakers", c.clustering.min_speakers},
        {"max_speakers", c.clustering.max_speakers}}},
      {"out", c.out_dir},
  };
}

void from_json(const json& j, RunConfig& c) {
  static const std::vector<std::string> known{"protocol", "train",     "surface", "lora",       "encoder", "conformer",
                                              "codec",    "embedding", "clustering", "out"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown configuration key '" + key + "'");
  try {
    if (j.contains("protocol")) {
      const auto& p = j["protocol"];
      c.protocol.kind = parse_protocol(p.value("kind", to_string(c.protocol.kind)));
      c.protocol.train_manifests = p.value("train_manifests", c.protocol.train_manifests);
      c.protocol.validation_manifests = p.value("validation_manifests", c.protocol.validation_manifests);
      c.protocol.init_checkpoint = p.value("init_checkpoint", c.protocol.init_checkpoint);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      c.train.head_lr = t.value("head_lr", c.train.head_lr);
      c.train.encoder_lr = t.value("encoder_lr", c.train.encoder_lr);
      c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
      c.train.beta1 = t.value("beta1", c.train.beta1);
      c.train.beta2 = t.value("beta2", c.train.beta2);
      c.train.epsilon = t.value("epsilon", c.train.epsilon);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.window = t.value("window", c.train.window);
      c.train.seed = t.value("seed", c.train.seed);
    }
    if (j.contains("surface")) c.surface = parse_surface(j["surface"].get<std::string>());
    if (j.contains("lora")) {
      c.lora.rank = j["lora"].value("rank", c.lora.rank);
      c.lora.alpha = j["lora"].value("alpha", static_cast<double>(c.lora.rank));
    }
    if (j.contains("encoder")) {
      c.encoder.name = j["encoder"].value("name", c.encoder.name);
      c.encoder.seed = j["encoder"].value("seed", c.encoder.seed);
      c.encoder.weights = j["encoder"].value("weights", c.encoder.weights);
    }
    if (j.contains("conformer")) j["conformer"].get_to(c.conformer);
    if (j.contains("codec")) {
      c.max_speakers = j["codec"].value("max_speakers", c.max_speakers);
      c.max_concurrent = j["codec"].value("max_concurrent", c.max_concurrent);
    }
    if (j.contains("embedding")) {
      const auto& e = j["embedding"];
      c.embedding.name = e.value("name", c.embedding.name);
      c.embedding.dim = e.value("dim", c.embedding.dim);
      c.embedding.min_active_duration = e.value("min_active_duration", c.embedding.min_active_duration);
      c.embedding_seed = e.value("seed", c.embedding_seed);
    }
    if (j.contains("clustering")) {
      const auto& a = j["clustering"];
      c.clustering.threshold = a.value("threshold", c.clustering.threshold);
      c.clustering.min_cluster_size = a.value("min_cluster_size", c.clustering.min_cluster_size);
      c.clustering.min_speakers = a.value("min_speakers", c.clustering.min_speakers);
      c.clustering.max_speakers = a.value("max_speakers", c.clustering.max_speakers);
    }
    c.out_dir = j.value("out", c.out_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid run configuration: ") + e.what());
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open configuration " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  RunConfig c;
  from_json(j, c);
  // Manifest and checkpoint paths are relative to the configuration file.
  const fs::path base = fs::path(path).parent_path();
  for (auto& m : c.protocol.train_manifests) m = resolve(base, m);
  for (auto& m : c.protocol.validation_manifests) m = resolve(base, m);
  c.protocol.init_checkpoint = resolve(base, c.protocol.init_checkpoint);
  return c;
}

// ---------------------------------------------------------------- data

std::vector<Recording> load_recordings(const std::vector<ManifestRecord>& records) {
  std::vector<Recording> out;
  for (const auto& r : records) {
    Recording rec;
    rec.record = r;
    try {
      rec.audio = read_wav(r.audio);
    } catch (const Error& e) {
      spdlog::warn("skipping {}: {}", r.uri, e.what());
      continue;
    }
    if (rec.audio.sample_rate != kSampleRate) {
      spdlog::warn("skipping {}: sample rate {} Hz", r.uri, rec.audio.sample_rate);
      continue;
    }
    rec.reference = Annotation(r.uri);
    if (!r.rttm.empty()) {
      const auto all = read_rttm_file(r.rttm);
      auto it = all.find(r.uri);
      if (it != all.end()) rec.reference = it->second;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<double> window_starts(double duration, double window, double hop, double frame_duration) {
  if (window <= 0.0 || hop <= 0.0) throw ConfigError("window and hop must be positive");
  std::vector<double> starts;
  if (duration <= 0.0) return starts;
  constexpr double kEps = 1e-9;
  int k = 0;
  while (k * hop + window <= duration + kEps) starts.push_back(k++ * hop);
  if (starts.empty()) return {0.0};
  const double next = k * hop;
  if (duration - next >= frame_duration - kEps) starts.push_back(next);
  return starts;
}

std::vector<float> slice_window(const Waveform& audio, double start, std::size_t samples) {
  std::vector<float> out(samples, 0.0f);
  const auto first = static_cast<std::size_t>(std::llround(start * audio.sample_rate));
  if (first < audio.samples.size()) {
    const std::size_t n = std::min(samples, audio.samples.size() - first);
    std::copy_n(audio.samples.begin() + static_cast<std::ptrdiff_t>(first), n, out.begin());
  }
  return out;
}

WindowSampler::WindowSampler(const std::vector<Recording>& recordings, double window, double hop, std::uint64_t seed)
    : recordings_(&recordings), window_(window), seed_(seed) {
  for (std::size_t r = 0; r < recordings.size(); ++r)
    for (double s : window_starts(recordings[r].audio.duration(), window, hop))
      windows_.push_back({static_cast<int>(r), s});
}

std::vector<std::size_t> WindowSampler::epoch_order(int epoch) const {
  std::vector<std::size_t> order(windows_.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed_ * 1000003ULL + static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

WindowSample WindowSampler::sample(std::size_t index) const {
  const WindowRef& w = windows_.at(index);
  const Recording& rec = (*recordings_)[static_cast<std::size_t>(w.recording)];
  WindowSample s;
  s.ref = w;
  s.waveform = slice_window(rec.audio, w.start, static_cast<std::size_t>(std::llround(window_ * rec.audio.sample_rate)));
  s.reference = crop(rec.reference, Segment(w.start, w.start + window_));
  return s;
}

// ---------------------------------------------------------------- optimisation

void AdamW::step(const std::vector<std::pair<nn::Parameter*, double>>& groups) {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, steps_);
  const double c2 = 1.0 - std::pow(beta2_, steps_);
  for (const auto& [p, lr] : groups) {
    if (!p->has_grad()) continue;
    auto [it, fresh] = state_.try_emplace(p);
    Moments& s = it->second;
    if (fresh) {
      s.m = nn::Matrix::Zero(p->value.rows(), p->value.cols());
      s.v = nn::Matrix::Zero(p->value.rows(), p->value.cols());
    }
    p->value *= 1.0 - lr * weight_decay_;
    s.m = beta1_ * s.m + (1.0 - beta1_) * p->grad;
    s.v = beta2_ * s.v + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
    p->value.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + epsilon_);
  }
}

// ---------------------------------------------------------------- training

void to_json(json& j, const EpochLog& e) {
  j = json{{"epoch", e.epoch},
           {"train_loss", e.train_loss ? json(*e.train_loss) : json(nullptr)},
           {"validation_loss", e.validation_loss},
           {"fusion_weights", e.fusion_weights},
           {"trainable_parameters", e.trainable_parameters},
           {"encoder_trainable_parameters", e.encoder_trainable_parameters},
           {"seconds", e.seconds}};
}

void from_json(const json& j, EpochLog& e) {
  e.epoch = j.at("epoch").get<int>();
  if (j.contains("train_loss") && !j["train_loss"].is_null()) e.train_loss = j["train_loss"].get<double>();
  e.validation_loss = j.at("validation_loss").get<double>();
  e.fusion_weights = j.value("fusion_weights", std::vector<double>{});
  e.trainable_parameters = j.value("trainable_parameters", std::int64_t{0});
  e.encoder_trainable_parameters = j.value("encoder_trainable_parameters", std::int64_t{0});
  e.seconds = j.value("seconds", 0.0);
}

int best_epoch(const std::vector<EpochLog>& epochs) {
  int best = -1;
  double loss = std::numeric_limits<double>::infinity();
  for (const auto& e : epochs)
    if (e.epoch >= 1 && e.validation_loss < loss) {
      loss = e.validation_loss;
      best = e.epoch;
    }
  return best;
}

std::vector<EpochLog> read_training_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open training log " + path);
  std::vector<EpochLog> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line).get<EpochLog>());
  return out;
}

TrainingState prepare_training(const RunConfig& config) {
  TrainingState st;
  st.encoder = make_encoder(config.encoder.name, {config.encoder.seed, config.encoder.weights});
  st.codec = PowersetCodec(config.max_speakers, config.max_concurrent);
  if (!config.protocol.init_checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(config.protocol.init_checkpoint);
    const std::string source = ck.metadata.at("config").at("protocol").value("kind", std::string());
    if (config.protocol.kind == ProtocolKind::domain_adapt && source != "adult-only")
      throw ConfigError("domain adaptation must start from an adult-only checkpoint, got '" + source + "'");
    if (!(ck.model->codec() == st.codec)) throw ConfigError("init checkpoint uses a different powerset codec");
    apply_encoder_tensors(ck, *st.encoder);
    st.model = std::move(ck.model);
  } else if (config.protocol.kind == ProtocolKind::domain_adapt) {
    throw ConfigError("domain adaptation needs an init checkpoint");
  } else {
    st.model = std::make_unique<SegmentationModel>(config.conformer, st.encoder->spec().layer_count,
                                                   st.encoder->spec().hidden_size, st.codec, config.train.seed);
  }
  if (config.surface == TrainableSurface::feed_forward_lora && !st.encoder->has_lora())
    st.encoder->attach_lora(config.lora.rank, config.lora.alpha, config.train.seed ^ 0x10a4ULL);
  st.encoder->set_surface(config.surface);
  return st;
}

namespace {

struct Item {
  WindowRef ref;
  Activity target;
  std::string uri;
};

/// Usable windows with their frame targets; windows with too many speakers are dropped.
std::vector<Item> build_items(const WindowSampler& sampler, const std::vector<Recording>& recordings,
                              const Encoder& encoder, const PowersetCodec& codec, int& dropped) {
  std::vector<Item> items;
  const double fd = encoder.spec().output_frame_duration;
  for (std::size_t i = 0; i < sampler.size(); ++i) {
    const WindowSample s = sampler.sample(i);
    const auto labels = s.reference.labels();
    const std::string& uri = recordings[static_cast<std::size_t>(s.ref.recording)].record.uri;
    if (static_cast<int>(labels.size()) > codec.max_speakers()) {
      spdlog::warn("dropping window {}@{:.2f}s: {} speakers exceed {}", uri, s.ref.start, labels.size(),
                   codec.max_speakers());
      ++dropped;
      continue;
    }
    const int frames = encoder.frames_for(s.waveform.size());
    items.push_back({s.ref, discretize(s.reference, fd, frames, labels), uri});
  }
  return items;
}

class StackCache {
 public:
  StackCache(const Encoder& encoder, bool enabled) : encoder_(encoder), enabled_(enabled) {}

  const LayerStack& get(std::size_t key, const std::vector<float>& wave) {
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    LayerStack stack = encoder_.encode_window(wave, kSampleRate);
    if (!enabled_) {
      scratch_ = std::move(stack);
      return scratch_;
    }
    return cache_.emplace(key, std::move(stack)).first->second;
  }

 private:
  const Encoder& encoder_;
  bool enabled_;
  std::map<std::size_t, LayerStack> cache_;
  LayerStack scratch_;
};

double window_loss(const TrainingState& st, const LayerStack& stack, const Activity& target) {
  nn::Tape tape(false);
  std::vector<nn::Var> layers;
  for (const auto& l : stack.layers) layers.push_back(tape.constant(l));
  const nn::Var logits = st.model->forward(tape, layers, nn::Mode{});
  return powerset_loss(tape, logits, target, st.codec).value()(0, 0);
}

double mean_loss(const TrainingState& st, const WindowSampler& sampler, const std::vector<Item>& items,
                 StackCache& cache, std::size_t key_offset) {
  if (items.empty()) throw Error("no usable windows to evaluate");
  double total = 0.0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < sampler.size() && k < items.size(); ++i) {
    const WindowRef& ref = sampler.windows()[i];
    if (ref.recording != items[k].ref.recording || ref.start != items[k].ref.start) continue;
    const WindowSample s = sampler.sample(i);
    total += window_loss(st, cache.get(key_offset + i, s.waveform), items[k].target);
    ++k;
  }
  return total / static_cast<double>(items.size());
}

bool cache_fits(const Encoder& encoder, std::size_t windows, double window) {
  const double bytes = static_cast<double>(encoder.spec().layer_count) * encoder.spec().hidden_size *
                       (window / encoder.spec().output_frame_duration) * 8.0 * static_cast<double>(windows);
  return bytes < 1.5e9;
}

}  // namespace

double evaluate_loss(const TrainingState& state, const std::vector<Recording>& recordings, double window,
                     double hop) {
  const WindowSampler sampler(recordings, window, hop, 0);
  int dropped = 0;
  const auto items = build_items(sampler, recordings, *state.encoder, state.codec, dropped);
  StackCache cache(*state.encoder, false);
  return mean_loss(state, sampler, items, cache, 0);
}

TrainResult run_protocol(const RunConfig& config) {
  config.validate();
  fs::create_directories(config.out_dir);
  TrainingState st = prepare_training(config);

  std::vector<ManifestRecord> train_records, val_records;
  for (const auto& m : config.protocol.train_manifests) {
    auto r = read_manifest(m);
    train_records.insert(train_records.end(), r.begin(), r.end());
  }
  for (const auto& m : config.protocol.validation_manifests) {
    auto r = read_manifest(m);
    val_records.insert(val_records.end(), r.begin(), r.end());
  }
  const auto train_set = load_recordings(train_records);
  const auto val_set = load_recordings(val_records);
  if (train_set.empty()) throw IoError("no readable training recordings");
  if (val_set.empty()) throw IoError("no readable validation recordings");

  const double window = config.train.window, hop = config.train.train_hop();
  const WindowSampler train_sampler(train_set, window, hop, config.train.seed);
  const WindowSampler val_sampler(val_set, window, hop, config.train.seed);
  TrainResult result;
  const auto train_items = build_items(train_sampler, train_set, *st.encoder, st.codec, result.dropped_windows);
  const auto val_items = build_items(val_sampler, val_set, *st.encoder, st.codec, result.dropped_windows);
  if (train_items.empty()) throw Error("no usable training windows");

  const bool frozen = st.encoder->surface() == TrainableSurface::frozen;
  StackCache train_cache(*st.encoder, frozen && cache_fits(*st.encoder, train_sampler.size(), window));
  StackCache val_cache(*st.encoder, frozen && cache_fits(*st.encoder, val_sampler.size(), window));
  std::map<std::pair<int, double>, std::size_t> index_of;
  for (std::size_t i = 0; i < train_sampler.size(); ++i)
    index_of[{train_sampler.windows()[i].recording, train_sampler.windows()[i].start}] = i;

  std::vector<std::pair<nn::Parameter*, double>> groups;
  st.model->visit("", [&](const std::string&, nn::Parameter& p) {
    if (p.trainable) groups.emplace_back(&p, config.train.head_lr);
  });
  const double encoder_lr =
      config.surface == TrainableSurface::full ? config.train.encoder_lr : config.train.head_lr;
  st.encoder->visit("", [&](const std::string&, nn::Parameter& p) {
    if (p.trainable) groups.emplace_back(&p, encoder_lr);
  });
  std::int64_t trainable = 0, encoder_trainable = st.encoder->trainable_parameter_count();
  for (const auto& [p, lr] : groups) trainable += p->size();

  result.log = (fs::path(config.out_dir) / "training_log.jsonl").string();
  result.checkpoint = (fs::path(config.out_dir) / "checkpoint.safetensors").string();
  std::ofstream log(result.log, std::ios::trunc);
  if (!log) throw IoError("cannot write " + result.log);
  const json config_json = config;

  auto record = [&](EpochLog e) {
    e.fusion_weights = st.model->effective_fusion_weights();
    e.trainable_parameters = trainable;
    e.encoder_trainable_parameters = encoder_trainable;
    log << json(e).dump() << '\n' << std::flush;
    spdlog::info("epoch {:>2}  train {}  validation {:.4f}  ({:.1f}s)", e.epoch,
                 e.train_loss ? fmt::format("{:.4f}", *e.train_loss) : std::string("-"), e.validation_loss, e.seconds);
    result.epochs.push_back(std::move(e));
  };

  using Clock = std::chrono::steady_clock;
  auto t0 = Clock::now();
  {
    EpochLog e;
    e.epoch = 0;
    e.train_loss = mean_loss(st, train_sampler, train_items, train_cache, 0);
    e.validation_loss = mean_loss(st, val_sampler, val_items, val_cache, 0);
    e.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    record(e);
  }

  AdamW optimizer(config.train.beta1, config.train.beta2, config.train.epsilon, config.train.weight_decay);
  nn::Rng dropout_rng(config.train.seed ^ 0xd809ULL);
  const nn::Mode train_mode{true, &dropout_rng};
  result.best_validation_loss = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> usable;  // sampler index per item
  for (const auto& item : train_items) usable.push_back(index_of.at({item.ref.recording, item.ref.start}));
  std::map<std::size_t, std::size_t> item_of;
  for (std::size_t k = 0; k < usable.size(); ++k) item_of[usable[k]] = k;

  for (int epoch = 1; epoch <= config.train.epochs; ++epoch) {
    t0 = Clock::now();
    std::vector<std::size_t> order;
    for (std::size_t i : train_sampler.epoch_order(epoch))
      if (item_of.count(i)) order.push_back(i);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.train.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(config.train.batch_size));
      for (const auto& [p, lr] : groups) p->zero_grad();
      const double weight = 1.0 / static_cast<double>(end - b);
      for (std::size_t i = b; i < end; ++i) {
        const std::size_t index = order[i];
        const Item& item = train_items[item_of.at(index)];
        const WindowSample s = train_sampler.sample(index);
        nn::Tape tape(true);
        std::vector<nn::Var> layers;
        if (frozen) {
          for (const auto& l : train_cache.get(index, s.waveform).layers) layers.push_back(tape.constant(l));
        } else {
          layers = st.encoder->forward(tape, s.waveform, train_mode);
        }
        const nn::Var logits = st.model->forward(tape, layers, train_mode);
        const nn::Var loss = powerset_loss(tape, logits, item.target, st.codec);
        const double value = loss.value()(0, 0);
        if (!std::isfinite(value))
          throw NumericalError(fmt::format("non-finite loss at epoch {} on {}@{:.2f}s", epoch, item.uri, s.ref.start));
        epoch_loss += value;
        tape.backward(nn::scale(loss, weight));
      }
      optimizer.step(groups);
    }
    EpochLog e;
    e.epoch = epoch;
    e.train_loss = epoch_loss / static_cast<double>(order.size());
    e.validation_loss = mean_loss(st, val_sampler, val_items, val_cache, 0);
    e.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    if (e.validation_loss < result.best_validation_loss) {
      result.best_validation_loss = e.validation_loss;
      result.best_epoch = epoch;
      save_checkpoint(result.checkpoint, *st.model, *st.encoder, config_json);
    }
    record(e);
  }
  return result;
}

// ---------------------------------------------------------------- inference

DiarizationPipeline::DiarizationPipeline(std::unique_ptr<Encoder> encoder, std::unique_ptr<SegmentationModel> model,
                                         std::unique_ptr<EmbeddingExtractor> extractor, AHCConfig clustering,
                                         double window)
    : encoder_(std::move(encoder)),
      model_(std::move(model)),
      extractor_(std::move(extractor)),
      clustering_(clustering),
      window_(window) {
  clustering_.validate();
  if (window_ <= 0.0) throw ConfigError("window must be positive");
}

DiarizationPipeline DiarizationPipeline::from_checkpoint(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  RunConfig rc;
  from_json(ck.metadata.at("config"), rc);
  auto encoder = make_encoder(rc.encoder.name, {rc.encoder.seed, rc.encoder.weights});
  apply_encoder_tensors(ck, *encoder);
  return DiarizationPipeline(std::move(encoder), std::move(ck.model), make_extractor(rc.embedding, rc.embedding_seed),
                             rc.clustering, rc.train.window);
}

std::vector<WindowResult> DiarizationPipeline::segment_windows(const Waveform& audio) const {
  if (audio.sample_rate != encoder_->spec().sample_rate)
    throw Error("expected " + std::to_string(encoder_->spec().sample_rate) + " Hz audio");
  const auto samples = static_cast<std::size_t>(std::llround(window_ * audio.sample_rate));
  const auto starts = window_starts(audio.duration(), window_, window_, encoder_->spec().output_frame_duration);
  std::vector<WindowResult> windows;
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const auto wave = slice_window(audio, starts[k], samples);
    const auto seg = model_->segment(encoder_->encode_window(wave, audio.sample_rate));
    WindowResult w;
    w.index = static_cast<int>(k);
    w.activity = seg.activity;
    w.embeddings = extract_local_embeddings(wave, seg, *extractor_, w.index);
    windows.push_back(std::move(w));
  }
  return windows;
}

Annotation DiarizationPipeline::infer(const std::string& uri, const Waveform& audio) const {
  const auto windows = segment_windows(audio);
  std::vector<SpeakerEmbedding> embeddings;
  for (const auto& w : windows) embeddings.insert(embeddings.end(), w.embeddings.begin(), w.embeddings.end());
  if (embeddings.empty()) return Annotation(uri);
  const auto assignment = cluster(embeddings, clustering_);
  return reconcile(uri, windows, assignment, window_, window_, encoder_->spec().output_frame_duration,
                   audio.duration());
}

Annotation infer_recording(const std::string& checkpoint, const std::string& uri, const Waveform& audio) {
  return DiarizationPipeline::from_checkpoint(checkpoint).infer(uri, audio);
}

}  // namespace eendvc
