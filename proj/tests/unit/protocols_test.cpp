// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "eendvc/error.hpp"
#include "eendvc/protocols.hpp"

namespace eendvc {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("eendvc_protocols_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SyntheticSceneSpec scene(const std::string& uri, double duration, std::uint64_t seed,
                         const std::string& age = "adult") {
  SyntheticSceneSpec s;
  s.uri = uri;
  s.duration = duration;
  s.seed = seed;
  s.age_group = age;
  return s;
}

ConformerConfig tiny_conformer() {
  ConformerConfig c;
  c.layers = 1;
  c.dim = 16;
  c.ff_hidden = 32;
  c.heads = 2;
  c.kernel = 7;
  c.dropout = 0.0;
  return c;
}

RunConfig tiny_run(const fs::path& dir, const std::string& train, const std::string& validation) {
  RunConfig c;
  c.protocol.train_manifests = {train};
  c.protocol.validation_manifests = {validation};
  c.conformer = tiny_conformer();
  c.train.epochs = 2;
  c.train.batch_size = 4;
  c.train.seed = 3;
  c.out_dir = (dir / "run").string();
  return c;
}

std::map<std::string, nn::Matrix> snapshot(Encoder& encoder) {
  std::map<std::string, nn::Matrix> out;
  encoder.visit("", [&](const std::string& name, nn::Parameter& p) { out[name] = p.value; });
  return out;
}

TEST(WindowStarts, TwentySecondsAtEightBySix) {
  EXPECT_EQ(window_starts(20.0, 8.0, 6.0), (std::vector<double>{0.0, 6.0, 12.0, 18.0}));
}

TEST(WindowStarts, ShortRecordingGetsOnePaddedWindow) {
  EXPECT_EQ(window_starts(5.0, 8.0, 6.0), (std::vector<double>{0.0}));
  EXPECT_TRUE(window_starts(0.0, 8.0, 6.0).empty());
}

TEST(WindowStarts, TailNeedsAFrameOfAudio) {
  EXPECT_EQ(window_starts(16.0, 8.0, 8.0), (std::vector<double>{0.0, 8.0}));
  EXPECT_EQ(window_starts(16.01, 8.0, 8.0), (std::vector<double>{0.0, 8.0}));
  EXPECT_EQ(window_starts(16.02, 8.0, 8.0), (std::vector<double>{0.0, 8.0, 16.0}));
}

TEST(SliceWindow, ZeroPadsPastTheEnd) {
  Waveform w;
  w.samples = {1.0f, 2.0f, 3.0f};
  w.sample_rate = 2;
  EXPECT_EQ(slice_window(w, 0.5, 4), (std::vector<float>{2.0f, 3.0f, 0.0f, 0.0f}));
}

TEST(WindowSampler, EpochOrderIsSeeded) {
  std::vector<Recording> recs(2);
  recs[0].audio.samples.assign(16000 * 20, 0.0f);
  recs[1].audio.samples.assign(16000 * 14, 0.0f);
  WindowSampler a(recs, 8.0, 6.0, 11), b(recs, 8.0, 6.0, 11);
  EXPECT_EQ(a.size(), 7u);
  EXPECT_EQ(a.epoch_order(1), b.epoch_order(1));
  EXPECT_NE(a.epoch_order(1), a.epoch_order(2));
  const auto s = a.sample(5);
  EXPECT_EQ(s.ref.recording, 1);
  EXPECT_DOUBLE_EQ(s.ref.start, 6.0);
  EXPECT_EQ(s.waveform.size(), 128000u);
}

TEST(AdamW, FirstStepMatchesClosedForm) {
  nn::Parameter p(nn::Matrix::Constant(1, 2, 1.0));
  p.grad = nn::Matrix::Constant(1, 2, 0.5);
  nn::Parameter untouched(nn::Matrix::Constant(1, 1, 2.0));
  AdamW opt(0.9, 0.999, 1e-8, 0.01);
  opt.step({{&p, 0.1}, {&untouched, 0.1}});
  // Bias-corrected first step moves by lr * sign(g) after decay.
  const double expected = 1.0 * (1.0 - 0.1 * 0.01) - 0.1 * 0.5 / (0.5 + 1e-8);
  EXPECT_NEAR(p.value(0, 0), expected, 1e-12);
  EXPECT_EQ(untouched.value(0, 0), 2.0);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(RunConfig, JsonRoundTrip) {
  RunConfig c;
  c.protocol.kind = ProtocolKind::combined;
  c.protocol.train_manifests = {"/a.jsonl", "/b.jsonl"};
  c.surface = TrainableSurface::feed_forward_lora;
  c.train.window = 16.0;
  c.conformer = tiny_conformer();
  c.clustering.threshold = 0.6;
  const nlohmann::json j = c;
  RunConfig back;
  from_json(j, back);
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_DOUBLE_EQ(back.train.train_hop(), 12.0);
}

TEST(RunConfig, UnknownKeysAreRejected) {
  RunConfig c;
  EXPECT_THROW(from_json(nlohmann::json{{"epochz", 3}}, c), ConfigError);
  EXPECT_THROW(parse_protocol("adult"), ConfigError);
}

TEST(RunConfig, DomainAdaptNeedsCheckpoint) {
  RunConfig c;
  c.protocol.kind = ProtocolKind::domain_adapt;
  c.protocol.train_manifests = {"t"};
  c.protocol.validation_manifests = {"v"};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Manifest, RoundTripsWithRelativePaths) {
  const auto dir = scratch("manifest");
  const auto path = write_synthetic_corpus(dir.string(), "m", {scene("r1", 4.0, 1), scene("r2", 4.0, 2, "child-adult")},
                                           "synthetic");
  const auto records = read_manifest(path);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[1].age_group, "child-adult");
  EXPECT_TRUE(fs::exists(records[0].audio));
  const auto recs = load_recordings(records);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_FALSE(recs[0].reference.turns().empty());

  std::ofstream(dir / "bad.jsonl") << "{\"uri\": \"x\", \"audio\": \"missing.wav\"}\n{oops\n";
  EXPECT_THROW(read_manifest((dir / "bad.jsonl").string()), ParseError);
  auto broken = records;
  broken[0].audio = (dir / "missing.wav").string();
  EXPECT_EQ(load_recordings(broken).size(), 1u);
}

class ProtocolRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = scratch("runs");
    train_ = write_synthetic_corpus((dir_ / "adult").string(), "train", {scene("a1", 20.0, 5), scene("a2", 14.0, 6)},
                                    "synthetic-adult");
    val_ = write_synthetic_corpus((dir_ / "adult").string(), "val", {scene("a3", 14.0, 7)}, "synthetic-adult");
    child_ = write_synthetic_corpus((dir_ / "child").string(), "train", {scene("c1", 14.0, 8, "child-adult")},
                                    "synthetic-child");
  }
  static inline fs::path dir_;
  static inline std::string train_, val_, child_;
};

TEST_F(ProtocolRun, FrozenRunLeavesEncoderBitwiseUnchanged) {
  auto config = tiny_run(dir_ / "frozen", train_, val_);
  const auto before = snapshot(*prepare_training(config).encoder);
  const auto result = run_protocol(config);
  ASSERT_EQ(result.epochs.size(), 3u);
  EXPECT_FALSE(result.epochs[0].train_loss == std::nullopt);
  EXPECT_EQ(result.best_epoch, best_epoch(result.epochs));
  EXPECT_EQ(read_training_log(result.log).size(), 3u);
  EXPECT_EQ(result.epochs[1].encoder_trainable_parameters, 0);

  Checkpoint ck = load_checkpoint(result.checkpoint);
  EXPECT_TRUE(ck.encoder_tensors.tensors.empty());
  auto encoder = make_encoder("toy", {});
  apply_encoder_tensors(ck, *encoder);
  const auto after = snapshot(*encoder);
  ASSERT_EQ(before.size(), after.size());
  for (const auto& [name, value] : before) EXPECT_TRUE((after.at(name).array() == value.array()).all()) << name;
}

TEST_F(ProtocolRun, SameSeedSameLog) {
  auto a = tiny_run(dir_ / "det_a", train_, val_);
  auto b = tiny_run(dir_ / "det_b", train_, val_);
  const auto ra = run_protocol(a), rb = run_protocol(b);
  ASSERT_EQ(ra.epochs.size(), rb.epochs.size());
  for (std::size_t i = 0; i < ra.epochs.size(); ++i) {
    EXPECT_EQ(ra.epochs[i].validation_loss, rb.epochs[i].validation_loss);
    EXPECT_EQ(ra.epochs[i].train_loss, rb.epochs[i].train_loss);
    EXPECT_EQ(ra.epochs[i].fusion_weights, rb.epochs[i].fusion_weights);
  }
}

TEST_F(ProtocolRun, LoRASurfaceTrainsOnlyAdapters) {
  auto config = tiny_run(dir_ / "lora", train_, val_);
  config.encoder.name = "toy-transformer";
  config.surface = TrainableSurface::feed_forward_lora;
  config.train.epochs = 1;
  auto state = prepare_training(config);
  EXPECT_EQ(state.encoder->trainable_parameter_count(), 6144);
  const auto before = snapshot(*state.encoder);
  const auto result = run_protocol(config);
  EXPECT_EQ(result.epochs[1].encoder_trainable_parameters, 6144);

  Checkpoint ck = load_checkpoint(result.checkpoint);
  auto encoder = make_encoder("toy-transformer", {});
  apply_encoder_tensors(ck, *encoder);
  ASSERT_TRUE(encoder->has_lora());
  int changed = 0;
  for (const auto& [name, value] : snapshot(*encoder)) {
    const bool adapter = name.find("lora_") != std::string::npos;
    if (!adapter) {
      EXPECT_TRUE((before.at(name).array() == value.array()).all()) << name;
    } else if (!(before.at(name).array() == value.array()).all()) {
      ++changed;
    }
  }
  EXPECT_GT(changed, 0);
}

TEST_F(ProtocolRun, DomainAdaptStartsFromAdultCheckpoint) {
  auto adult = tiny_run(dir_ / "adult_only", train_, val_);
  adult.train.epochs = 1;
  const auto base = run_protocol(adult);

  auto adapt = tiny_run(dir_ / "adapt", child_, val_);
  adapt.protocol.kind = ProtocolKind::domain_adapt;
  adapt.protocol.init_checkpoint = base.checkpoint;
  adapt.train.epochs = 1;
  const auto state = prepare_training(adapt);
  const double expected = evaluate_loss(state, load_recordings(read_manifest(val_)), 8.0, 6.0);
  const auto result = run_protocol(adapt);
  EXPECT_NEAR(result.epochs[0].validation_loss, expected, 1e-6);
  EXPECT_NEAR(result.epochs[0].validation_loss, base.best_validation_loss, 1e-6);

  auto again = tiny_run(dir_ / "adapt_again", child_, val_);
  again.protocol.kind = ProtocolKind::domain_adapt;
  again.protocol.init_checkpoint = result.checkpoint;
  EXPECT_THROW(prepare_training(again), ConfigError);
}

TEST_F(ProtocolRun, CombinedTrainingHalvesValidationLoss) {
  auto config = tiny_run(dir_ / "combined", train_, train_);
  config.protocol.kind = ProtocolKind::combined;
  config.protocol.train_manifests.push_back(child_);
  config.protocol.validation_manifests.push_back(child_);
  config.conformer.dim = 32;
  config.conformer.ff_hidden = 64;
  config.conformer.heads = 4;
  config.train.epochs = 25;
  const auto result = run_protocol(config);
  EXPECT_LE(result.best_validation_loss, 0.5 * result.epochs[0].validation_loss);
}

TEST_F(ProtocolRun, OverfitsASingleWindow) {
  const auto dir = dir_ / "single";
  const auto manifest = write_synthetic_corpus(dir.string(), "one", {scene("s1", 8.0, 21)}, "synthetic");
  auto config = tiny_run(dir, manifest, manifest);
  config.conformer.dim = 32;
  config.conformer.ff_hidden = 64;
  config.conformer.heads = 4;
  config.train.batch_size = 1;
  config.train.epochs = 150;
  config.train.head_lr = 3e-3;
  config.train.weight_decay = 0.0;
  const auto result = run_protocol(config);

  Checkpoint ck = load_checkpoint(result.checkpoint);
  auto encoder = make_encoder("toy", {});
  const auto rec = load_recordings(read_manifest(manifest)).at(0);
  const auto out = ck.model->segment(encoder->encode_window(rec.audio.samples, kSampleRate));
  const auto labels = rec.reference.labels();
  const auto target = discretize(rec.reference, 0.02, static_cast<int>(out.distribution.rows()), labels);
  const auto assignment = assign_slots(target, out.distribution, ck.model->codec());
  int match = 0;
  for (Eigen::Index t = 0; t < out.distribution.rows(); ++t) {
    Eigen::Index best;
    out.distribution.row(t).maxCoeff(&best);
    match += static_cast<int>(best) == assignment.targets[static_cast<std::size_t>(t)];
  }
  EXPECT_GE(static_cast<double>(match) / static_cast<double>(out.distribution.rows()), 0.95);
}

TEST_F(ProtocolRun, PipelineProducesRttmForTheRecording) {
  auto config = tiny_run(dir_ / "pipeline", train_, val_);
  config.train.epochs = 1;
  const auto result = run_protocol(config);
  auto pipeline = DiarizationPipeline::from_checkpoint(result.checkpoint);
  EXPECT_DOUBLE_EQ(pipeline.window(), 8.0);
  const auto rec = load_recordings(read_manifest(val_)).at(0);
  const auto windows = pipeline.segment_windows(rec.audio);
  EXPECT_EQ(windows.size(), 2u);
  const auto hyp = pipeline.infer("a3", rec.audio);
  EXPECT_EQ(hyp.uri(), "a3");
  for (const auto& turn : hyp.turns()) EXPECT_LE(turn.segment.end(), rec.audio.duration() + 1e-9);

  Waveform silence;
  silence.samples.assign(16000 * 3, 0.0f);
  EXPECT_TRUE(pipeline.infer("quiet", silence).turns().empty());
}

}  // namespace
}  // namespace eendvc
