// SPDX-License-Identifier: Apache-2.0
//
// eendvc: synth, train, adapt, infer, score and report.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "eendvc/error.hpp"
#include "eendvc/metrics.hpp"
#include "eendvc/protocols.hpp"
#include "eendvc/report.hpp"

namespace fs = std::filesystem;
using namespace eendvc;

namespace {

struct SynthOptions {
  std::string config;
  std::string out;
  std::string name = "synth";
  std::string dataset = "synthetic";
  int scenes = 1;
  int num_speakers = 2;
  double duration = 120.0;
  double overlap = 0.1;
  std::string age_group = "adult";
  std::uint64_t seed = 0;
};

struct TrainOptions {
  std::string config;
  std::vector<std::string> manifests;
  std::vector<std::string> validation;
  std::string protocol;
  double window = 0.0;
  std::string encoder;
  std::string surface;
  std::string init_checkpoint;
  std::optional<std::uint64_t> seed;
  int epochs = 0;
  std::string out;
};

struct InferOptions {
  std::string checkpoint;
  std::string manifest;
  std::string audio;
  std::string uri;
  std::string out;
};

struct ScoreOptions {
  std::vector<std::string> ref;
  std::vector<std::string> hyp;
  std::string manifest;
  double collar = 0.0;
  std::string out;
  std::string system;
  std::string dataset;
};

struct ReportOptions {
  std::vector<std::string> scores;
  std::string baseline;
  std::string out;
};

int run_synth(const SynthOptions& o) {
  SyntheticSceneSpec base;
  base.num_speakers = o.num_speakers;
  base.duration = o.duration;
  base.overlap_fraction = o.overlap;
  base.age_group = o.age_group;
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw IoError("cannot open " + o.config);
    const auto j = nlohmann::json::parse(in);
    base.num_speakers = j.value("num_speakers", base.num_speakers);
    base.duration = j.value("duration", base.duration);
    base.mean_turn = j.value("mean_turn", base.mean_turn);
    base.turn_spread = j.value("turn_spread", base.turn_spread);
    base.overlap_fraction = j.value("overlap_fraction", base.overlap_fraction);
    base.age_group = j.value("age_group", base.age_group);
    base.noise_level = j.value("noise_level", base.noise_level);
  }
  std::vector<SyntheticSceneSpec> specs;
  for (int i = 0; i < o.scenes; ++i) {
    SyntheticSceneSpec s = base;
    char uri[64];
    std::snprintf(uri, sizeof uri, "%s%03d", o.name.c_str(), i);
    s.uri = uri;
    s.seed = o.seed * 1000 + static_cast<std::uint64_t>(i);
    s.validate();
    specs.push_back(s);
  }
  std::cout << write_synthetic_corpus(o.out, o.name, specs, o.dataset) << '\n';
  return 0;
}

RunConfig train_config(const TrainOptions& o, bool adapt) {
  RunConfig c;
  if (!o.config.empty()) c = load_run_config(o.config);
  if (adapt) c.protocol.kind = ProtocolKind::domain_adapt;
  if (!o.protocol.empty()) c.protocol.kind = parse_protocol(o.protocol);
  if (adapt && c.protocol.kind != ProtocolKind::domain_adapt)
    throw ConfigError("adapt runs the domain-adapt protocol");
  if (!o.manifests.empty()) c.protocol.train_manifests = o.manifests;
  if (!o.validation.empty()) c.protocol.validation_manifests = o.validation;
  if (o.window > 0.0) c.train.window = o.window;
  if (!o.encoder.empty()) c.encoder.name = o.encoder;
  if (!o.surface.empty()) c.surface = parse_surface(o.surface);
  if (!o.init_checkpoint.empty()) c.protocol.init_checkpoint = o.init_checkpoint;
  if (o.seed) c.train.seed = *o.seed;
  if (o.epochs > 0) c.train.epochs = o.epochs;
  if (!o.out.empty()) c.out_dir = o.out;
  c.validate();
  return c;
}

int run_train(const TrainOptions& o, bool adapt) {
  const RunConfig config = train_config(o, adapt);
  const TrainResult r = run_protocol(config);
  nlohmann::json summary{{"checkpoint", r.checkpoint},
                         {"log", r.log},
                         {"best_epoch", r.best_epoch},
                         {"best_validation_loss", r.best_validation_loss},
                         {"dropped_windows", r.dropped_windows}};
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int run_infer(const InferOptions& o) {
  const auto pipeline = DiarizationPipeline::from_checkpoint(o.checkpoint);
  AnnotationMap out;
  if (!o.audio.empty()) {
    const std::string uri = o.uri.empty() ? fs::path(o.audio).stem().string() : o.uri;
    out[uri] = pipeline.infer(uri, read_wav(o.audio));
  } else {
    for (const auto& rec : load_recordings(read_manifest(o.manifest))) {
      spdlog::info("diarizing {}", rec.record.uri);
      out[rec.record.uri] = pipeline.infer(rec.record.uri, rec.audio);
    }
  }
  if (o.out.empty() || o.out == "-") {
    serialize_rttm(out, std::cout);
  } else {
    if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
    write_rttm_file(o.out, out);
  }
  return 0;
}

int run_score(const ScoreOptions& o) {
  AnnotationMap ref, hyp;
  auto merge = [](AnnotationMap& into, const std::string& path) {
    for (auto& [uri, a] : read_rttm_file(path)) into[uri] = std::move(a);
  };
  for (const auto& p : o.ref) merge(ref, p);
  if (!o.manifest.empty())
    for (const auto& r : read_manifest(o.manifest)) merge(ref, r.rttm);
  for (const auto& p : o.hyp) merge(hyp, p);
  if (ref.empty()) throw Error("no reference annotations");
  const DERReport report = score(ref, hyp, o.collar);
  std::cout << report.to_table();
  if (!o.out.empty()) {
    nlohmann::json doc = report.to_json();
    doc["collar"] = o.collar;
    doc["system"] = o.system.empty() ? "system" : o.system;
    doc["dataset"] = o.dataset.empty() ? "dataset" : o.dataset;
    std::ofstream out(o.out);
    if (!out) throw IoError("cannot write " + o.out);
    out << doc.dump(2) << '\n';
  }
  return 0;
}

int run_report(const ReportOptions& o) {
  std::vector<ScoreEntry> entries;
  for (const auto& p : o.scores) entries.push_back(read_score(p, "system", fs::path(p).stem().string()));
  const ReportTables t = build_report(entries, o.baseline);
  std::cout << "DER (%)\n" << t.der;
  if (!t.relative.empty()) std::cout << "\nRelative change vs " << o.baseline << "\n" << t.relative;
  std::cout << "\nError decomposition (%)\n" << t.decomposition;
  if (!o.out.empty()) {
    std::ofstream out(o.out);
    if (!out) throw IoError("cannot write " + o.out);
    out << t.document.dump(2) << '\n';
  }
  return 0;
}

void add_train_flags(CLI::App* cmd, TrainOptions& o) {
  cmd->add_option("--config", o.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--manifest", o.manifests, "Training manifest (repeatable)");
  cmd->add_option("--validation-manifest", o.validation, "Validation manifest (repeatable)");
  cmd->add_option("--protocol", o.protocol, "adult-only, combined or domain-adapt")
      ->check(CLI::IsMember({"adult-only", "combined", "domain-adapt"}));
  cmd->add_option("--window", o.window, "Window length in seconds")->check(CLI::IsMember({8.0, 16.0}));
  cmd->add_option("--encoder", o.encoder, "Encoder backend");
  cmd->add_option("--surface", o.surface, "frozen, lora or full")->check(CLI::IsMember({"frozen", "lora", "full"}));
  cmd->add_option("--init-checkpoint", o.init_checkpoint, "Checkpoint to start from");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--epochs", o.epochs, "Maximum epochs")->check(CLI::PositiveNumber);
  cmd->add_option("--out", o.out, "Output directory");
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("eendvc"));

  CLI::App app{"EEND-VC speaker diarization"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic multi-speaker scenes and a manifest");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--config", synth.config, "Scene parameters (JSON)")->check(CLI::ExistingFile);
  synth_cmd->add_option("--name", synth.name, "Manifest name and uri prefix");
  synth_cmd->add_option("--dataset", synth.dataset, "Dataset label");
  synth_cmd->add_option("--scenes", synth.scenes, "Number of scenes")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--num-speakers", synth.num_speakers, "Speakers per scene")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--duration", synth.duration, "Seconds per scene")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--overlap", synth.overlap, "Overlapped share of speaker time")->check(CLI::Range(0.0, 0.99));
  synth_cmd->add_option("--age-group", synth.age_group, "adult, older-adult or child-adult")
      ->check(CLI::IsMember({"adult", "older-adult", "child-adult"}));
  synth_cmd->add_option("--seed", synth.seed, "Random seed");

  TrainOptions train, adapt;
  auto* train_cmd = app.add_subcommand("train", "Train the segmentation model under a protocol");
  add_train_flags(train_cmd, train);
  auto* adapt_cmd = app.add_subcommand("adapt", "Domain-adapt an adult-only checkpoint");
  add_train_flags(adapt_cmd, adapt);

  InferOptions infer;
  auto* infer_cmd = app.add_subcommand("infer", "Diarize recordings with a trained checkpoint");
  infer_cmd->add_option("--checkpoint", infer.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  auto* infer_manifest = infer_cmd->add_option("--manifest", infer.manifest, "Recordings to diarize");
  auto* infer_audio = infer_cmd->add_option("--audio", infer.audio, "Single WAV file")->check(CLI::ExistingFile);
  infer_manifest->excludes(infer_audio);
  infer_cmd->add_option("--uri", infer.uri, "Recording id for --audio");
  infer_cmd->add_option("--out", infer.out, "Output RTTM (default stdout)");

  ScoreOptions sc;
  auto* score_cmd = app.add_subcommand("score", "Diarization error rate of hypothesis RTTM files");
  score_cmd->add_option("--ref", sc.ref, "Reference RTTM (repeatable)");
  score_cmd->add_option("--manifest", sc.manifest, "Take references from a manifest");
  score_cmd->add_option("--hyp", sc.hyp, "Hypothesis RTTM (repeatable)")->required();
  score_cmd->add_option("--collar", sc.collar, "Forgiveness collar in seconds")->check(CLI::NonNegativeNumber);
  score_cmd->add_option("--out", sc.out, "Score document (JSON)");
  score_cmd->add_option("--system", sc.system, "System name stored in the score document");
  score_cmd->add_option("--dataset", sc.dataset, "Dataset name stored in the score document");

  ReportOptions rep;
  auto* report_cmd = app.add_subcommand("report", "Tables from score documents");
  report_cmd->add_option("scores", rep.scores, "Score documents")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--baseline", rep.baseline, "System for the relative-change table");
  report_cmd->add_option("--out", rep.out, "Report document (JSON)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*synth_cmd) return run_synth(synth);
    if (*train_cmd) return run_train(train, false);
    if (*adapt_cmd) return run_train(adapt, true);
    if (*infer_cmd) {
      if (infer.manifest.empty() && infer.audio.empty()) throw ConfigError("infer needs --manifest or --audio");
      return run_infer(infer);
    }
    if (*score_cmd) {
      if (sc.ref.empty() && sc.manifest.empty()) throw ConfigError("score needs --ref or --manifest");
      return run_score(sc);
    }
    if (*report_cmd) return run_report(rep);
  } catch (const ConfigError& e) {
    std::cerr << "eendvc: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "eendvc: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
