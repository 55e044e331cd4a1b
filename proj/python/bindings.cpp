// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "eendvc/error.hpp"
#include "eendvc/metrics.hpp"
#include "eendvc/powerset.hpp"
#include "eendvc/protocols.hpp"
#include "eendvc/report.hpp"
#include "eendvc/synth.hpp"
#include "eendvc/timeline.hpp"
#include "eendvc/vclust.hpp"

namespace py = pybind11;
using namespace eendvc;

namespace {

py::object json_to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json py_to_json(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::array_t<float> to_numpy(const std::vector<float>& v) {
  py::array_t<float> a(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

Waveform to_waveform(py::array_t<float, py::array::c_style | py::array::forcecast> samples, int sample_rate) {
  if (samples.ndim() != 1) throw py::value_error("expected a 1-D waveform");
  Waveform w;
  w.samples.assign(samples.data(), samples.data() + samples.size());
  w.sample_rate = sample_rate;
  return w;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "EEND-VC speaker diarization core";

  auto base = py::register_exception<Error>(m, "EendvcError");
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<EncodingError>(m, "EncodingError", base.ptr());
  py::register_exception<TooManySpeakersError>(m, "TooManySpeakersError", base.ptr());
  py::register_exception<CapabilityError>(m, "CapabilityError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  py::class_<PowersetCodec>(m, "PowersetCodec")
      .def(py::init<int, int>(), py::arg("max_speakers") = 4, py::arg("max_concurrent") = 2)
      .def_property_readonly("max_speakers", &PowersetCodec::max_speakers)
      .def_property_readonly("max_concurrent", &PowersetCodec::max_concurrent)
      .def_property_readonly("num_classes", &PowersetCodec::num_classes)
      .def("encode", [](const PowersetCodec& c, const std::vector<std::uint8_t>& row) { return c.encode(row); })
      .def("decode", &PowersetCodec::decode)
      .def("mapping", &PowersetCodec::mapping);

  m.def(
      "parse_rttm",
      [](const std::string& text) {
        py::dict out;
        for (const auto& [uri, a] : parse_rttm_string(text)) {
          py::list turns;
          for (const auto& t : a.turns()) turns.append(py::make_tuple(t.segment.start(), t.segment.end(), t.speaker));
          out[py::str(uri)] = turns;
        }
        return out;
      },
      py::arg("text"), "uri -> [(start, end, speaker)]");
  m.def(
      "normalize_rttm", [](const std::string& text) { return serialize_rttm(parse_rttm_string(text)); },
      py::arg("text"), "Parses and re-serializes RTTM text.");

  m.def(
      "score",
      [](const std::string& reference, const std::string& hypothesis, double collar) {
        return json_to_py(score(parse_rttm_string(reference), parse_rttm_string(hypothesis), collar).to_json());
      },
      py::arg("reference"), py::arg("hypothesis"), py::arg("collar") = 0.0,
      "DER report of RTTM texts as a dict (percentages).");
  m.def("macro_average", &macro_average, py::arg("values"));
  m.def("relative_change", &relative_change, py::arg("value"), py::arg("base"));
  m.def("format_percent", &format_percent, py::arg("value"));
  m.def("format_relative", &format_relative, py::arg("value"));
  m.def(
      "build_report",
      [](const std::vector<py::dict>& entries, const std::string& baseline) {
        std::vector<ScoreEntry> es;
        for (const auto& d : entries) {
          ScoreEntry e;
          e.system = d["system"].cast<std::string>();
          e.dataset = d["dataset"].cast<std::string>();
          e.report = DERReport::from_json(py_to_json(d));
          es.push_back(std::move(e));
        }
        const auto t = build_report(es, baseline);
        py::dict out;
        out["der"] = t.der;
        out["relative"] = t.relative;
        out["decomposition"] = t.decomposition;
        out["document"] = json_to_py(t.document);
        return out;
      },
      py::arg("entries"), py::arg("baseline") = "");

  m.def(
      "generate_scene",
      [](const std::string& uri, int num_speakers, double duration, double overlap_fraction,
         const std::string& age_group, std::uint64_t seed) {
        SyntheticSceneSpec s;
        s.uri = uri;
        s.num_speakers = num_speakers;
        s.duration = duration;
        s.overlap_fraction = overlap_fraction;
        s.age_group = age_group;
        s.seed = seed;
        const Scene scene = generate_scene(s);
        return py::make_tuple(to_numpy(scene.audio.samples), serialize_rttm(scene.reference));
      },
      py::arg("uri") = "scene", py::arg("num_speakers") = 2, py::arg("duration") = 120.0,
      py::arg("overlap_fraction") = 0.1, py::arg("age_group") = "adult", py::arg("seed") = 0,
      "Returns (16 kHz float32 waveform, reference RTTM text).");
  m.def(
      "write_synthetic_corpus",
      [](const std::string& dir, const std::string& name, int scenes, double duration, const std::string& age_group,
         std::uint64_t seed) {
        std::vector<SyntheticSceneSpec> specs;
        for (int i = 0; i < scenes; ++i) {
          SyntheticSceneSpec s;
          s.uri = name + std::to_string(i);
          s.duration = duration;
          s.age_group = age_group;
          s.seed = seed * 1000 + static_cast<std::uint64_t>(i);
          specs.push_back(s);
        }
        return write_synthetic_corpus(dir, name, specs, "synthetic");
      },
      py::arg("dir"), py::arg("name"), py::arg("scenes"), py::arg("duration") = 120.0, py::arg("age_group") = "adult",
      py::arg("seed") = 0, "Writes WAV/RTTM files and a manifest; returns the manifest path.");

  m.def(
      "cluster",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> vectors, const std::vector<int>& windows,
         const std::vector<int>& slots, double threshold, int min_cluster_size, int min_speakers, int max_speakers) {
        if (vectors.ndim() != 2) throw py::value_error("expected an (N, dim) array");
        const auto n = static_cast<std::size_t>(vectors.shape(0));
        if (windows.size() != n || slots.size() != n) throw py::value_error("windows and slots need N entries");
        std::vector<SpeakerEmbedding> es(n);
        for (std::size_t i = 0; i < n; ++i) {
          es[i].vector = Eigen::Map<const Eigen::VectorXd>(vectors.data(static_cast<py::ssize_t>(i), 0), vectors.shape(1));
          es[i].window = windows[i];
          es[i].slot = slots[i];
        }
        const auto a = cluster(es, {threshold, min_cluster_size, min_speakers, max_speakers});
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) labels[i] = a.cluster_of(windows[i], slots[i]);
        py::dict out;
        out["labels"] = labels;
        out["cluster_count"] = a.cluster_count;
        out["forced_merges"] = a.forced_merges;
        out["dissolved"] = a.dissolved;
        out["constraint_violation"] = a.constraint_violation;
        return out;
      },
      py::arg("vectors"), py::arg("windows"), py::arg("slots"), py::arg("threshold") = 0.70,
      py::arg("min_cluster_size") = 30, py::arg("min_speakers") = 2, py::arg("max_speakers") = 8,
      "Cluster label per embedding; (window, slot) pairs must be unique.");

  m.def("known_encoders", &known_encoders);
  m.def(
      "trainable_surfaces",
      [](const std::string& name, int rank) {
        const SurfaceInfo info = list_trainable_surfaces(encoder_spec(name));
        py::dict out;
        std::vector<std::string> surfaces;
        for (auto s : info.surfaces) surfaces.push_back(to_string(s));
        out["surfaces"] = surfaces;
        py::list targets;
        for (const auto& t : info.lora_targets) targets.append(py::make_tuple(t.name, t.rows, t.cols));
        out["lora_targets"] = targets;
        out["lora_parameters"] = info.lora_parameter_count(rank);
        out["encoder_parameters"] = info.encoder_parameters;
        return out;
      },
      py::arg("name"), py::arg("rank") = 16);
  m.def(
      "encode",
      [](const std::string& name, py::array_t<float, py::array::c_style | py::array::forcecast> samples,
         std::uint64_t seed) {
        const auto encoder = make_encoder(name, {seed, ""});
        const Waveform w = to_waveform(samples, kSampleRate);
        LayerStack stack;
        {
          py::gil_scoped_release release;
          stack = encoder->encode_window(w.samples, kSampleRate);
        }
        py::array_t<double> out({stack.layer_count(), stack.frames(), stack.hidden()});
        double* dst = out.mutable_data();
        for (const auto& l : stack.layers) {
          Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(dst, l.rows(), l.cols()) = l;
          dst += l.size();
        }
        return out;
      },
      py::arg("name"), py::arg("samples"), py::arg("seed") = 0, "Layer stack (layers, frames, hidden) of a window.");

  m.def(
      "train",
      [](const py::dict& config) {
        RunConfig c;
        from_json(py_to_json(config), c);
        c.validate();
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = run_protocol(c);
        }
        py::dict out;
        out["checkpoint"] = r.checkpoint;
        out["log"] = r.log;
        out["best_epoch"] = r.best_epoch;
        out["best_validation_loss"] = r.best_validation_loss;
        out["dropped_windows"] = r.dropped_windows;
        py::list epochs;
        for (const auto& e : r.epochs) epochs.append(json_to_py(nlohmann::json(e)));
        out["epochs"] = epochs;
        return out;
      },
      py::arg("config"), "Runs a training protocol from a run-configuration dict.");
  m.def(
      "infer",
      [](const std::string& checkpoint, py::array_t<float, py::array::c_style | py::array::forcecast> samples,
         const std::string& uri) {
        const Waveform w = to_waveform(samples, kSampleRate);
        Annotation a;
        {
          py::gil_scoped_release release;
          a = infer_recording(checkpoint, uri, w);
        }
        return serialize_rttm(a);
      },
      py::arg("checkpoint"), py::arg("samples"), py::arg("uri") = "recording",
      "Diarizes a 16 kHz waveform; returns RTTM text.");
}
