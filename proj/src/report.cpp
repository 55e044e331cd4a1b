// SPDX-License-Identifier: Apache-2.0

#include "eendvc/report.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "eendvc/error.hpp"

namespace eendvc {

ScoreEntry read_score(const std::string& path, const std::string& default_system, const std::string& default_dataset) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open score file " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
    ScoreEntry e;
    e.system = doc.value("system", default_system);
    e.dataset = doc.value("dataset", default_dataset);
    e.report = DERReport::from_json(doc);
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(path + ": " + ex.what());
  }
}

namespace {

std::string pad(const std::string& s, std::size_t width, bool left = false) {
  if (s.size() >= width) return s;
  return left ? s + std::string(width - s.size(), ' ') : std::string(width - s.size(), ' ') + s;
}

template <class T>
void push_unique(std::vector<T>& v, const T& x) {
  if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

}  // namespace

ReportTables build_report(const std::vector<ScoreEntry>& entries, const std::string& baseline) {
  std::vector<std::string> systems, datasets;
  std::map<std::pair<std::string, std::string>, const DERReport*> cell;
  for (const auto& e : entries) {
    push_unique(systems, e.system);
    push_unique(datasets, e.dataset);
    cell[{e.system, e.dataset}] = &e.report;
  }
  if (!baseline.empty() && std::find(systems.begin(), systems.end(), baseline) == systems.end())
    throw ConfigError("baseline system '" + baseline + "' has no scores");

  auto der_of = [&](const std::string& s, const std::string& d) -> std::optional<double> {
    auto it = cell.find({s, d});
    if (it == cell.end()) return std::nullopt;
    return it->second->der;
  };
  auto macro_of = [&](const std::string& s) -> std::optional<double> {
    std::vector<double> v;
    for (const auto& d : datasets)
      if (auto x = der_of(s, d)) v.push_back(*x);
    if (v.empty()) return std::nullopt;
    return macro_average(v);
  };

  std::size_t name_width = 6;
  for (const auto& s : systems) name_width = std::max(name_width, s.size());
  std::size_t col = 8;
  for (const auto& d : datasets) col = std::max(col, d.size() + 1);

  ReportTables out;
  nlohmann::json& doc = out.document;
  doc["datasets"] = datasets;
  doc["systems"] = nlohmann::json::array();

  std::ostringstream der;
  der << pad("System", name_width, true);
  for (const auto& d : datasets) der << ' ' << pad(d, col);
  der << ' ' << pad("Macro", col) << '\n';
  for (const auto& s : systems) {
    nlohmann::json row{{"system", s}, {"der", nlohmann::json::object()}};
    der << pad(s, name_width, true);
    for (const auto& d : datasets) {
      const auto x = der_of(s, d);
      der << ' ' << pad(x ? format_percent(*x) : "-", col);
      if (x) row["der"][d] = *x;
    }
    const auto m = macro_of(s);
    der << ' ' << pad(m ? format_percent(*m) : "-", col) << '\n';
    row["macro"] = m ? nlohmann::json(*m) : nlohmann::json(nullptr);
    doc["systems"].push_back(row);
  }
  out.der = der.str();

  if (!baseline.empty()) {
    std::ostringstream rel;
    rel << pad("System", name_width, true);
    for (const auto& d : datasets) rel << ' ' << pad(d, col);
    rel << ' ' << pad("Macro", col) << '\n';
    nlohmann::json relative = nlohmann::json::array();
    for (const auto& s : systems) {
      if (s == baseline) continue;
      nlohmann::json row{{"system", s}, {"relative", nlohmann::json::object()}};
      rel << pad(s, name_width, true);
      for (const auto& d : datasets) {
        const auto x = der_of(s, d), b = der_of(baseline, d);
        if (x && b && *b > 0.0) {
          const double r = relative_change(*x, *b);
          rel << ' ' << pad(format_relative(r), col);
          row["relative"][d] = r;
        } else {
          rel << ' ' << pad("-", col);
        }
      }
      const auto m = macro_of(s), bm = macro_of(baseline);
      if (m && bm && *bm > 0.0) {
        const double r = relative_change(*m, *bm);
        rel << ' ' << pad(format_relative(r), col) << '\n';
        row["macro"] = r;
      } else {
        rel << ' ' << pad("-", col) << '\n';
      }
      relative.push_back(row);
    }
    out.relative = rel.str();
    doc["baseline"] = baseline;
    doc["relative"] = relative;
  }

  std::ostringstream dec;
  std::size_t ds_width = 7;
  for (const auto& d : datasets) ds_width = std::max(ds_width, d.size());
  dec << pad("System", name_width, true) << ' ' << pad("Dataset", ds_width, true) << ' ' << pad("MD", 6) << ' '
      << pad("FA", 6) << ' ' << pad("SC", 6) << ' ' << pad("DER", 6) << '\n';
  nlohmann::json decomposition = nlohmann::json::array();
  for (const auto& e : entries) {
    dec << pad(e.system, name_width, true) << ' ' << pad(e.dataset, ds_width, true) << ' '
        << pad(format_percent(e.report.missed_detection), 6) << ' ' << pad(format_percent(e.report.false_alarm), 6)
        << ' ' << pad(format_percent(e.report.speaker_confusion), 6) << ' ' << pad(format_percent(e.report.der), 6)
        << '\n';
    decomposition.push_back({{"system", e.system},
                             {"dataset", e.dataset},
                             {"missed_detection", e.report.missed_detection},
                             {"false_alarm", e.report.false_alarm},
                             {"speaker_confusion", e.report.speaker_confusion},
                             {"der", e.report.der}});
  }
  out.decomposition = dec.str();
  doc["decomposition"] = decomposition;
  return out;
}

}  // namespace eendvc
