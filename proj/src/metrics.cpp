// SPDX-License-Identifier: Apache-2.0

#include "eendvc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "eendvc/error.hpp"

namespace eendvc {

ErrorTimes& ErrorTimes::operator+=(const ErrorTimes& o) {
  reference_speech += o.reference_speech;
  missed += o.missed;
  false_alarm += o.false_alarm;
  confusion += o.confusion;
  return *this;
}

std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weights) {
  const std::size_t rows = weights.size();
  if (rows == 0) return {};
  const std::size_t cols = weights.front().size();
  const std::size_t n = std::max(rows, cols);
  // Hungarian method with potentials on the square, zero-padded cost -w.
  const double inf = std::numeric_limits<double>::infinity();
  auto cost = [&](std::size_t i, std::size_t j) {
    return (i < rows && j < cols) ? -weights[i][j] : 0.0;
  };
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> match(rows, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j];
    if (i >= 1 && i <= rows && j <= cols) match[i - 1] = static_cast<int>(j - 1);
  }
  return match;
}

namespace {

struct Region {
  double duration;
  std::vector<int> ref;  // speaker indices
  std::vector<int> hyp;
};

struct Partition {
  std::vector<std::string> ref_labels;
  std::vector<std::string> hyp_labels;
  std::vector<Region> regions;
};

// Splits the time axis at every boundary of both annotations (and collar edges)
// into regions of constant speaker sets; collar regions are dropped.
Partition partition(const Annotation& reference, const Annotation& hypothesis, double collar) {
  if (collar < 0.0) throw Error("collar must be non-negative");
  Partition part;
  part.ref_labels = reference.labels();
  part.hyp_labels = hypothesis.labels();
  auto index_of = [](const std::vector<std::string>& labels, const std::string& l) {
    return static_cast<int>(std::lower_bound(labels.begin(), labels.end(), l) - labels.begin());
  };

  // kind: 0 = reference speaker, 1 = hypothesis speaker, 2 = collar
  struct Event {
    double time;
    int delta;
    int kind;
    int speaker;
  };
  std::vector<Event> events;
  for (const auto& t : reference.turns()) {
    const int s = index_of(part.ref_labels, t.speaker);
    events.push_back({t.segment.start(), +1, 0, s});
    events.push_back({t.segment.end(), -1, 0, s});
    if (collar > 0.0) {
      for (double b : {t.segment.start(), t.segment.end()}) {
        events.push_back({std::max(0.0, b - collar), +1, 2, 0});
        events.push_back({b + collar, -1, 2, 0});
      }
    }
  }
  for (const auto& t : hypothesis.turns()) {
    const int s = index_of(part.hyp_labels, t.speaker);
    events.push_back({t.segment.start(), +1, 1, s});
    events.push_back({t.segment.end(), -1, 1, s});
  }
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.time < b.time; });

  std::vector<int> ref_count(part.ref_labels.size(), 0), hyp_count(part.hyp_labels.size(), 0);
  int collar_count = 0;
  std::size_t i = 0;
  while (i < events.size()) {
    const double now = events[i].time;
    for (; i < events.size() && events[i].time == now; ++i) {
      const auto& e = events[i];
      if (e.kind == 0) ref_count[static_cast<std::size_t>(e.speaker)] += e.delta;
      else if (e.kind == 1) hyp_count[static_cast<std::size_t>(e.speaker)] += e.delta;
      else collar_count += e.delta;
    }
    if (i == events.size()) break;
    const double next = events[i].time;
    if (collar_count > 0) continue;
    Region r{next - now, {}, {}};
    for (std::size_t s = 0; s < ref_count.size(); ++s)
      if (ref_count[s] > 0) r.ref.push_back(static_cast<int>(s));
    for (std::size_t s = 0; s < hyp_count.size(); ++s)
      if (hyp_count[s] > 0) r.hyp.push_back(static_cast<int>(s));
    if (!r.ref.empty() || !r.hyp.empty()) part.regions.push_back(std::move(r));
  }
  return part;
}

std::vector<int> mapping_indices(const Partition& part) {
  std::vector<std::vector<double>> w(part.ref_labels.size(), std::vector<double>(part.hyp_labels.size(), 0.0));
  for (const auto& r : part.regions)
    for (int a : r.ref)
      for (int b : r.hyp) w[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] += r.duration;
  if (w.empty() || part.hyp_labels.empty()) return std::vector<int>(part.ref_labels.size(), -1);
  return max_weight_assignment(w);
}

}  // namespace

std::map<std::string, std::string> optimal_mapping(const Annotation& reference, const Annotation& hypothesis,
                                                   double collar) {
  const auto part = partition(reference, hypothesis, collar);
  const auto match = mapping_indices(part);
  std::map<std::string, std::string> out;
  for (std::size_t i = 0; i < match.size(); ++i)
    if (match[i] >= 0) out.emplace(part.ref_labels[i], part.hyp_labels[static_cast<std::size_t>(match[i])]);
  return out;
}

ErrorTimes error_times(const Annotation& reference, const Annotation& hypothesis, double collar) {
  const auto part = partition(reference, hypothesis, collar);
  const auto match = mapping_indices(part);
  ErrorTimes e;
  for (const auto& r : part.regions) {
    const auto nr = static_cast<double>(r.ref.size());
    const auto nh = static_cast<double>(r.hyp.size());
    double matched = 0.0;
    for (int a : r.ref) {
      const int b = match[static_cast<std::size_t>(a)];
      if (b >= 0 && std::binary_search(r.hyp.begin(), r.hyp.end(), b)) matched += 1.0;
    }
    e.reference_speech += nr * r.duration;
    e.missed += std::max(nr - nh, 0.0) * r.duration;
    e.false_alarm += std::max(nh - nr, 0.0) * r.duration;
    e.confusion += (std::min(nr, nh) - matched) * r.duration;
  }
  return e;
}

DERReport DERReport::from_times(const ErrorTimes& totals, std::map<std::string, ErrorTimes> per_recording) {
  if (!(totals.reference_speech > 0.0)) throw Error("reference contains no speech; DER is undefined");
  DERReport r;
  const double scale = 100.0 / totals.reference_speech;
  r.missed_detection = totals.missed * scale;
  r.false_alarm = totals.false_alarm * scale;
  r.speaker_confusion = totals.confusion * scale;
  r.der = totals.error() * scale;
  r.reference_speech = totals.reference_speech;
  r.per_recording = std::move(per_recording);
  return r;
}

DERReport score(const Annotation& reference, const Annotation& hypothesis, double collar) {
  const auto e = error_times(reference, hypothesis, collar);
  return DERReport::from_times(e, {{reference.uri(), e}});
}

DERReport score(const AnnotationMap& reference, const AnnotationMap& hypothesis, double collar) {
  ErrorTimes total;
  std::map<std::string, ErrorTimes> per;
  for (const auto& [uri, ref] : reference) {
    auto it = hypothesis.find(uri);
    const auto e = error_times(ref, it == hypothesis.end() ? Annotation(uri) : it->second, collar);
    total += e;
    per.emplace(uri, e);
  }
  return DERReport::from_times(total, std::move(per));
}

double macro_average(const std::vector<double>& values) {
  if (values.empty()) throw Error("macro average of an empty list");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double relative_change(double value, double base) {
  if (!(base > 0.0)) throw Error("relative change needs a positive base");
  return 100.0 * (value - base) / base;
}

namespace {
// Rounds half away from zero at one decimal, with a small guard so that values
// such as 14.65 stored as 14.6499999 still round the way they print in tables.
double round1(double v) {
  const double scaled = v * 10.0;
  const double r = std::round(scaled + (scaled >= 0 ? 1e-9 : -1e-9));
  return r == 0.0 ? 0.0 : r / 10.0;
}
}  // namespace

std::string format_percent(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", round1(value));
  return buf;
}

std::string format_relative(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.1f%%", round1(value));
  return buf;
}

std::string DERReport::to_table() const {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %8s %8s %8s %8s %10s\n", "recording", "MD", "FA", "SC", "DER", "speech(s)");
  out << line;
  for (const auto& [uri, e] : per_recording) {
    if (!(e.reference_speech > 0.0)) continue;
    const double s = 100.0 / e.reference_speech;
    std::snprintf(line, sizeof line, "%-24s %8s %8s %8s %8s %10.1f\n", uri.c_str(),
                  format_percent(e.missed * s).c_str(), format_percent(e.false_alarm * s).c_str(),
                  format_percent(e.confusion * s).c_str(), format_percent(e.error() * s).c_str(), e.reference_speech);
    out << line;
  }
  std::snprintf(line, sizeof line, "%-24s %8s %8s %8s %8s %10.1f\n", "TOTAL", format_percent(missed_detection).c_str(),
                format_percent(false_alarm).c_str(), format_percent(speaker_confusion).c_str(),
                format_percent(der).c_str(), reference_speech);
  out << line;
  return out.str();
}

nlohmann::json DERReport::to_json() const {
  nlohmann::json doc;
  doc["missed_detection"] = missed_detection;
  doc["false_alarm"] = false_alarm;
  doc["speaker_confusion"] = speaker_confusion;
  doc["der"] = der;
  doc["reference_speech"] = reference_speech;
  auto& per = doc["recordings"] = nlohmann::json::object();
  for (const auto& [uri, e] : per_recording) {
    per[uri] = {{"reference_speech", e.reference_speech},
                {"missed", e.missed},
                {"false_alarm", e.false_alarm},
                {"confusion", e.confusion}};
  }
  return doc;
}

DERReport DERReport::from_json(const nlohmann::json& doc) {
  DERReport r;
  r.missed_detection = doc.at("missed_detection").get<double>();
  r.false_alarm = doc.at("false_alarm").get<double>();
  r.speaker_confusion = doc.at("speaker_confusion").get<double>();
  r.der = doc.at("der").get<double>();
  r.reference_speech = doc.value("reference_speech", 0.0);
  if (doc.contains("recordings")) {
    for (const auto& [uri, e] : doc["recordings"].items()) {
      r.per_recording[uri] = ErrorTimes{e.at("reference_speech").get<double>(), e.at("missed").get<double>(),
                                        e.at("false_alarm").get<double>(), e.at("confusion").get<double>()};
    }
  }
  return r;
}

}  // namespace eendvc
