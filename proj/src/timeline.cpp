// SPDX-License-Identifier: Apache-2.0

#include "eendvc/timeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <tuple>

#include "eendvc/error.hpp"

namespace eendvc {

Segment::Segment(double start, double end) : start_(start), end_(end) {
  if (!std::isfinite(start) || !std::isfinite(end))
    throw Error("segment bounds must be finite");
  if (start < 0.0) throw Error("segment start must be non-negative");
  if (!(end > start)) throw Error("segment end must exceed start");
}

bool operator<(const Turn& a, const Turn& b) {
  return std::tie(a.segment, a.speaker) < std::tie(b.segment, b.speaker);
}

Annotation::Annotation(std::string uri) : uri_(std::move(uri)) {}

Annotation::Annotation(std::string uri, std::vector<Turn> turns)
    : uri_(std::move(uri)), turns_(std::move(turns)) {
  std::sort(turns_.begin(), turns_.end());
  turns_.erase(std::unique(turns_.begin(), turns_.end()), turns_.end());
}

bool Annotation::add(const Segment& segment, const std::string& speaker) {
  Turn turn{segment, speaker};
  auto it = std::lower_bound(turns_.begin(), turns_.end(), turn);
  if (it != turns_.end() && *it == turn) return false;
  turns_.insert(it, std::move(turn));
  return true;
}

std::vector<std::string> Annotation::labels() const {
  std::set<std::string> seen;
  for (const auto& t : turns_) seen.insert(t.speaker);
  return {seen.begin(), seen.end()};
}

std::vector<Segment> Annotation::support(const std::string& speaker) const {
  std::vector<Segment> out;
  // turns_ is sorted by start, so a single pass merges.
  for (const auto& t : turns_) {
    if (t.speaker != speaker) continue;
    if (!out.empty() && t.segment.start() <= out.back().end()) {
      if (t.segment.end() > out.back().end())
        out.back() = Segment(out.back().start(), t.segment.end());
    } else {
      out.push_back(t.segment);
    }
  }
  return out;
}

SpeakerTimelineStats Annotation::stats() const {
  SpeakerTimelineStats s;
  std::vector<std::pair<double, int>> events;
  const auto labels = this->labels();
  s.speaker_count = static_cast<int>(labels.size());
  for (const auto& label : labels) {
    for (const auto& seg : support(label)) {
      s.total_speech += seg.duration();
      events.emplace_back(seg.start(), +1);
      events.emplace_back(seg.end(), -1);
    }
  }
  // Ends sort before starts at equal times: abutting segments do not overlap.
  std::sort(events.begin(), events.end());
  int active = 0;
  double last = 0.0;
  for (const auto& [t, delta] : events) {
    if (active >= 2) s.overlap_duration += t - last;
    active += delta;
    last = t;
  }
  return s;
}

namespace {

long long to_millis(double seconds) { return std::llround(seconds * 1000.0); }

void put_millis(std::ostream& out, long long ms) {
  if (ms < 0) {
    out << '-';
    ms = -ms;
  }
  const long long whole = ms / 1000;
  const long long frac = ms % 1000;
  out << whole << '.' << static_cast<char>('0' + frac / 100) << static_cast<char>('0' + (frac / 10) % 10)
      << static_cast<char>('0' + frac % 10);
}

double parse_time(const std::string& field, std::size_t line_no, const char* what) {
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(field, &used);
  } catch (const std::exception&) {
    throw ParseError(line_no, std::string("invalid ") + what + " '" + field + "'");
  }
  if (used != field.size() || !std::isfinite(value))
    throw ParseError(line_no, std::string("invalid ") + what + " '" + field + "'");
  return value;
}

}  // namespace

AnnotationMap parse_rttm(std::istream& in) {
  AnnotationMap result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields_in(line);
    std::vector<std::string> fields;
    for (std::string f; fields_in >> f;) fields.push_back(std::move(f));
    if (fields.empty() || fields.front().starts_with('#')) continue;
    if (fields.size() < 9)
      throw ParseError(line_no, "expected at least 9 fields, got " + std::to_string(fields.size()));
    if (fields[0] != "SPEAKER") throw ParseError(line_no, "unsupported record type '" + fields[0] + "'");
    const double tbeg = parse_time(fields[3], line_no, "onset");
    const double tdur = parse_time(fields[4], line_no, "duration");
    if (tbeg < 0.0) throw ParseError(line_no, "negative onset");
    // Snap to the millisecond grid the serializer writes on.
    const long long beg_ms = to_millis(tbeg);
    const long long dur_ms = to_millis(tdur);
    if (!(tdur > 0.0) || dur_ms <= 0) throw ParseError(line_no, "non-positive duration");
    const std::string& uri = fields[1];
    auto [it, inserted] = result.try_emplace(uri, uri);
    it->second.add(Segment(beg_ms / 1000.0, (beg_ms + dur_ms) / 1000.0), fields[7]);
  }
  return result;
}

AnnotationMap parse_rttm_string(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_rttm(in);
}

AnnotationMap read_rttm_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open RTTM file " + path);
  return parse_rttm(in);
}

void serialize_rttm(const AnnotationMap& annotations, std::ostream& out) {
  for (const auto& [uri, annotation] : annotations) {
    for (const auto& turn : annotation.turns()) {
      const long long beg = to_millis(turn.segment.start());
      const long long end = to_millis(turn.segment.end());
      out << "SPEAKER " << uri << " 1 ";
      put_millis(out, beg);
      out << ' ';
      put_millis(out, end - beg);
      out << " <NA> <NA> " << turn.speaker << " <NA> <NA>\n";
    }
  }
}

std::string serialize_rttm(const AnnotationMap& annotations) {
  std::ostringstream out;
  serialize_rttm(annotations, out);
  return out.str();
}

std::string serialize_rttm(const Annotation& annotation) {
  AnnotationMap one;
  one.emplace(annotation.uri(), annotation);
  return serialize_rttm(one);
}

void write_rttm_file(const std::string& path, const AnnotationMap& annotations) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write RTTM file " + path);
  serialize_rttm(annotations, out);
}

Annotation crop(const Annotation& annotation, const Segment& window) {
  std::vector<Turn> turns;
  for (const auto& t : annotation.turns()) {
    const double s = std::max(t.segment.start(), window.start());
    const double e = std::min(t.segment.end(), window.end());
    if (e > s) turns.push_back({Segment(s - window.start(), e - window.start()), t.speaker});
  }
  return Annotation(annotation.uri(), std::move(turns));
}

Activity discretize(const Annotation& annotation, double frame_duration, int num_frames,
                    const std::vector<std::string>& speaker_order) {
  if (!(frame_duration > 0.0)) throw Error("frame duration must be positive");
  if (num_frames < 0) throw Error("negative frame count");
  Activity act = Activity::Zero(num_frames, static_cast<Eigen::Index>(speaker_order.size()));
  std::map<std::string, int> column;
  for (std::size_t i = 0; i < speaker_order.size(); ++i) column.emplace(speaker_order[i], static_cast<int>(i));
  for (const auto& t : annotation.turns()) {
    auto it = column.find(t.speaker);
    if (it == column.end()) throw Error("speaker '" + t.speaker + "' missing from speaker order");
    // Frames whose centre lies in [start, end).
    const auto first = static_cast<long long>(std::ceil(t.segment.start() / frame_duration - 0.5));
    const auto last = static_cast<long long>(std::ceil(t.segment.end() / frame_duration - 0.5));
    for (long long f = std::max(0LL, first); f < std::min<long long>(last, num_frames); ++f) {
      act(f, it->second) = 1;
    }
  }
  return act;
}

}  // namespace eendvc
