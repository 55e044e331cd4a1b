// SPDX-License-Identifier: Apache-2.0
//
// Segments, speaker-labelled annotations and RTTM I/O.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace eendvc {

/// Half-open time interval [start, end) in seconds.
class Segment {
 public:
  Segment(double start, double end);

  double start() const noexcept { return start_; }
  double end() const noexcept { return end_; }
  double duration() const noexcept { return end_ - start_; }

  bool contains(double t) const noexcept { return t >= start_ && t < end_; }

  friend bool operator==(const Segment&, const Segment&) = default;
  friend auto operator<=>(const Segment&, const Segment&) = default;

 private:
  double start_;
  double end_;
};

struct Turn {
  Segment segment;
  std::string speaker;

  friend bool operator==(const Turn&, const Turn&) = default;
};

bool operator<(const Turn& a, const Turn& b);

struct SpeakerTimelineStats {
  double total_speech = 0.0;      // speaker-time, overlap counted once per speaker
  double overlap_duration = 0.0;  // time with two or more distinct speakers active
  int speaker_count = 0;
};

/// Who spoke when, for one recording. Entries are kept sorted by
/// (start, end, speaker) and a (segment, speaker) pair is stored once.
class Annotation {
 public:
  Annotation() = default;
  explicit Annotation(std::string uri);
  Annotation(std::string uri, std::vector<Turn> turns);

  const std::string& uri() const noexcept { return uri_; }
  const std::vector<Turn>& turns() const noexcept { return turns_; }
  bool empty() const noexcept { return turns_.empty(); }
  std::size_t size() const noexcept { return turns_.size(); }

  /// Inserts in order; returns false if the pair was already present.
  bool add(const Segment& segment, const std::string& speaker);

  /// Distinct labels, sorted.
  std::vector<std::string> labels() const;

  SpeakerTimelineStats stats() const;

  /// Merged speech intervals of one speaker.
  std::vector<Segment> support(const std::string& speaker) const;

  friend bool operator==(const Annotation&, const Annotation&) = default;

 private:
  std::string uri_;
  std::vector<Turn> turns_;
};

using AnnotationMap = std::map<std::string, Annotation>;

/// Binary frames x speakers activity matrix.
using Activity = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

AnnotationMap parse_rttm(std::istream& in);
AnnotationMap parse_rttm_string(std::string_view text);
AnnotationMap read_rttm_file(const std::string& path);

void serialize_rttm(const AnnotationMap& annotations, std::ostream& out);
std::string serialize_rttm(const AnnotationMap& annotations);
std::string serialize_rttm(const Annotation& annotation);
void write_rttm_file(const std::string& path, const AnnotationMap& annotations);

/// Intersects every turn with `window`, re-expressed relative to window start.
Annotation crop(const Annotation& annotation, const Segment& window);

/// Cell (t, s) is 1 iff speaker s is active at the frame centre (t + 0.5) * frame_duration.
Activity discretize(const Annotation& annotation, double frame_duration, int num_frames,
                    const std::vector<std::string>& speaker_order);

}  // namespace eendvc
