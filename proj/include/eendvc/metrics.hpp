// SPDX-License-Identifier: Apache-2.0
//
// Diarization error rate with missed detection / false alarm / speaker
// confusion breakdown, and the arithmetic used in result tables.

#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "eendvc/timeline.hpp"

namespace eendvc {

/// Error times in seconds. Percentages are taken against reference speech,
/// where overlapped speech counts once per speaker.
struct ErrorTimes {
  double reference_speech = 0.0;
  double missed = 0.0;
  double false_alarm = 0.0;
  double confusion = 0.0;

  double error() const noexcept { return missed + false_alarm + confusion; }
  ErrorTimes& operator+=(const ErrorTimes& o);
};

struct DERReport {
  double missed_detection = 0.0;  // percent
  double false_alarm = 0.0;
  double speaker_confusion = 0.0;
  double der = 0.0;
  double reference_speech = 0.0;  // seconds
  std::map<std::string, ErrorTimes> per_recording;

  static DERReport from_times(const ErrorTimes& totals, std::map<std::string, ErrorTimes> per_recording = {});

  /// Human-readable table at one decimal.
  std::string to_table() const;
  nlohmann::json to_json() const;
  static DERReport from_json(const nlohmann::json& doc);
};

/// Optimal one-to-one reference->hypothesis label mapping maximising matched
/// speaker time over the whole recording.
std::map<std::string, std::string> optimal_mapping(const Annotation& reference, const Annotation& hypothesis,
                                                   double collar = 0.0);

ErrorTimes error_times(const Annotation& reference, const Annotation& hypothesis, double collar = 0.0);

/// Throws Error if the reference holds no speech.
DERReport score(const Annotation& reference, const Annotation& hypothesis, double collar = 0.0);

/// Scores every reference uri; a missing hypothesis counts as empty.
DERReport score(const AnnotationMap& reference, const AnnotationMap& hypothesis, double collar = 0.0);

double macro_average(const std::vector<double>& values);
double relative_change(double value, double base);

/// "17.0"
std::string format_percent(double value);
/// "-43.0%" / "+0.0%"
std::string format_relative(double value);

/// Maximum-weight assignment on a rows x cols weight matrix (row-major);
/// returns the column matched to each row, or -1.
std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weights);

}  // namespace eendvc
