// SPDX-License-Identifier: Apache-2.0
//
// Powerset labels: every admissible set of simultaneously active speakers
// (at most `max_concurrent` out of `max_speakers` slots) is one class.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "eendvc/timeline.hpp"

namespace eendvc {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class PowersetCodec {
 public:
  /// Throws ConfigError unless 1 <= max_concurrent <= max_speakers <= 20.
  PowersetCodec(int max_speakers, int max_concurrent);

  int max_speakers() const noexcept { return max_speakers_; }
  int max_concurrent() const noexcept { return max_concurrent_; }
  int num_classes() const noexcept { return static_cast<int>(classes_.size()); }

  /// Slot bitmask of class `index`; class 0 is silence.
  std::uint32_t subset(int index) const;

  int encode(std::span<const std::uint8_t> row) const;
  int encode_mask(std::uint32_t mask) const;
  std::vector<std::uint8_t> decode(int index) const;

  /// num_classes x max_speakers matrix with row c = decode(c).
  RowMatrix mapping() const;

  /// Per-frame argmax (lowest index on ties) decoded to slot activity.
  Activity decode_argmax(const RowMatrix& distribution) const;

  friend bool operator==(const PowersetCodec& a, const PowersetCodec& b) {
    return a.max_speakers_ == b.max_speakers_ && a.max_concurrent_ == b.max_concurrent_;
  }

 private:
  int max_speakers_;
  int max_concurrent_;
  std::vector<std::uint32_t> classes_;
  std::vector<int> index_of_mask_;  // -1 for inadmissible masks
};

struct SlotAssignment {
  std::vector<int> slot_of_speaker;  // reference column -> slot
  std::vector<int> targets;          // class index per frame
  double nll = 0.0;                  // summed over frames
};

/// Picks the injection of the reference speakers into codec slots whose induced
/// powerset targets have minimum negative log-likelihood under `distribution`
/// (frames x classes, rows are probabilities). Frames with more than
/// max_concurrent active speakers keep those with the most active frames in the
/// window. Exact ties resolve to the lexicographically smallest target sequence,
/// then the smallest slot vector. Throws TooManySpeakersError if the reference
/// has more columns than slots.
SlotAssignment assign_slots(const Activity& reference, const RowMatrix& distribution,
                            const PowersetCodec& codec);

/// Targets for a fixed injection, with the same over-concurrency clipping rule.
std::vector<int> targets_for_injection(const Activity& reference, std::span<const int> slot_of_speaker,
                                       const PowersetCodec& codec);

}  // namespace eendvc
