// SPDX-License-Identifier: Apache-2.0

#include "eendvc/powerset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>

#include "eendvc/error.hpp"

namespace eendvc {

PowersetCodec::PowersetCodec(int max_speakers, int max_concurrent)
    : max_speakers_(max_speakers), max_concurrent_(max_concurrent) {
  if (max_speakers < 1 || max_speakers > 20)
    throw ConfigError("powerset max_speakers must be in [1, 20]");
  if (max_concurrent < 1 || max_concurrent > max_speakers)
    throw ConfigError("powerset max_concurrent must be in [1, max_speakers]");
  const std::uint32_t all = 1u << max_speakers;
  index_of_mask_.assign(all, -1);
  // Size first, then lexicographic order of the sorted slot lists.
  for (int size = 0; size <= max_concurrent; ++size) {
    std::vector<std::uint32_t> level;
    for (std::uint32_t m = 0; m < all; ++m)
      if (std::popcount(m) == size) level.push_back(m);
    auto slots = [](std::uint32_t m) {
      std::vector<int> s;
      for (int b = 0; m; ++b, m >>= 1)
        if (m & 1u) s.push_back(b);
      return s;
    };
    std::sort(level.begin(), level.end(), [&](auto a, auto b) { return slots(a) < slots(b); });
    for (auto m : level) {
      index_of_mask_[m] = static_cast<int>(classes_.size());
      classes_.push_back(m);
    }
  }
}

std::uint32_t PowersetCodec::subset(int index) const {
  if (index < 0 || index >= num_classes()) throw EncodingError("powerset class index out of range");
  return classes_[static_cast<std::size_t>(index)];
}

int PowersetCodec::encode_mask(std::uint32_t mask) const {
  if (mask >= index_of_mask_.size()) throw EncodingError("activity row references a slot beyond max_speakers");
  const int idx = index_of_mask_[mask];
  if (idx < 0)
    throw EncodingError(std::to_string(std::popcount(mask)) + " concurrent speakers exceed the limit of " +
                        std::to_string(max_concurrent_));
  return idx;
}

int PowersetCodec::encode(std::span<const std::uint8_t> row) const {
  if (static_cast<int>(row.size()) != max_speakers_) throw EncodingError("activity row length must equal max_speakers");
  std::uint32_t mask = 0;
  for (std::size_t k = 0; k < row.size(); ++k)
    if (row[k]) mask |= 1u << k;
  return encode_mask(mask);
}

std::vector<std::uint8_t> PowersetCodec::decode(int index) const {
  const std::uint32_t m = subset(index);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(max_speakers_), 0);
  for (int k = 0; k < max_speakers_; ++k) row[static_cast<std::size_t>(k)] = (m >> k) & 1u;
  return row;
}

RowMatrix PowersetCodec::mapping() const {
  RowMatrix m = RowMatrix::Zero(num_classes(), max_speakers_);
  for (int c = 0; c < num_classes(); ++c)
    for (int k = 0; k < max_speakers_; ++k) m(c, k) = (classes_[static_cast<std::size_t>(c)] >> k) & 1u;
  return m;
}

Activity PowersetCodec::decode_argmax(const RowMatrix& distribution) const {
  if (distribution.cols() != num_classes()) throw ShapeError("distribution width must equal the class count");
  Activity out = Activity::Zero(distribution.rows(), max_speakers_);
  for (Eigen::Index t = 0; t < distribution.rows(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < distribution.cols(); ++c)
      if (distribution(t, c) > distribution(t, best)) best = c;
    const auto m = classes_[static_cast<std::size_t>(best)];
    for (int k = 0; k < max_speakers_; ++k) out(t, k) = (m >> k) & 1u;
  }
  return out;
}

namespace {

// Window-level frame counts per slot after injection, used to rank speakers
// when a frame holds more than max_concurrent of them.
std::vector<int> frame_masks(const Activity& reference, std::span<const int> slot_of_speaker,
                             const PowersetCodec& codec) {
  const int K = codec.max_speakers();
  const int C = codec.max_concurrent();
  std::vector<long> slot_count(static_cast<std::size_t>(K), 0);
  for (Eigen::Index s = 0; s < reference.cols(); ++s)
    slot_count[static_cast<std::size_t>(slot_of_speaker[static_cast<std::size_t>(s)])] +=
        reference.col(s).cast<long>().sum();

  std::vector<int> order(static_cast<std::size_t>(K));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return slot_count[static_cast<std::size_t>(a)] > slot_count[static_cast<std::size_t>(b)];
  });

  std::vector<int> targets(static_cast<std::size_t>(reference.rows()));
  for (Eigen::Index t = 0; t < reference.rows(); ++t) {
    std::uint32_t mask = 0;
    for (Eigen::Index s = 0; s < reference.cols(); ++s)
      if (reference(t, s)) mask |= 1u << slot_of_speaker[static_cast<std::size_t>(s)];
    if (std::popcount(mask) > C) {
      std::uint32_t kept = 0;
      int n = 0;
      for (int slot : order) {
        if (n == C) break;
        if (mask & (1u << slot)) {
          kept |= 1u << slot;
          ++n;
        }
      }
      mask = kept;
    }
    targets[static_cast<std::size_t>(t)] = codec.encode_mask(mask);
  }
  return targets;
}

}  // namespace

std::vector<int> targets_for_injection(const Activity& reference, std::span<const int> slot_of_speaker,
                                       const PowersetCodec& codec) {
  if (static_cast<Eigen::Index>(slot_of_speaker.size()) != reference.cols())
    throw ShapeError("injection size must equal the reference speaker count");
  return frame_masks(reference, slot_of_speaker, codec);
}

SlotAssignment assign_slots(const Activity& reference, const RowMatrix& distribution, const PowersetCodec& codec) {
  const int K = codec.max_speakers();
  const int S = static_cast<int>(reference.cols());
  if (S > K) throw TooManySpeakersError(S, K);
  if (distribution.rows() != reference.rows() || distribution.cols() != codec.num_classes())
    throw ShapeError("distribution must be frames x classes and match the reference frame count");

  RowMatrix neg_log = (-distribution.array().max(std::numeric_limits<double>::min()).log()).matrix();

  SlotAssignment best;
  best.nll = std::numeric_limits<double>::infinity();
  std::vector<int> injection(static_cast<std::size_t>(S));
  std::vector<bool> used(static_cast<std::size_t>(K), false);

  auto consider = [&] {
    auto targets = frame_masks(reference, injection, codec);
    double nll = 0.0;
    for (std::size_t t = 0; t < targets.size(); ++t) nll += neg_log(static_cast<Eigen::Index>(t), targets[t]);
    const bool better = nll < best.nll ||
                        (nll == best.nll && std::tie(targets, injection) < std::tie(best.targets, best.slot_of_speaker));
    if (better) {
      best.nll = nll;
      best.targets = std::move(targets);
      best.slot_of_speaker = injection;
    }
  };

  // Depth-first over all K!/(K-S)! injections.
  auto recurse = [&](auto&& self, int s) -> void {
    if (s == S) {
      consider();
      return;
    }
    for (int k = 0; k < K; ++k) {
      if (used[static_cast<std::size_t>(k)]) continue;
      used[static_cast<std::size_t>(k)] = true;
      injection[static_cast<std::size_t>(s)] = k;
      self(self, s + 1);
      used[static_cast<std::size_t>(k)] = false;
    }
  };
  recurse(recurse, 0);
  return best;
}

}  // namespace eendvc
