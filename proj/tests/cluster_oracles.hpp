// SPDX-License-Identifier: Apache-2.0
//
// Planted-blob embedding generators and a reference centroid-merge procedure.

#pragma once

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "eendvc/vclust.hpp"

namespace eendvc::testing {

struct Blobs {
  std::vector<SpeakerEmbedding> embeddings;
  std::vector<int> truth;  // planted blob per embedding
  std::vector<Eigen::VectorXd> centers;
};

inline Eigen::VectorXd random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = normal(rng);
  return v.normalized();
}

/// Unit-norm points around given centers; `spread` is the per-coordinate noise.
inline Blobs blobs_around(const std::vector<Eigen::VectorXd>& centers, const std::vector<int>& sizes, double spread,
                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Blobs b;
  b.centers = centers;
  int window = 0;
  for (std::size_t c = 0; c < centers.size(); ++c)
    for (int i = 0; i < sizes[c]; ++i) {
      Eigen::VectorXd v = centers[c];
      for (Eigen::Index d = 0; d < v.size(); ++d) v(d) += spread * normal(rng);
      b.embeddings.push_back({v.normalized(), window / 4, window % 4, 1.0});
      b.truth.push_back(static_cast<int>(c));
      ++window;
    }
  return b;
}

/// `count` nearly orthogonal centers in `dim` dimensions (pairwise cosine < 0.3).
inline std::vector<Eigen::VectorXd> separated_centers(int count, int dim, std::mt19937_64& rng) {
  std::vector<Eigen::VectorXd> centers;
  while (static_cast<int>(centers.size()) < count) {
    Eigen::VectorXd v = random_unit(rng, dim);
    bool ok = true;
    for (const auto& c : centers) ok = ok && std::abs(c.dot(v)) < 0.3;
    if (ok) centers.push_back(v);
  }
  return centers;
}

/// Canonical form of a partition: sorted list of sorted member sets.
inline std::set<std::set<int>> partition_of(const std::vector<int>& labels) {
  std::map<int, std::set<int>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].insert(static_cast<int>(i));
  std::set<std::set<int>> out;
  for (auto& [k, members] : groups) out.insert(members);
  return out;
}

inline std::vector<int> labels_of(const Blobs& b, const ClusterAssignment& a) {
  std::vector<int> labels;
  for (const auto& e : b.embeddings) labels.push_back(a.cluster_of(e.window, e.slot));
  return labels;
}

/// Each point to the nearest planted center (by cosine).
inline std::vector<int> nearest_center(const Blobs& b) {
  std::vector<int> labels;
  for (const auto& e : b.embeddings) {
    int best = 0;
    for (std::size_t c = 1; c < b.centers.size(); ++c)
      if (e.vector.dot(b.centers[c]) > e.vector.dot(b.centers[static_cast<std::size_t>(best)])) best = static_cast<int>(c);
    labels.push_back(best);
  }
  return labels;
}

/// Starting from the given groups, repeatedly merges the pair of groups whose
/// member-sum centroids are most cosine-similar until `target` groups remain.
inline std::vector<int> merge_groups_to(const Blobs& b, std::vector<int> labels, int target) {
  for (;;) {
    std::map<int, Eigen::VectorXd> sums;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      auto [it, fresh] = sums.try_emplace(labels[i], Eigen::VectorXd::Zero(b.embeddings[i].vector.size()));
      it->second += b.embeddings[i].vector;
    }
    if (static_cast<int>(sums.size()) <= target) return labels;
    double best = -2.0;
    std::pair<int, int> pair{-1, -1};
    for (auto i = sums.begin(); i != sums.end(); ++i)
      for (auto j = std::next(i); j != sums.end(); ++j) {
        const double s = i->second.normalized().dot(j->second.normalized());
        if (s > best) {
          best = s;
          pair = {i->first, j->first};
        }
      }
    for (auto& l : labels)
      if (l == pair.second) l = pair.first;
  }
}

}  // namespace eendvc::testing
