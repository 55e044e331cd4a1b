// SPDX-License-Identifier: Apache-2.0
//
// Constrained agglomerative clustering of local speaker embeddings and
// reconciliation of window-level activity into a global annotation.

#pragma once

#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "eendvc/embeddings.hpp"
#include "eendvc/timeline.hpp"

namespace eendvc {

struct AHCConfig {
  double threshold = 0.70;  // centroid cosine similarity needed to merge
  int min_cluster_size = 30;
  int min_speakers = 2;
  int max_speakers = 8;

  void validate() const;
};

struct ClusterAssignment {
  std::map<std::pair<int, int>, int> mapping;  // (window, slot) -> cluster
  int cluster_count = 0;

  std::vector<double> merge_similarities;  // threshold stage, in merge order
  int effective_min_cluster_size = 0;
  int dissolved = 0;                        // embeddings reassigned after dissolution
  int forced_merges = 0;
  bool constraint_violation = false;

  /// -1 when the pair has no embedding.
  int cluster_of(int window, int slot) const;
};

/// Threshold-stopped centroid-linkage AHC, small-cluster dissolution, then
/// forced merges down to max_speakers. Input order does not matter.
ClusterAssignment cluster(const std::vector<SpeakerEmbedding>& embeddings, const AHCConfig& config = {});

/// Cosine similarity of two cluster centroids given their member sums.
double centroid_similarity(const Eigen::VectorXd& sum_a, const Eigen::VectorXd& sum_b);

struct WindowResult {
  int index = 0;
  Activity activity;  // frames x slots
  std::vector<SpeakerEmbedding> embeddings;
};

/// Places each window's mapped slot activity at index * hop and converts frame
/// runs to segments labelled spk00, spk01, ... by first appearance. Slots
/// without an embedding are dropped; segments are clipped to `total_duration`.
Annotation reconcile(const std::string& uri, const std::vector<WindowResult>& windows,
                     const ClusterAssignment& assignment, double window_duration, double hop,
                     double frame_duration = 0.02,
                     double total_duration = std::numeric_limits<double>::infinity());

}  // namespace eendvc
