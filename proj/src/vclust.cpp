// SPDX-License-Identifier: Apache-2.0

#include "eendvc/vclust.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "eendvc/error.hpp"

namespace eendvc {

void AHCConfig::validate() const {
  if (threshold < -1.0 || threshold > 1.0) throw ConfigError("similarity threshold must lie in [-1, 1]");
  if (min_cluster_size < 1) throw ConfigError("minimum cluster size must be positive");
  if (min_speakers < 1 || min_speakers > max_speakers)
    throw ConfigError("speaker bounds must satisfy 1 <= min <= max");
}

int ClusterAssignment::cluster_of(int window, int slot) const {
  auto it = mapping.find({window, slot});
  return it == mapping.end() ? -1 : it->second;
}

double centroid_similarity(const Eigen::VectorXd& sum_a, const Eigen::VectorXd& sum_b) {
  const double na = sum_a.norm(), nb = sum_b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return sum_a.dot(sum_b) / (na * nb);
}

namespace {

struct Cluster {
  int id;
  Eigen::VectorXd sum;
  std::vector<int> members;  // indices into the sorted embeddings
};

/// Highest-similarity pair; ties go to the smallest (id, id).
std::pair<int, int> best_pair(const std::vector<Cluster>& clusters, double& similarity) {
  std::pair<int, int> best{-1, -1};
  similarity = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < clusters.size(); ++i)
    for (std::size_t j = i + 1; j < clusters.size(); ++j) {
      const double s = centroid_similarity(clusters[i].sum, clusters[j].sum);
      if (s > similarity) {
        similarity = s;
        best = {static_cast<int>(i), static_cast<int>(j)};
      }
    }
  return best;
}

void merge(std::vector<Cluster>& clusters, std::pair<int, int> pair) {
  auto& keep = clusters[static_cast<std::size_t>(pair.first)];
  auto& gone = clusters[static_cast<std::size_t>(pair.second)];
  keep.sum += gone.sum;
  keep.members.insert(keep.members.end(), gone.members.begin(), gone.members.end());
  clusters.erase(clusters.begin() + pair.second);
}

}  // namespace

ClusterAssignment cluster(const std::vector<SpeakerEmbedding>& embeddings, const AHCConfig& config) {
  config.validate();
  if (embeddings.empty()) throw Error("cannot cluster an empty embedding set");

  std::vector<int> order(embeddings.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& x = embeddings[static_cast<std::size_t>(a)];
    const auto& y = embeddings[static_cast<std::size_t>(b)];
    if (x.window != y.window) return x.window < y.window;
    if (x.slot != y.slot) return x.slot < y.slot;
    return std::lexicographical_compare(x.vector.data(), x.vector.data() + x.vector.size(), y.vector.data(),
                                        y.vector.data() + y.vector.size());
  });
  const auto n = static_cast<int>(order.size());
  auto vec = [&](int sorted) -> const Eigen::VectorXd& {
    return embeddings[static_cast<std::size_t>(order[static_cast<std::size_t>(sorted)])].vector;
  };

  // Clusters stay sorted by id (= smallest member index), so list position order is id order.
  std::vector<Cluster> clusters;
  for (int i = 0; i < n; ++i) clusters.push_back({i, vec(i), {i}});

  ClusterAssignment result;
  while (clusters.size() > 1) {
    double sim = 0.0;
    const auto pair = best_pair(clusters, sim);
    if (sim < config.threshold) break;
    result.merge_similarities.push_back(sim);
    merge(clusters, pair);
  }

  const int floor = std::min(config.min_cluster_size, std::max(1, static_cast<int>(std::lround(0.1 * n))));
  result.effective_min_cluster_size = floor;
  std::vector<Cluster> large, small;
  for (auto& c : clusters) (static_cast<int>(c.members.size()) >= floor ? large : small).push_back(std::move(c));
  if (large.empty()) {
    auto biggest = std::min_element(small.begin(), small.end(), [](const Cluster& a, const Cluster& b) {
      return a.members.size() != b.members.size() ? a.members.size() > b.members.size() : a.id < b.id;
    });
    large.push_back(std::move(*biggest));
    small.erase(biggest);
    result.constraint_violation = true;
    spdlog::warn("no cluster reached {} members; keeping the largest", floor);
  }
  std::vector<Eigen::VectorXd> centroids;
  for (const auto& c : large) centroids.push_back(c.sum);
  for (const auto& c : small)
    for (int m : c.members) {
      std::size_t best = 0;
      double best_sim = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < centroids.size(); ++k) {
        const double s = centroid_similarity(vec(m), centroids[k]);
        if (s > best_sim) {
          best_sim = s;
          best = k;
        }
      }
      large[best].sum += vec(m);
      large[best].members.push_back(m);
      ++result.dissolved;
    }
  clusters = std::move(large);

  while (static_cast<int>(clusters.size()) > config.max_speakers) {
    double sim = 0.0;
    merge(clusters, best_pair(clusters, sim));
    ++result.forced_merges;
  }
  if (static_cast<int>(clusters.size()) < config.min_speakers) {
    result.constraint_violation = true;
    spdlog::warn("clustering found {} speaker(s), fewer than the minimum of {}", clusters.size(), config.min_speakers);
  }

  result.cluster_count = static_cast<int>(clusters.size());
  for (std::size_t k = 0; k < clusters.size(); ++k)
    for (int m : clusters[k].members) {
      const auto& e = embeddings[static_cast<std::size_t>(order[static_cast<std::size_t>(m)])];
      result.mapping[{e.window, e.slot}] = static_cast<int>(k);
    }
  return result;
}

Annotation reconcile(const std::string& uri, const std::vector<WindowResult>& windows,
                     const ClusterAssignment& assignment, double window_duration, double hop, double frame_duration,
                     double total_duration) {
  if (hop <= 0.0 || frame_duration <= 0.0) throw ConfigError("hop and frame duration must be positive");
  const int window_frames = static_cast<int>(std::lround(window_duration / frame_duration));

  struct Piece {
    double start, end;
    int cluster;
  };
  std::vector<Piece> pieces;
  for (const auto& w : windows) {
    const double offset = w.index * hop;
    const auto frames = static_cast<int>(std::min<Eigen::Index>(w.activity.rows(), window_frames));
    std::map<int, std::vector<std::uint8_t>> active;  // cluster -> frame activity
    for (Eigen::Index slot = 0; slot < w.activity.cols(); ++slot) {
      const int c = assignment.cluster_of(w.index, static_cast<int>(slot));
      if (c < 0) continue;
      auto& row = active[c];
      row.resize(static_cast<std::size_t>(frames), 0);
      for (int t = 0; t < frames; ++t) row[static_cast<std::size_t>(t)] |= w.activity(t, slot);
    }
    for (const auto& [c, row] : active) {
      for (int t = 0; t < frames;) {
        if (!row[static_cast<std::size_t>(t)]) {
          ++t;
          continue;
        }
        int end = t;
        while (end < frames && row[static_cast<std::size_t>(end)]) ++end;
        const double s = offset + t * frame_duration;
        const double e = std::min(offset + end * frame_duration, total_duration);
        if (e > s) pieces.push_back({s, e, c});
        t = end;
      }
    }
  }

  std::map<int, double> first_seen;
  for (const auto& p : pieces) {
    auto [it, inserted] = first_seen.emplace(p.cluster, p.start);
    if (!inserted) it->second = std::min(it->second, p.start);
  }
  std::vector<std::pair<double, int>> ranking;
  for (const auto& [c, t] : first_seen) ranking.emplace_back(t, c);
  std::sort(ranking.begin(), ranking.end());
  std::map<int, std::string> label;
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "spk%02zu", i);
    label[ranking[i].second] = buf;
  }

  Annotation out(uri);
  for (const auto& p : pieces) out.add(Segment(p.start, p.end), label[p.cluster]);
  return out;
}

}  // namespace eendvc
