// Copyright 2026 The patsim Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "patsim/similarity.hpp"

namespace patsim {

struct KMeansResult {
  std::vector<std::size_t> assignment;  // cluster per point, in [0, k)
  Eigen::MatrixXd centroids;            // k x dim
  double cost = 0.0;                    // sum of squared distances to the assigned centroid
  std::size_t iterations = 0;
  bool converged = false;
};

inline constexpr std::size_t kDefaultKMeansIters = 300;

/// Lloyd iterations from k-means++ seeding. Points are rows.
KMeansResult kmeans(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed,
                    std::size_t max_iters = kDefaultKMeansIters);

/// Each patient is represented by its row of similarity scores.
KMeansResult kmeans_from_similarity(const SimilarityMatrix& sim, std::size_t k, std::uint64_t seed,
                                    std::size_t max_iters = kDefaultKMeansIters);

/// `labels[i]` is the cluster of point i in [0, k), or nullopt for unlabeled points.
/// Labeled points stay in their cluster; initial centroids are the labeled group means.
KMeansResult seeded_kmeans(const Eigen::MatrixXd& points, std::size_t k,
                           std::span<const std::optional<std::size_t>> labels, std::uint64_t seed,
                           std::size_t max_iters = kDefaultKMeansIters);

struct PartitionPair {
  std::vector<std::string> clusters;  // per patient
  std::vector<std::string> cohorts;   // per patient, same order

  PartitionPair(std::vector<std::string> clusters, std::vector<std::string> cohorts);
  static PartitionPair from_maps(const std::map<std::string, std::string>& clusters,
                                 const std::map<std::string, std::string>& cohorts);
  template <typename A, typename B>
  static PartitionPair from_labels(std::span<const A> clusters, std::span<const B> cohorts) {
    std::vector<std::string> c, q;
    for (const auto& x : clusters) c.push_back(label_string(x));
    for (const auto& x : cohorts) q.push_back(label_string(x));
    return PartitionPair(std::move(c), std::move(q));
  }

  std::size_t size() const noexcept { return clusters.size(); }

 private:
  static std::string label_string(const std::string& s) { return s; }
  template <typename T>
  static std::string label_string(const T& v) { return std::to_string(v); }
};

struct ContingencyCounts {
  std::uint64_t tp = 0;  // same cluster, same cohort
  std::uint64_t tn = 0;  // different cluster, different cohort
  std::uint64_t fp = 0;  // same cluster, different cohort
  std::uint64_t fn = 0;  // different cluster, same cohort

  std::uint64_t total() const noexcept { return tp + tn + fp + fn; }
};

ContingencyCounts contingency_counts(const PartitionPair& part);

double rand_index(const PartitionPair& part);
double purity(const PartitionPair& part);
double nmi(const PartitionPair& part);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
  bool degenerate = false;  // some ratio had a zero denominator and was set to 0
};

PrecisionRecall precision_recall_f(const ContingencyCounts& counts);

struct EvaluationReport {
  double rand_index = 0.0;
  double purity = 0.0;
  double nmi = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
  std::size_t k = 0;
  std::uint64_t seed = 0;
};

EvaluationReport evaluate(const PartitionPair& part, std::size_t k, std::uint64_t seed);

/// Fixed key order, 17 significant digits.
std::string to_json(const EvaluationReport& report);
void write_report(const std::filesystem::path& path, const EvaluationReport& report);
EvaluationReport read_report(const std::filesystem::path& path);

}  // namespace patsim
