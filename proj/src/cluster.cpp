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

#include "patsim/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>
#include <unordered_map>

#include <json.hpp>

#include "patsim/errors.hpp"

namespace patsim {

namespace {

using Index = Eigen::Index;

// Nearest centroid per point; ties go to the lowest centroid index.
double assign(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids, std::vector<std::size_t>& out,
              std::span<const std::optional<std::size_t>> pinned) {
  double cost = 0.0;
  for (Index i = 0; i < points.rows(); ++i) {
    const auto ui = static_cast<std::size_t>(i);
    if (!pinned.empty() && pinned[ui]) {
      out[ui] = *pinned[ui];
      cost += (points.row(i) - centroids.row(static_cast<Index>(out[ui]))).squaredNorm();
      continue;
    }
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (Index c = 0; c < centroids.rows(); ++c) {
      const double d2 = (points.row(i) - centroids.row(c)).squaredNorm();
      if (d2 < best) {
        best = d2;
        arg = static_cast<std::size_t>(c);
      }
    }
    out[ui] = arg;
    cost += best;
  }
  return cost;
}

Eigen::MatrixXd plus_plus_seeds(const Eigen::MatrixXd& points, std::size_t k, std::mt19937_64& rng) {
  const Index n = points.rows();
  Eigen::MatrixXd centroids(static_cast<Index>(k), points.cols());
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  Index first = std::uniform_int_distribution<Index>(0, n - 1)(rng);
  centroids.row(0) = points.row(first);
  chosen[static_cast<std::size_t>(first)] = true;
  Eigen::VectorXd d2(n);
  for (Index i = 0; i < n; ++i) d2(i) = (points.row(i) - centroids.row(0)).squaredNorm();

  for (Index c = 1; c < static_cast<Index>(k); ++c) {
    Index pick = -1;
    if (d2.sum() > 0.0) {
      std::discrete_distribution<Index> dist(d2.data(), d2.data() + n);
      pick = dist(rng);
    } else {
      // Every point coincides with a centroid: fall back to an unused index.
      std::vector<Index> unused;
      for (Index i = 0; i < n; ++i)
        if (!chosen[static_cast<std::size_t>(i)]) unused.push_back(i);
      pick = unused[std::uniform_int_distribution<std::size_t>(0, unused.size() - 1)(rng)];
    }
    chosen[static_cast<std::size_t>(pick)] = true;
    centroids.row(c) = points.row(pick);
    for (Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (points.row(i) - centroids.row(c)).squaredNorm());
  }
  return centroids;
}

KMeansResult lloyd(const Eigen::MatrixXd& points, Eigen::MatrixXd centroids,
                   std::span<const std::optional<std::size_t>> pinned, std::size_t max_iters) {
  const Index n = points.rows();
  const Index k = centroids.rows();
  KMeansResult r;
  r.assignment.assign(static_cast<std::size_t>(n), 0);
  r.cost = assign(points, centroids, r.assignment, pinned);
  while (r.iterations < max_iters) {
    ++r.iterations;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      const auto c = r.assignment[static_cast<std::size_t>(i)];
      sums.row(static_cast<Index>(c)) += points.row(i);
      ++sizes[c];
    }
    for (Index c = 0; c < k; ++c) {
      if (sizes[static_cast<std::size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<double>(sizes[static_cast<std::size_t>(c)]);
        continue;
      }
      // Empty cluster: move it onto the free point farthest from its centroid.
      double far = -1.0;
      Index arg = -1;
      for (Index i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        if ((!pinned.empty() && pinned[ui]) || sizes[r.assignment[ui]] < 2) continue;
        const double d2 = (points.row(i) - centroids.row(static_cast<Index>(r.assignment[ui]))).squaredNorm();
        if (d2 > far) {
          far = d2;
          arg = i;
        }
      }
      if (arg >= 0) {
        --sizes[r.assignment[static_cast<std::size_t>(arg)]];
        r.assignment[static_cast<std::size_t>(arg)] = static_cast<std::size_t>(c);
        sizes[static_cast<std::size_t>(c)] = 1;
        centroids.row(c) = points.row(arg);
      }
    }
    auto next = r.assignment;
    r.cost = assign(points, centroids, next, pinned);
    if (next == r.assignment) {
      r.converged = true;
      break;
    }
    r.assignment = std::move(next);
  }
  r.centroids = std::move(centroids);
  return r;
}

void check_input(const Eigen::MatrixXd& points, std::size_t k) {
  if (points.rows() == 0) throw PreconditionError("kmeans: no points");
  if (k < 1) throw PreconditionError("kmeans: k must be >= 1");
  if (k > static_cast<std::size_t>(points.rows())) {
    throw PreconditionError("kmeans: k = " + std::to_string(k) + " exceeds the " +
                            std::to_string(points.rows()) + " points");
  }
  if (!points.allFinite()) throw PreconditionError("kmeans: non-finite coordinates");
}

}  // namespace

KMeansResult kmeans(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed, std::size_t max_iters) {
  check_input(points, k);
  std::mt19937_64 rng(seed);
  return lloyd(points, plus_plus_seeds(points, k, rng), {}, max_iters);
}

KMeansResult kmeans_from_similarity(const SimilarityMatrix& sim, std::size_t k, std::uint64_t seed,
                                    std::size_t max_iters) {
  if (sim.scores.rows() != sim.scores.cols()) throw PreconditionError("similarity matrix must be square");
  return kmeans(sim.scores, k, seed, max_iters);
}

KMeansResult seeded_kmeans(const Eigen::MatrixXd& points, std::size_t k,
                           std::span<const std::optional<std::size_t>> labels, std::uint64_t seed,
                           std::size_t max_iters) {
  check_input(points, k);
  if (labels.size() != static_cast<std::size_t>(points.rows())) {
    throw PreconditionError("seeded_kmeans: one label slot per point is required");
  }
  Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(static_cast<Index>(k), points.cols());
  std::vector<std::size_t> sizes(k, 0);
  std::size_t groups = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    if (*labels[i] >= k) {
      throw PreconditionError("seeded_kmeans: label " + std::to_string(*labels[i]) + " is outside [0, k)");
    }
    if (sizes[*labels[i]]++ == 0) ++groups;
    centroids.row(static_cast<Index>(*labels[i])) += points.row(static_cast<Index>(i));
  }
  if (groups != k) {
    throw PreconditionError("seeded_kmeans: " + std::to_string(groups) + " labeled groups for k = " +
                            std::to_string(k));
  }
  for (std::size_t c = 0; c < k; ++c) centroids.row(static_cast<Index>(c)) /= static_cast<double>(sizes[c]);
  (void)seed;  // seeding is fully determined by the labels
  return lloyd(points, std::move(centroids), labels, max_iters);
}

PartitionPair::PartitionPair(std::vector<std::string> c, std::vector<std::string> q)
    : clusters(std::move(c)), cohorts(std::move(q)) {
  if (clusters.size() != cohorts.size()) {
    throw PreconditionError("partition pair: " + std::to_string(clusters.size()) + " cluster labels vs " +
                            std::to_string(cohorts.size()) + " cohort labels");
  }
}

PartitionPair PartitionPair::from_maps(const std::map<std::string, std::string>& clusters,
                                       const std::map<std::string, std::string>& cohorts) {
  if (clusters.size() != cohorts.size()) throw PreconditionError("partition pair: patient sets differ");
  std::vector<std::string> c, q;
  for (const auto& [patient, cluster] : clusters) {
    const auto it = cohorts.find(patient);
    if (it == cohorts.end()) throw PreconditionError("partition pair: no cohort for patient '" + patient + "'");
    c.push_back(cluster);
    q.push_back(it->second);
  }
  return PartitionPair(std::move(c), std::move(q));
}

namespace {

struct Table {
  std::vector<std::vector<std::uint64_t>> cells;  // cluster x cohort
  std::vector<std::uint64_t> rows, cols;
  std::uint64_t n = 0;
};

Table contingency_table(const PartitionPair& part) {
  std::unordered_map<std::string, std::size_t> ci, qi;
  for (const auto& c : part.clusters) ci.try_emplace(c, ci.size());
  for (const auto& q : part.cohorts) qi.try_emplace(q, qi.size());
  Table t;
  t.cells.assign(ci.size(), std::vector<std::uint64_t>(qi.size(), 0));
  t.rows.assign(ci.size(), 0);
  t.cols.assign(qi.size(), 0);
  for (std::size_t i = 0; i < part.size(); ++i) {
    const auto a = ci[part.clusters[i]], b = qi[part.cohorts[i]];
    ++t.cells[a][b];
    ++t.rows[a];
    ++t.cols[b];
  }
  t.n = part.size();
  return t;
}

std::uint64_t choose2(std::uint64_t x) { return x * (x - (x > 0 ? 1 : 0)) / 2; }

double entropy(const std::vector<std::uint64_t>& counts, double n) {
  double h = 0.0;
  for (const auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace

ContingencyCounts contingency_counts(const PartitionPair& part) {
  const Table t = contingency_table(part);
  std::uint64_t same_both = 0, same_cluster = 0, same_cohort = 0;
  for (const auto& row : t.cells)
    for (const auto c : row) same_both += choose2(c);
  for (const auto r : t.rows) same_cluster += choose2(r);
  for (const auto c : t.cols) same_cohort += choose2(c);
  ContingencyCounts k;
  k.tp = same_both;
  k.fp = same_cluster - same_both;
  k.fn = same_cohort - same_both;
  k.tn = choose2(t.n) - k.tp - k.fp - k.fn;
  return k;
}

double rand_index(const PartitionPair& part) {
  if (part.size() < 2) throw PreconditionError("rand_index needs at least two patients");
  const auto k = contingency_counts(part);
  return static_cast<double>(k.tp + k.tn) / static_cast<double>(k.total());
}

double purity(const PartitionPair& part) {
  if (part.size() == 0) throw PreconditionError("purity needs at least one patient");
  const Table t = contingency_table(part);
  std::uint64_t hits = 0;
  for (const auto& row : t.cells) hits += *std::max_element(row.begin(), row.end());
  return static_cast<double>(hits) / static_cast<double>(t.n);
}

double nmi(const PartitionPair& part) {
  if (part.size() == 0) throw PreconditionError("nmi needs at least one patient");
  const Table t = contingency_table(part);
  const double n = static_cast<double>(t.n);
  const double hx = entropy(t.rows, n), hy = entropy(t.cols, n);
  // Two single-block partitions are identical.
  if (hx == 0.0 && hy == 0.0) return 1.0;
  double mi = 0.0;
  for (std::size_t a = 0; a < t.rows.size(); ++a) {
    for (std::size_t b = 0; b < t.cols.size(); ++b) {
      const auto c = t.cells[a][b];
      if (c == 0) continue;
      const double pab = static_cast<double>(c) / n;
      mi += pab * std::log(pab * n * n / (static_cast<double>(t.rows[a]) * static_cast<double>(t.cols[b])));
    }
  }
  return std::clamp(mi / ((hx + hy) / 2.0), 0.0, 1.0);
}

PrecisionRecall precision_recall_f(const ContingencyCounts& counts) {
  PrecisionRecall r;
  const auto tp = static_cast<double>(counts.tp);
  if (counts.tp + counts.fp > 0) r.precision = tp / static_cast<double>(counts.tp + counts.fp);
  else r.degenerate = true;
  if (counts.tp + counts.fn > 0) r.recall = tp / static_cast<double>(counts.tp + counts.fn);
  else r.degenerate = true;
  if (r.precision + r.recall > 0.0) r.f_measure = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  else r.degenerate = true;
  if (r.degenerate) std::cerr << "warning: precision/recall undefined for this partition; reported as 0\n";
  return r;
}

EvaluationReport evaluate(const PartitionPair& part, std::size_t k, std::uint64_t seed) {
  EvaluationReport r;
  r.rand_index = rand_index(part);
  r.purity = purity(part);
  r.nmi = nmi(part);
  const auto pr = precision_recall_f(contingency_counts(part));
  r.precision = pr.precision;
  r.recall = pr.recall;
  r.f_measure = pr.f_measure;
  r.k = k;
  r.seed = seed;
  return r;
}

std::string to_json(const EvaluationReport& r) {
  nlohmann::ordered_json j;
  j["rand_index"] = r.rand_index;
  j["purity"] = r.purity;
  j["nmi"] = r.nmi;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f_measure"] = r.f_measure;
  j["k"] = r.k;
  j["seed"] = r.seed;
  return j.dump(2) + "\n";
}

void write_report(const std::filesystem::path& path, const EvaluationReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write report '" + path.string() + "'");
  out << to_json(report);
}

EvaluationReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open report '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    EvaluationReport r;
    r.rand_index = j.at("rand_index").get<double>();
    r.purity = j.at("purity").get<double>();
    r.nmi = j.at("nmi").get<double>();
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.f_measure = j.at("f_measure").get<double>();
    r.k = j.at("k").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("report '" + path.string() + "': " + e.what());
  }
}

}  // namespace patsim
