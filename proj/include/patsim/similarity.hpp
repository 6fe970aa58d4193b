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
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "patsim/representation.hpp"

namespace patsim {

/// d x d gram matrix X X^T of a patient matrix. Patients with different visit
/// counts share this shape, which is what makes them comparable.
struct Configuration {
  Eigen::MatrixXd gram;
};

Configuration configuration(const Eigen::MatrixXd& x);

/// Double-centered Euclidean distance matrix of n samples (the rows of `points`):
/// A_ij = d_ij - mean_i - mean_j + grand mean.
struct CenteredDistanceMatrix {
  Eigen::MatrixXd values;
};

/// Throws PreconditionError when fewer than two samples are given.
CenteredDistanceMatrix center_distance_matrix(const Eigen::MatrixXd& points);

/// tr(Sx Sy) / sqrt(tr(Sx^2) tr(Sy^2)) with S = X X^T. Throws PreconditionError on a
/// dimension mismatch and UndefinedSimilarity for a zero matrix.
double rv_coefficient(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);
double rv_coefficient(const PatientMatrix& x, const PatientMatrix& y);

/// Empirical dCov^2 with the d embedding rows as samples; each patient's samples
/// live in its own R^{N_p}. Clamped at zero.
double distance_covariance(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);
double distance_covariance(const PatientMatrix& x, const PatientMatrix& y);

/// dCov^2(X,Y) / sqrt(dCov^2(X,X) dCov^2(Y,Y)). Throws UndefinedSimilarity when a
/// marginal term vanishes.
double distance_correlation(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);
double distance_correlation(const PatientMatrix& x, const PatientMatrix& y);

enum class Measure { rv, dcor, cnn };

std::string_view to_string(Measure measure);
Measure parse_measure(std::string_view text);

struct SimilarityMatrix {
  std::vector<std::string> patient_ids;
  Eigen::MatrixXd scores;
  Measure measure = Measure::rv;
  std::size_t undefined_pairs = 0;  // pairs scored 0 because the measure was undefined
};

/// Scores all P(P-1)/2 pairs with rv or dcor; diagonal is 1.
SimilarityMatrix build_similarity_matrix(std::span<const PatientMatrix> patients, Measure measure);

/// Generic assembly for any symmetric pair scorer. `diagonal` supplies self scores.
SimilarityMatrix build_similarity_matrix(
    std::span<const PatientMatrix> patients, Measure measure,
    const std::function<double(std::size_t, std::size_t)>& pair_score,
    const std::function<double(std::size_t)>& diagonal);

/// CSV: header "patient_id,<id>,..." then one row per patient.
void write_similarity_csv(std::ostream& out, const SimilarityMatrix& sim);
void write_similarity_csv(const std::filesystem::path& path, const SimilarityMatrix& sim);
SimilarityMatrix read_similarity_csv(std::istream& in, Measure measure);
SimilarityMatrix read_similarity_csv(const std::filesystem::path& path, Measure measure);

}  // namespace patsim
