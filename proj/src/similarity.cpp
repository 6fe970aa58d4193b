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

#include "patsim/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>

#include "patsim/errors.hpp"

namespace patsim {

Configuration configuration(const Eigen::MatrixXd& x) {
  Configuration c;
  c.gram.noalias() = x * x.transpose();
  return c;
}

CenteredDistanceMatrix center_distance_matrix(const Eigen::MatrixXd& points) {
  const Eigen::Index n = points.rows();
  if (n < 2) throw PreconditionError("distance centering needs at least two samples");
  Eigen::MatrixXd dist(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    dist(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      dist(i, j) = dist(j, i) = (points.row(i) - points.row(j)).norm();
    }
  }
  const Eigen::VectorXd row_mean = dist.rowwise().mean();
  const Eigen::RowVectorXd col_mean = dist.colwise().mean();
  const double grand = dist.mean();
  CenteredDistanceMatrix out;
  out.values = dist;
  out.values.colwise() -= row_mean;
  out.values.rowwise() -= col_mean;
  out.values.array() += grand;
  return out;
}

namespace {

void require_same_dim(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows()) {
    throw PreconditionError("embedding dimensions differ: " + std::to_string(x.rows()) + " vs " +
                            std::to_string(y.rows()));
  }
}

double hadamard_sum(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a.array() * b.array()).sum();
}

double rv_from_grams(const Eigen::MatrixXd& sx, double sx_sq, const Eigen::MatrixXd& sy, double sy_sq) {
  // S is symmetric, so tr(Sx Sy) is the Frobenius inner product
  return hadamard_sum(sx, sy) / std::sqrt(sx_sq * sy_sq);
}

double dcov_from_centered(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double n = static_cast<double>(a.rows());
  return std::max(0.0, hadamard_sum(a, b) / (n * n));
}

}  // namespace

double rv_coefficient(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  require_same_dim(x, y);
  const auto sx = configuration(x).gram;
  const auto sy = configuration(y).gram;
  const double sx_sq = sx.squaredNorm();
  const double sy_sq = sy.squaredNorm();
  if (sx_sq == 0.0 || sy_sq == 0.0) throw UndefinedSimilarity("RV coefficient of a zero matrix");
  return rv_from_grams(sx, sx_sq, sy, sy_sq);
}

double rv_coefficient(const PatientMatrix& x, const PatientMatrix& y) {
  return rv_coefficient(x.data, y.data);
}

double distance_covariance(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  require_same_dim(x, y);
  return dcov_from_centered(center_distance_matrix(x).values, center_distance_matrix(y).values);
}

double distance_covariance(const PatientMatrix& x, const PatientMatrix& y) {
  return distance_covariance(x.data, y.data);
}

double distance_correlation(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  require_same_dim(x, y);
  const auto a = center_distance_matrix(x).values;
  const auto b = center_distance_matrix(y).values;
  const double xx = dcov_from_centered(a, a);
  const double yy = dcov_from_centered(b, b);
  if (xx <= 0.0 || yy <= 0.0) throw UndefinedSimilarity("distance correlation with a constant marginal");
  return dcov_from_centered(a, b) / std::sqrt(xx * yy);
}

double distance_correlation(const PatientMatrix& x, const PatientMatrix& y) {
  return distance_correlation(x.data, y.data);
}

std::string_view to_string(Measure measure) {
  switch (measure) {
    case Measure::rv:
      return "rv";
    case Measure::dcor:
      return "dcor";
    case Measure::cnn:
      return "cnn";
  }
  return "rv";
}

Measure parse_measure(std::string_view text) {
  if (text == "rv") return Measure::rv;
  if (text == "dcor") return Measure::dcor;
  if (text == "cnn") return Measure::cnn;
  throw ConfigError("unknown similarity measure '" + std::string(text) + "'");
}

SimilarityMatrix build_similarity_matrix(
    std::span<const PatientMatrix> patients, Measure measure,
    const std::function<double(std::size_t, std::size_t)>& pair_score,
    const std::function<double(std::size_t)>& diagonal) {
  const std::size_t P = patients.size();
  SimilarityMatrix sim;
  sim.measure = measure;
  sim.scores.resize(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(P));
  for (const auto& p : patients) sim.patient_ids.push_back(p.patient_id);
  for (std::size_t i = 0; i < P; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    sim.scores(ii, ii) = diagonal(i);
    for (std::size_t j = i + 1; j < P; ++j) {
      double s = 0.0;
      try {
        s = pair_score(i, j);
      } catch (const UndefinedSimilarity&) {
        ++sim.undefined_pairs;
      }
      const auto jj = static_cast<Eigen::Index>(j);
      sim.scores(ii, jj) = sim.scores(jj, ii) = s;
    }
  }
  return sim;
}

SimilarityMatrix build_similarity_matrix(std::span<const PatientMatrix> patients, Measure measure) {
  if (measure == Measure::cnn) {
    throw PreconditionError("cnn similarity needs a trained matcher model");
  }
  for (const auto& p : patients) require_same_dim(patients.front().data, p.data);

  // Per-patient terms are computed once; pairs only need a Frobenius product.
  std::vector<Eigen::MatrixXd> terms(patients.size());
  std::vector<double> self(patients.size(), 0.0);
  for (std::size_t i = 0; i < patients.size(); ++i) {
    if (measure == Measure::rv) {
      terms[i] = configuration(patients[i].data).gram;
      self[i] = terms[i].squaredNorm();
    } else if (patients[i].data.rows() >= 2) {
      terms[i] = center_distance_matrix(patients[i].data).values;
      self[i] = dcov_from_centered(terms[i], terms[i]);
    }
  }
  auto score = [&](std::size_t i, std::size_t j) {
    if (self[i] <= 0.0 || self[j] <= 0.0) throw UndefinedSimilarity("degenerate patient matrix");
    if (measure == Measure::rv) return rv_from_grams(terms[i], self[i], terms[j], self[j]);
    return dcov_from_centered(terms[i], terms[j]) / std::sqrt(self[i] * self[j]);
  };
  return build_similarity_matrix(patients, measure, score, [](std::size_t) { return 1.0; });
}

void write_similarity_csv(std::ostream& out, const SimilarityMatrix& sim) {
  out << "patient_id";
  for (const auto& id : sim.patient_ids) out << ',' << id;
  out << '\n';
  char buf[40];
  for (Eigen::Index i = 0; i < sim.scores.rows(); ++i) {
    out << sim.patient_ids[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < sim.scores.cols(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.17g", sim.scores(i, j));
      out << buf;
    }
    out << '\n';
  }
}

void write_similarity_csv(const std::filesystem::path& path, const SimilarityMatrix& sim) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write similarity file '" + path.string() + "'");
  write_similarity_csv(out, sim);
}

SimilarityMatrix read_similarity_csv(std::istream& in, Measure measure) {
  auto split = [](const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) {
      if (!f.empty() && f.back() == '\r') f.pop_back();
      fields.push_back(f);
    }
    return fields;
  };
  SimilarityMatrix sim;
  sim.measure = measure;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("similarity file: missing header");
  auto header = split(line);
  if (header.empty() || header.front() != "patient_id") {
    throw FormatError("similarity file: header must start with patient_id");
  }
  sim.patient_ids.assign(header.begin() + 1, header.end());
  const auto P = static_cast<Eigen::Index>(sim.patient_ids.size());
  sim.scores.resize(P, P);
  for (Eigen::Index i = 0; i < P; ++i) {
    if (!std::getline(in, line)) throw FormatError("similarity file: truncated");
    auto fields = split(line);
    if (static_cast<Eigen::Index>(fields.size()) != P + 1 ||
        fields.front() != sim.patient_ids[static_cast<std::size_t>(i)]) {
      throw FormatError("similarity file: row " + std::to_string(i + 1) + " is malformed");
    }
    for (Eigen::Index j = 0; j < P; ++j) {
      try {
        sim.scores(i, j) = std::stod(fields[static_cast<std::size_t>(j + 1)]);
      } catch (const std::exception&) {
        throw FormatError("similarity file: bad number in row " + std::to_string(i + 1));
      }
    }
  }
  return sim;
}

SimilarityMatrix read_similarity_csv(const std::filesystem::path& path, Measure measure) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open similarity file '" + path.string() + "'");
  return read_similarity_csv(in, measure);
}

}  // namespace patsim
