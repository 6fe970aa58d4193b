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

#include "patsim/representation.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "patsim/errors.hpp"

namespace patsim {

namespace {

Eigen::Index lookup(const Vocabulary& vocabulary, const std::string& code, const std::string& patient) {
  const auto idx = vocabulary.index_of(code);
  if (!idx) {
    throw PreconditionError("patient '" + patient + "': code '" + code + "' is out of vocabulary");
  }
  return static_cast<Eigen::Index>(*idx);
}

}  // namespace

PatientMatrix to_patient_matrix(const PatientRecord& record, const EmbeddingTable& table,
                                const RepresentOptions& options) {
  const auto n = static_cast<Eigen::Index>(record.visits.size());
  PatientMatrix out{record.patient_id, Eigen::MatrixXd::Zero(table.vectors.cols(), n), {}};
  out.visit_dates.reserve(record.visits.size());
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& visit = record.visits[static_cast<std::size_t>(j)];
    for (const auto& e : visit.events) {
      out.data.col(j) += table.vectors.row(lookup(table.vocabulary, e.code, record.patient_id)).transpose();
    }
    if (options.normalize_columns) {
      const double norm = out.data.col(j).norm();
      if (norm > 0) out.data.col(j) /= norm;
    }
    out.visit_dates.push_back(visit.date);
  }
  return out;
}

OneHotMatrix to_one_hot(const PatientRecord& record, const Vocabulary& vocabulary) {
  const auto n = static_cast<Eigen::Index>(record.visits.size());
  OneHotMatrix out{record.patient_id, decltype(OneHotMatrix::data)::Zero(
                                          static_cast<Eigen::Index>(vocabulary.size()), n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    for (const auto& e : record.visits[static_cast<std::size_t>(j)].events) {
      out.data(lookup(vocabulary, e.code, record.patient_id), j) = 1;
    }
  }
  return out;
}

SummedVector to_summed_vector(const PatientRecord& record, const EmbeddingTable& table) {
  SummedVector out{record.patient_id, Eigen::VectorXd::Zero(table.vectors.cols())};
  for (const auto& v : record.visits) {
    for (const auto& e : v.events) {
      out.data += table.vectors.row(lookup(table.vocabulary, e.code, record.patient_id)).transpose();
    }
  }
  return out;
}

Eigen::VectorXd visit_count_vector(const PatientRecord& record, const Vocabulary& vocabulary) {
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocabulary.size()));
  // events are unique per visit, so each occurrence is one visit
  for (const auto& v : record.visits) {
    for (const auto& e : v.events) counts(lookup(vocabulary, e.code, record.patient_id)) += 1.0;
  }
  return counts;
}

void write_patient_matrices(std::ostream& out, std::span<const PatientMatrix> matrices) {
  char buf[40];
  for (const auto& m : matrices) {
    out << m.patient_id << ' ' << m.data.rows() << ' ' << m.data.cols() << '\n';
    for (Eigen::Index i = 0; i < m.data.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.data.cols(); ++j) {
        std::snprintf(buf, sizeof buf, j == 0 ? "%.17g" : " %.17g", m.data(i, j));
        out << buf;
      }
      out << '\n';
    }
  }
}

void write_patient_matrices(const std::filesystem::path& path, std::span<const PatientMatrix> matrices) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write matrix file '" + path.string() + "'");
  write_patient_matrices(out, matrices);
}

std::vector<PatientMatrix> read_patient_matrices(std::istream& in) {
  std::vector<PatientMatrix> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream header(line);
    PatientMatrix m;
    long long d = -1, n = -1;
    std::string extra;
    if (!(header >> m.patient_id >> d >> n) || (header >> extra) || d < 0 || n < 0) {
      throw FormatError("matrix file line " + std::to_string(line_no) + ": expected \"patient_id d N_p\"");
    }
    m.data.resize(d, n);
    for (long long i = 0; i < d; ++i) {
      if (!std::getline(in, line)) {
        throw FormatError("matrix file: truncated matrix for patient '" + m.patient_id + "'");
      }
      ++line_no;
      std::istringstream row(line);
      long long got = 0;
      double value = 0.0;
      while (row >> value) {
        if (got < n) m.data(i, got) = value;
        ++got;
      }
      if (!row.eof() || got != n) {
        throw FormatError("matrix file line " + std::to_string(line_no) + ": expected " +
                          std::to_string(n) + " values");
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<PatientMatrix> read_patient_matrices(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open matrix file '" + path.string() + "'");
  return read_patient_matrices(in);
}

}  // namespace patsim
