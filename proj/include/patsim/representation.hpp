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

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "patsim/ehr.hpp"
#include "patsim/embedding.hpp"

namespace patsim {

/// d x N_p temporal representation: column j sums the embeddings of visit j.
struct PatientMatrix {
  std::string patient_id;
  Eigen::MatrixXd data;
  std::vector<Date> visit_dates;  // empty when read back from the text format

  Eigen::Index dim() const noexcept { return data.rows(); }
  Eigen::Index visits() const noexcept { return data.cols(); }
};

/// V x N_p binary visit/code incidence.
struct OneHotMatrix {
  std::string patient_id;
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> data;
};

struct SummedVector {
  std::string patient_id;
  Eigen::VectorXd data;
};

struct RepresentOptions {
  bool normalize_columns = false;  // scale each nonzero visit column to unit L2 norm
};

/// Throws PreconditionError naming the first code missing from `table`.
PatientMatrix to_patient_matrix(const PatientRecord& record, const EmbeddingTable& table,
                                const RepresentOptions& options = {});
OneHotMatrix to_one_hot(const PatientRecord& record, const Vocabulary& vocabulary);
SummedVector to_summed_vector(const PatientRecord& record, const EmbeddingTable& table);

/// Row sums of the one-hot matrix (number of visits carrying each code), computed
/// without materializing the V x N_p matrix.
Eigen::VectorXd visit_count_vector(const PatientRecord& record, const Vocabulary& vocabulary);

/// Text format, repeated per patient: "patient_id d N_p" then d rows of N_p values.
void write_patient_matrices(std::ostream& out, std::span<const PatientMatrix> matrices);
void write_patient_matrices(const std::filesystem::path& path, std::span<const PatientMatrix> matrices);
std::vector<PatientMatrix> read_patient_matrices(std::istream& in);
std::vector<PatientMatrix> read_patient_matrices(const std::filesystem::path& path);

}  // namespace patsim
