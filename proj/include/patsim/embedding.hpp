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
#include <functional>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "patsim/ehr.hpp"

namespace patsim {

enum class EmbeddingObjective { skip_gram, cbow };

struct EmbeddingConfig {
  std::size_t dim = 50;
  std::size_t base_window = 20;  // window length for a code of zero frequency
  double freq_scale = 0.5;       // extra window per within-patient occurrence
  bool adaptive = true;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double learning_rate = 0.025;
  std::size_t min_count = 5;
  std::uint64_t seed = 1;
  EmbeddingObjective objective = EmbeddingObjective::skip_gram;

  void validate() const;
};

/// One row per vocabulary code. `context_vectors` only matter during training and
/// are zero after loading from disk.
struct EmbeddingTable {
  Vocabulary vocabulary;
  Eigen::MatrixXd vectors;
  Eigen::MatrixXd context_vectors;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(vectors.cols()); }
  /// Throws PreconditionError for an unknown code.
  Eigen::VectorXd vector(std::string_view code) const;
};

/// Frequency-adaptive window before rounding: f * freq_scale + base_window, where f is
/// the number of occurrences of `code` in `record`.
double adaptive_window_extent(std::string_view code, const PatientRecord& record,
                              const EmbeddingConfig& config);

/// Rounded window length in event positions, at least 1. Throws PreconditionError
/// when `code` does not occur in `record`.
std::size_t adaptive_window_length(std::string_view code, const PatientRecord& record,
                                   const EmbeddingConfig& config);

/// Center/context pair as vocabulary indices.
struct ContextPair {
  std::size_t center;
  std::size_t context;

  bool operator==(const ContextPair&) const = default;
};

/// Visits every (center, context) pair of one record. Out-of-vocabulary events are
/// skipped before positions are assigned. The callback receives the center position
/// and the pair.
void for_each_context_pair(const PatientRecord& record, const Vocabulary& vocabulary,
                           const EmbeddingConfig& config,
                           const std::function<void(std::size_t, ContextPair)>& visit);

std::vector<ContextPair> build_training_pairs(std::span<const PatientRecord> records,
                                              const Vocabulary& vocabulary,
                                              const EmbeddingConfig& config);

/// One negative-sampling term for skip-gram: the center's input vector scores the
/// context's output vector against `negatives`.
struct SkipGramSample {
  std::size_t center;
  std::size_t context;
  std::vector<std::size_t> negatives;
};

/// One CBOW term: the mean of the contexts' input vectors scores the target.
struct CbowSample {
  std::vector<std::size_t> contexts;
  std::size_t target;
  std::vector<std::size_t> negatives;
};

/// Negative-sampling objective summed over `samples`:
///   -log s(u_o . v_c) - sum_k log s(-u_k . v_c)
double skip_gram_loss(const EmbeddingTable& table, std::span<const SkipGramSample> samples);
double cbow_loss(const EmbeddingTable& table, std::span<const CbowSample> samples);

/// Accumulates the analytic gradient of the matching loss into `grad_vectors` and
/// `grad_context` (same shapes as the table).
void skip_gram_gradient(const EmbeddingTable& table, std::span<const SkipGramSample> samples,
                        Eigen::MatrixXd& grad_vectors, Eigen::MatrixXd& grad_context);
void cbow_gradient(const EmbeddingTable& table, std::span<const CbowSample> samples,
                   Eigen::MatrixXd& grad_vectors, Eigen::MatrixXd& grad_context);

/// Random input vectors in [-0.5/d, 0.5/d], zero context vectors.
EmbeddingTable initialize_embeddings(Vocabulary vocabulary, std::size_t dim, std::uint64_t seed);

/// Codes of `vocabulary` that occur at least `min_count` times in `records`.
Vocabulary restrict_vocabulary(std::span<const PatientRecord> records, const Vocabulary& vocabulary,
                               std::size_t min_count);

/// Stochastic gradient descent on the negative-sampling objective, single threaded
/// and deterministic in `config.seed`. Throws PreconditionError for an empty corpus
/// and TrainingError when parameters turn non-finite.
EmbeddingTable train_embeddings(std::span<const PatientRecord> records, const Vocabulary& vocabulary,
                                const EmbeddingConfig& config);

/// Text format: "V d" then one "code v1 ... vd" line per code, 17 significant digits.
void save_embeddings(std::ostream& out, const EmbeddingTable& table);
void save_embeddings(const std::filesystem::path& path, const EmbeddingTable& table);
EmbeddingTable load_embeddings(std::istream& in);
EmbeddingTable load_embeddings(const std::filesystem::path& path);

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace patsim
