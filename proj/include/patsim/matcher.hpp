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
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "patsim/representation.hpp"
#include "patsim/similarity.hpp"

namespace patsim {

/// One convolution filter spanning `width()` consecutive visits.
struct ConvFilter {
  Eigen::MatrixXd weights;  // d x h
  double bias = 0.0;

  std::size_t width() const noexcept { return static_cast<std::size_t>(weights.cols()); }
};

/// Right-pads `x` with zero columns up to `width` visits.
Eigen::MatrixXd pad_visits(const Eigen::MatrixXd& x, std::size_t width);

/// c_i = max(0, <w, x[:, i:i+h-1]> + b) over every window of the padded matrix.
Eigen::VectorXd conv_forward(const Eigen::MatrixXd& x, const ConvFilter& filter);

/// Throws PreconditionError on an empty map.
double max_pool(const Eigen::VectorXd& feature_map);

struct MatcherShape {
  std::size_t dim = 50;
  std::size_t filter_width = 5;
  std::size_t feature_maps = 100;
  std::size_t hidden = 64;

  std::size_t joined() const noexcept { return 2 * feature_maps + 1; }
  bool operator==(const MatcherShape&) const = default;
};

/// Every trainable tensor; also used for gradients and AdaGrad accumulators.
struct MatcherParams {
  Eigen::MatrixXd filters;      // m x (d*h); row k holds filter k column-major
  Eigen::VectorXd filter_bias;  // m
  Eigen::MatrixXd pairing;      // m x m; the matching matrix is (A + A^T) / 2
  Eigen::MatrixXd hidden_w;     // hidden x (2m + 1)
  Eigen::VectorXd hidden_b;
  Eigen::MatrixXd output_w;     // 2 x hidden; row 1 scores "similar"
  Eigen::VectorXd output_b;

  static MatcherParams zeros(const MatcherShape& shape);

  template <typename F>
  void for_each(F&& f) {
    f("filters", filters);
    f("filter_bias", filter_bias);
    f("pairing", pairing);
    f("hidden_w", hidden_w);
    f("hidden_b", hidden_b);
    f("output_w", output_w);
    f("output_b", output_b);
  }
  template <typename F>
  void for_each(F&& f) const {
    f("filters", filters);
    f("filter_bias", filter_bias);
    f("pairing", pairing);
    f("hidden_w", hidden_w);
    f("hidden_b", hidden_b);
    f("output_w", output_w);
    f("output_b", output_b);
  }
};

enum class LossKind { cross_entropy, square };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view text);

struct MatcherModel {
  MatcherShape shape;
  double dropout = 0.5;
  MatcherParams params;
  MatcherParams accumulators;

  /// Glorot-uniform filters and dense layers, A = 0.1 I, zero biases.
  static MatcherModel initialize(const MatcherShape& shape, double dropout, std::uint64_t seed);

  Eigen::MatrixXd matching() const;
  ConvFilter filter(std::size_t k) const;
};

using DeepPatientVector = Eigen::VectorXd;

/// Pooled feature maps, one value per filter. No dropout.
DeepPatientVector embed_patient(const Eigen::MatrixXd& x, const MatcherModel& model);

/// a^T M b with the symmetrized matching matrix.
double bilinear_similarity(const DeepPatientVector& a, const DeepPatientVector& b,
                           const MatcherModel& model);

enum class Mode { train, infer };

/// Activations of one pass through the matcher, kept for backward().
struct PairForward {
  struct Branch {
    Eigen::MatrixXd input;              // padded patient matrix
    Eigen::VectorXd pooled;             // deep patient vector
    std::vector<Eigen::Index> argmax;   // pooled window per filter
    Eigen::VectorXd pooled_pre;         // pre-activation at that window
  };
  Branch a, b;
  double sim = 0.0;
  Eigen::VectorXd joined;
  Eigen::VectorXd hidden_pre;
  Eigen::VectorXd mask;  // inverted-dropout scale per hidden unit
  Eigen::VectorXd hidden_out;
  Eigen::Vector2d logits;
  Eigen::Vector2d probabilities;  // [dissimilar, similar]

  double p_similar() const { return probabilities(1); }
};

/// Train mode draws a dropout mask from `rng` (required when dropout > 0).
PairForward forward_pair(const PatientMatrix& a, const PatientMatrix& b, const MatcherModel& model,
                         Mode mode, std::mt19937_64* rng = nullptr);
/// Forward pass with a caller-supplied hidden mask.
PairForward forward_pair(const PatientMatrix& a, const PatientMatrix& b, const MatcherModel& model,
                         const Eigen::VectorXd& mask);

/// cross_entropy: -log p(label) with label in {0, 1}. square: (label - p_similar)^2.
double pair_loss(const PairForward& forward, double label, LossKind kind);

/// Exact gradient of pair_loss() with respect to every parameter.
MatcherParams backward(const PairForward& forward, double label, const MatcherModel& model,
                       LossKind kind);

inline constexpr double kAdagradEpsilon = 1e-8;

/// acc += g^2; param -= lr * g / (sqrt(acc) + eps), elementwise.
void adagrad_step(MatcherModel& model, const MatcherParams& gradients, double learning_rate);

struct LabeledPair {
  std::size_t first;
  std::size_t second;
  double label;  // 1 same cohort, 0 otherwise

  bool operator==(const LabeledPair&) const = default;
};

/// Distinct unordered pairs, round(ratio * count) of them same-cohort, with random
/// orientation. Throws PreconditionError when a class has too few pairs.
std::vector<LabeledPair> sample_pairs(std::span<const std::string> cohorts, double positive_ratio,
                                      std::size_t count, std::uint64_t seed);

struct MatcherConfig {
  MatcherShape shape;
  double dropout = 0.5;
  double learning_rate = 0.01;
  std::size_t minibatch = 50;
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  std::size_t pairs_per_epoch = 2000;
  std::size_t dev_pairs = 500;
  double positive_ratio = 0.5;
  LossKind loss = LossKind::cross_entropy;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrainingHistory {
  std::vector<double> train_loss;
  std::vector<double> dev_loss;
  std::size_t best_epoch = 0;  // 1-based; 0 when no epoch ran
};

struct TrainedMatcher {
  MatcherModel model;
  TrainingHistory history;
};

/// Minibatch AdaGrad with early stopping on the dev loss; returns the best-dev model.
/// Throws TrainingError when the loss or parameters turn non-finite.
TrainedMatcher train_matcher(std::span<const PatientMatrix> train, std::span<const std::string> train_cohorts,
                             std::span<const PatientMatrix> dev, std::span<const std::string> dev_cohorts,
                             const MatcherConfig& config);

/// p(similar) averaged over both argument orders; diagonal is the self score.
SimilarityMatrix cnn_similarity_matrix(std::span<const PatientMatrix> patients, const MatcherModel& model);

void save_model(std::ostream& out, const MatcherModel& model);
void save_model(const std::filesystem::path& path, const MatcherModel& model);
MatcherModel load_model(std::istream& in);
MatcherModel load_model(const std::filesystem::path& path);

}  // namespace patsim
