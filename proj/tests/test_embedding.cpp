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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "gradcheck.hpp"
#include "patsim/embedding.hpp"
#include "patsim/errors.hpp"

using namespace patsim;

namespace {

// One event per visit, in the given order.
PatientRecord sequence_record(const std::string& id, const std::vector<std::string>& codes) {
  std::vector<MedicalEvent> events;
  const auto start = Date::from_ymd(2015, 1, 1).days();
  for (std::size_t i = 0; i < codes.size(); ++i) {
    events.push_back({codes[i], Date(start + std::chrono::days{static_cast<int>(i)}), EventKind::diagnosis});
  }
  return assemble_record(id, std::move(events));
}

Vocabulary vocab_of(const std::vector<std::string>& codes) {
  return Vocabulary(codes, std::vector<CodeCounts>(codes.size(), CodeCounts{1, 1}));
}

std::vector<std::pair<std::string, std::string>> named_pairs(const PatientRecord& r, const Vocabulary& v,
                                                             const EmbeddingConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& p : build_training_pairs(std::span(&r, 1), v, c)) out.emplace_back(v.code(p.center), v.code(p.context));
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Reference objectives written directly from the negative-sampling formula.
double oracle_skip_gram(const EmbeddingTable& t, const std::vector<SkipGramSample>& samples) {
  double loss = 0.0;
  for (const auto& s : samples) {
    const Eigen::VectorXd v = t.vectors.row(s.center).transpose();
    loss -= std::log(sigmoid(t.context_vectors.row(s.context).dot(v)));
    for (auto k : s.negatives) loss -= std::log(1.0 - sigmoid(t.context_vectors.row(k).dot(v)));
  }
  return loss;
}

double oracle_cbow(const EmbeddingTable& t, const std::vector<CbowSample>& samples) {
  double loss = 0.0;
  for (const auto& s : samples) {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(t.vectors.cols());
    for (auto j : s.contexts) h += t.vectors.row(j).transpose();
    h /= static_cast<double>(s.contexts.size());
    loss -= std::log(sigmoid(t.context_vectors.row(s.target).dot(h)));
    for (auto k : s.negatives) loss -= std::log(1.0 - sigmoid(t.context_vectors.row(k).dot(h)));
  }
  return loss;
}

EmbeddingTable random_table(std::mt19937_64& rng, std::size_t V, std::size_t d) {
  std::vector<std::string> codes;
  for (std::size_t i = 0; i < V; ++i) codes.push_back("c" + std::to_string(i));
  auto t = initialize_embeddings(vocab_of(codes), d, rng());
  std::normal_distribution<double> g(0.0, 0.7);
  for (Eigen::Index i = 0; i < t.vectors.size(); ++i) {
    t.vectors.data()[i] = g(rng);
    t.context_vectors.data()[i] = g(rng);
  }
  return t;
}

}  // namespace

TEST(AdaptiveWindow, DirectSubstitution) {
  const auto r = sequence_record("p", {"A", "A", "A", "A", "A", "A", "A", "A", "A", "A", "B"});
  EmbeddingConfig c;
  c.freq_scale = 1.0;
  c.base_window = 5;
  EXPECT_EQ(adaptive_window_length("A", r, c), 15u);
  EXPECT_EQ(adaptive_window_length("B", r, c), 6u);
  c.freq_scale = 0.0;
  EXPECT_EQ(adaptive_window_length("A", r, c), 5u);
  EXPECT_THROW(adaptive_window_length("Z", r, c), PreconditionError);
}

TEST(AdaptiveWindow, NondecreasingInFrequency) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    EmbeddingConfig c;
    c.freq_scale = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
    c.base_window = std::uniform_int_distribution<std::size_t>(1, 30)(rng);
    std::vector<std::string> seq;
    const int fa = std::uniform_int_distribution<int>(1, 12)(rng);
    const int fb = std::uniform_int_distribution<int>(1, 12)(rng);
    for (int i = 0; i < fa; ++i) seq.push_back("A");
    for (int i = 0; i < fb; ++i) seq.push_back("B");
    const auto r = sequence_record("p", seq);
    if (fa >= fb) EXPECT_GE(adaptive_window_length("A", r, c), adaptive_window_length("B", r, c));
    if (fa > fb && c.freq_scale > 0) EXPECT_GT(adaptive_window_extent("A", r, c), adaptive_window_extent("B", r, c));
  }
}

TEST(AdaptiveWindow, MinimumOfOne) {
  const auto r = sequence_record("p", {"A"});
  EmbeddingConfig c;
  c.base_window = 1;
  c.freq_scale = -5.0;
  EXPECT_EQ(adaptive_window_length("A", r, c), 1u);
}

TEST(TrainingPairs, HandEnumeratedWindowOfOne) {
  const auto r = sequence_record("p", {"A", "B", "C"});
  EmbeddingConfig c;
  c.adaptive = false;
  c.base_window = 1;
  const std::vector<std::pair<std::string, std::string>> expected{{"A", "B"}, {"B", "A"}, {"B", "C"}, {"C", "B"}};
  EXPECT_EQ(named_pairs(r, vocab_of({"A", "B", "C"}), c), expected);
}

TEST(TrainingPairs, SingleEventHasNoPairs) {
  const auto r = sequence_record("p", {"A"});
  EXPECT_TRUE(named_pairs(r, vocab_of({"A"}), EmbeddingConfig{}).empty());
}

TEST(TrainingPairs, ZeroScaleMatchesFixedWindowExactly) {
  std::mt19937_64 rng(4);
  std::vector<std::string> codes{"A", "B", "C", "D", "E", "F"};
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::string> seq;
    for (int i = 0; i < 60; ++i) seq.push_back(codes[rng() % codes.size()]);
    const auto r = sequence_record("p", seq);
    EmbeddingConfig fixed, adaptive;
    fixed.adaptive = false;
    fixed.base_window = adaptive.base_window = 1 + rng() % 8;
    adaptive.freq_scale = 0.0;
    EXPECT_EQ(named_pairs(r, vocab_of(codes), adaptive), named_pairs(r, vocab_of(codes), fixed));
  }
}

TEST(TrainingPairs, FixedModeIsSymmetric) {
  std::mt19937_64 rng(6);
  std::vector<std::string> codes{"A", "B", "C", "D"};
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::string> seq;
    for (int i = 0; i < 40; ++i) seq.push_back(codes[rng() % codes.size()]);
    EmbeddingConfig c;
    c.adaptive = false;
    c.base_window = 1 + rng() % 6;
    std::map<std::pair<std::string, std::string>, int> count;
    for (const auto& p : named_pairs(sequence_record("p", seq), vocab_of(codes), c)) ++count[p];
    for (const auto& [p, n] : count) EXPECT_EQ(n, (count[{p.second, p.first}])) << p.first << p.second;
  }
}

TEST(TrainingPairs, AdaptiveWidensFrequentCodes) {
  const auto r = sequence_record("p", {"K", "x1", "x2", "x3", "K", "x4", "K"});
  EmbeddingConfig c;
  c.base_window = 1;
  c.freq_scale = 1.0;  // K: f=3 -> L=4; x: f=1 -> L=2
  std::size_t k_pairs = 0, x1_pairs = 0;
  for (const auto& [center, ctx] : named_pairs(r, vocab_of({"K", "x1", "x2", "x3", "x4"}), c)) {
    k_pairs += center == "K";
    x1_pairs += center == "x1";
  }
  EXPECT_EQ(x1_pairs, 3u);      // positions 0, 2, 3
  EXPECT_EQ(k_pairs, 4u + 6u + 4u);
}

TEST(TrainingPairs, OutOfVocabularyEventsAreSkipped) {
  const auto r = sequence_record("p", {"A", "Z", "B"});
  EmbeddingConfig c;
  c.adaptive = false;
  c.base_window = 1;
  const std::vector<std::pair<std::string, std::string>> expected{{"A", "B"}, {"B", "A"}};
  EXPECT_EQ(named_pairs(r, vocab_of({"A", "B"}), c), expected);
}

TEST(NegativeSampling, SkipGramGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    auto t = random_table(rng, 5, 4);
    std::vector<SkipGramSample> samples;
    for (int s = 0; s < 6; ++s) samples.push_back({rng() % 5, rng() % 5, {rng() % 5, rng() % 5}});
    Eigen::MatrixXd gv = Eigen::MatrixXd::Zero(5, 4), gc = gv;
    skip_gram_gradient(t, samples, gv, gc);
    EXPECT_NEAR(skip_gram_loss(t, samples), oracle_skip_gram(t, samples), 1e-10);
    auto loss = [&] { return oracle_skip_gram(t, samples); };
    EXPECT_LT(patsim::testing::max_relative_error(t.vectors, gv, loss), 1e-4);
    EXPECT_LT(patsim::testing::max_relative_error(t.context_vectors, gc, loss), 1e-4);
  }
}

TEST(NegativeSampling, CbowGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    auto t = random_table(rng, 5, 3);
    std::vector<CbowSample> samples;
    for (int s = 0; s < 5; ++s) samples.push_back({{rng() % 5, rng() % 5, rng() % 5}, rng() % 5, {rng() % 5}});
    Eigen::MatrixXd gv = Eigen::MatrixXd::Zero(5, 3), gc = gv;
    cbow_gradient(t, samples, gv, gc);
    EXPECT_NEAR(cbow_loss(t, samples), oracle_cbow(t, samples), 1e-10);
    auto loss = [&] { return oracle_cbow(t, samples); };
    EXPECT_LT(patsim::testing::max_relative_error(t.vectors, gv, loss), 1e-4);
    EXPECT_LT(patsim::testing::max_relative_error(t.context_vectors, gc, loss), 1e-4);
  }
}

TEST(Initialization, UniformWithinHalfOverDim) {
  const auto t = initialize_embeddings(vocab_of({"A", "B", "C"}), 8, 3);
  EXPECT_LE(t.vectors.cwiseAbs().maxCoeff(), 0.5 / 8);
  EXPECT_GT(t.vectors.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(t.context_vectors.cwiseAbs().maxCoeff(), 0.0);
}

namespace {

std::vector<PatientRecord> toy_corpus() {
  // A and B share the context X; C only ever appears next to Y.
  std::vector<PatientRecord> recs;
  const char* pairs[][2] = {{"A", "X"}, {"B", "X"}, {"C", "Y"}};
  for (int p = 0; p < 30; ++p) {
    std::vector<std::string> seq;
    for (int i = 0; i < 10; ++i) {
      seq.push_back(pairs[p % 3][0]);
      seq.push_back(pairs[p % 3][1]);
    }
    recs.push_back(sequence_record("p" + std::to_string(p), seq));
  }
  return recs;
}

}  // namespace

TEST(TrainEmbeddings, SharedContextsEndUpCloser) {
  const auto recs = toy_corpus();
  EmbeddingConfig c;
  c.dim = 10;
  c.base_window = 1;
  c.adaptive = false;
  c.negatives = 2;
  c.epochs = 20;
  c.min_count = 1;
  const auto t = train_embeddings(recs, Vocabulary::from_records(recs), c);
  const double ab = cosine_similarity(t.vector("A"), t.vector("B"));
  const double ac = cosine_similarity(t.vector("A"), t.vector("C"));
  EXPECT_GT(ab, ac);
}

TEST(TrainEmbeddings, ZeroEpochsKeepsInitialization) {
  const auto recs = toy_corpus();
  EmbeddingConfig c;
  c.dim = 6;
  c.epochs = 0;
  c.min_count = 1;
  const auto t = train_embeddings(recs, Vocabulary::from_records(recs), c);
  const auto init = initialize_embeddings(t.vocabulary, 6, c.seed);
  EXPECT_EQ(t.vectors, init.vectors);
}

TEST(TrainEmbeddings, DeterministicGivenSeed) {
  const auto recs = toy_corpus();
  EmbeddingConfig c;
  c.dim = 6;
  c.epochs = 2;
  c.min_count = 1;
  for (auto objective : {EmbeddingObjective::skip_gram, EmbeddingObjective::cbow}) {
    c.objective = objective;
    const auto a = train_embeddings(recs, Vocabulary::from_records(recs), c);
    const auto b = train_embeddings(recs, Vocabulary::from_records(recs), c);
    EXPECT_EQ(a.vectors, b.vectors);
  }
}

TEST(TrainEmbeddings, MinCountRestrictsVocabulary) {
  auto recs = toy_corpus();
  recs.push_back(sequence_record("rare", {"A", "R"}));
  EmbeddingConfig c;
  c.dim = 4;
  c.epochs = 1;
  c.min_count = 2;
  const auto t = train_embeddings(recs, Vocabulary::from_records(recs), c);
  EXPECT_FALSE(t.vocabulary.contains("R"));
  EXPECT_TRUE(t.vocabulary.contains("A"));
}

TEST(TrainEmbeddings, EmptyCorpusAndBadConfig) {
  EXPECT_THROW(train_embeddings({}, vocab_of({"A"}), EmbeddingConfig{}), PreconditionError);
  EmbeddingConfig c;
  c.learning_rate = 0.0;
  const auto recs = toy_corpus();
  EXPECT_THROW(train_embeddings(recs, Vocabulary::from_records(recs), c), ConfigError);
  c = EmbeddingConfig{};
  c.negatives = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainEmbeddings, DivergenceIsReported) {
  const auto recs = toy_corpus();
  EmbeddingConfig c;
  c.dim = 4;
  c.min_count = 1;
  c.learning_rate = 1e300;
  c.epochs = 3;
  EXPECT_THROW(train_embeddings(recs, Vocabulary::from_records(recs), c), TrainingError);
}

TEST(EmbeddingFile, RoundTrip) {
  std::mt19937_64 rng(9);
  const auto t = random_table(rng, 7, 5);
  std::stringstream s;
  save_embeddings(s, t);
  std::string header;
  std::getline(s, header);
  EXPECT_EQ(header, "7 5");
  s.seekg(0);
  const auto back = load_embeddings(s);
  EXPECT_EQ(back.vocabulary.codes(), t.vocabulary.codes());
  EXPECT_LT((back.vectors - t.vectors).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(EmbeddingFile, RowCountMismatchIsAFormatError) {
  std::istringstream extra("2 2\nA 1 2\nB 3 4\nC 5 6\n");
  EXPECT_THROW(load_embeddings(extra), FormatError);
  std::istringstream missing("3 2\nA 1 2\nB 3 4\n");
  EXPECT_THROW(load_embeddings(missing), FormatError);
  std::istringstream ragged("2 2\nA 1 2\nB 3\n");
  EXPECT_THROW(load_embeddings(ragged), FormatError);
}
