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

#include "patsim/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <unordered_map>

#include "patsim/errors.hpp"

namespace patsim {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// -log(sigmoid(x)), stable for large |x|
double neg_log_sigmoid(double x) { return x > 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x)); }

std::size_t window_from_extent(double extent) {
  const auto rounded = std::llround(extent);
  return rounded < 1 ? 1 : static_cast<std::size_t>(rounded);
}

}  // namespace

void EmbeddingConfig::validate() const {
  if (dim < 1) throw ConfigError("embedding: dim must be >= 1");
  if (base_window < 1) throw ConfigError("embedding: base_window must be >= 1");
  if (negatives < 1) throw ConfigError("embedding: negatives must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("embedding: learning_rate must be > 0");
  if (!std::isfinite(freq_scale)) throw ConfigError("embedding: freq_scale must be finite");
}

Eigen::VectorXd EmbeddingTable::vector(std::string_view code) const {
  const auto idx = vocabulary.index_of(code);
  if (!idx) throw PreconditionError("code '" + std::string(code) + "' is not in the embedding table");
  return vectors.row(static_cast<Eigen::Index>(*idx)).transpose();
}

double adaptive_window_extent(std::string_view code, const PatientRecord& record,
                              const EmbeddingConfig& config) {
  std::size_t frequency = 0;
  for (const auto& v : record.visits) {
    for (const auto& e : v.events) frequency += e.code == code ? 1 : 0;
  }
  if (frequency == 0) {
    throw PreconditionError("code '" + std::string(code) + "' does not occur in record '" +
                            record.patient_id + "'");
  }
  return static_cast<double>(frequency) * config.freq_scale + static_cast<double>(config.base_window);
}

std::size_t adaptive_window_length(std::string_view code, const PatientRecord& record,
                                   const EmbeddingConfig& config) {
  return window_from_extent(adaptive_window_extent(code, record, config));
}

void for_each_context_pair(const PatientRecord& record, const Vocabulary& vocabulary,
                           const EmbeddingConfig& config,
                           const std::function<void(std::size_t, ContextPair)>& visit) {
  std::vector<std::size_t> seq;
  seq.reserve(record.event_count());
  for (const auto& v : record.visits) {
    for (const auto& e : v.events) {
      if (auto idx = vocabulary.index_of(e.code)) seq.push_back(*idx);
    }
  }
  std::unordered_map<std::size_t, std::size_t> frequency;
  if (config.adaptive) {
    for (auto idx : seq) ++frequency[idx];
  }
  const std::size_t n = seq.size();
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t window =
        config.adaptive
            ? window_from_extent(static_cast<double>(frequency[seq[t]]) * config.freq_scale +
                                 static_cast<double>(config.base_window))
            : config.base_window;
    const std::size_t lo = t > window ? t - window : 0;
    const std::size_t hi = std::min(n - 1, t + window);
    for (std::size_t j = lo; j <= hi; ++j) {
      if (j != t) visit(t, ContextPair{seq[t], seq[j]});
    }
  }
}

std::vector<ContextPair> build_training_pairs(std::span<const PatientRecord> records,
                                              const Vocabulary& vocabulary,
                                              const EmbeddingConfig& config) {
  std::vector<ContextPair> pairs;
  for (const auto& r : records) {
    for_each_context_pair(r, vocabulary, config,
                          [&](std::size_t, ContextPair p) { pairs.push_back(p); });
  }
  return pairs;
}

double skip_gram_loss(const EmbeddingTable& table, std::span<const SkipGramSample> samples) {
  double loss = 0.0;
  for (const auto& s : samples) {
    const auto v = table.vectors.row(static_cast<Eigen::Index>(s.center));
    loss += neg_log_sigmoid(table.context_vectors.row(static_cast<Eigen::Index>(s.context)).dot(v));
    for (auto k : s.negatives) {
      loss += neg_log_sigmoid(-table.context_vectors.row(static_cast<Eigen::Index>(k)).dot(v));
    }
  }
  return loss;
}

void skip_gram_gradient(const EmbeddingTable& table, std::span<const SkipGramSample> samples,
                        Eigen::MatrixXd& grad_vectors, Eigen::MatrixXd& grad_context) {
  for (const auto& s : samples) {
    const auto c = static_cast<Eigen::Index>(s.center);
    const auto v = table.vectors.row(c);
    auto term = [&](std::size_t target, double label) {
      const auto t = static_cast<Eigen::Index>(target);
      const double g = sigmoid(table.context_vectors.row(t).dot(v)) - label;
      grad_vectors.row(c) += g * table.context_vectors.row(t);
      grad_context.row(t) += g * v;
    };
    term(s.context, 1.0);
    for (auto k : s.negatives) term(k, 0.0);
  }
}

namespace {

Eigen::RowVectorXd context_mean(const EmbeddingTable& table, const std::vector<std::size_t>& contexts) {
  Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(table.vectors.cols());
  for (auto j : contexts) h += table.vectors.row(static_cast<Eigen::Index>(j));
  return h / static_cast<double>(contexts.size());
}

}  // namespace

double cbow_loss(const EmbeddingTable& table, std::span<const CbowSample> samples) {
  double loss = 0.0;
  for (const auto& s : samples) {
    if (s.contexts.empty()) continue;
    const Eigen::RowVectorXd h = context_mean(table, s.contexts);
    loss += neg_log_sigmoid(table.context_vectors.row(static_cast<Eigen::Index>(s.target)).dot(h));
    for (auto k : s.negatives) {
      loss += neg_log_sigmoid(-table.context_vectors.row(static_cast<Eigen::Index>(k)).dot(h));
    }
  }
  return loss;
}

void cbow_gradient(const EmbeddingTable& table, std::span<const CbowSample> samples,
                   Eigen::MatrixXd& grad_vectors, Eigen::MatrixXd& grad_context) {
  for (const auto& s : samples) {
    if (s.contexts.empty()) continue;
    const Eigen::RowVectorXd h = context_mean(table, s.contexts);
    Eigen::RowVectorXd grad_h = Eigen::RowVectorXd::Zero(h.size());
    auto term = [&](std::size_t target, double label) {
      const auto t = static_cast<Eigen::Index>(target);
      const double g = sigmoid(table.context_vectors.row(t).dot(h)) - label;
      grad_h += g * table.context_vectors.row(t);
      grad_context.row(t) += g * h;
    };
    term(s.target, 1.0);
    for (auto k : s.negatives) term(k, 0.0);
    const double share = 1.0 / static_cast<double>(s.contexts.size());
    for (auto j : s.contexts) grad_vectors.row(static_cast<Eigen::Index>(j)) += share * grad_h;
  }
}

EmbeddingTable initialize_embeddings(Vocabulary vocabulary, std::size_t dim, std::uint64_t seed) {
  const auto V = static_cast<Eigen::Index>(vocabulary.size());
  const auto d = static_cast<Eigen::Index>(dim);
  EmbeddingTable table{std::move(vocabulary), Eigen::MatrixXd(V, d), Eigen::MatrixXd::Zero(V, d)};
  std::mt19937_64 rng(seed);
  const double half = 0.5 / static_cast<double>(dim);
  std::uniform_real_distribution<double> init(-half, half);
  for (Eigen::Index i = 0; i < V; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) table.vectors(i, j) = init(rng);
  }
  return table;
}

Vocabulary restrict_vocabulary(std::span<const PatientRecord> records, const Vocabulary& vocabulary,
                               std::size_t min_count) {
  const auto seen = Vocabulary::from_records(records);
  std::vector<std::string> codes;
  std::vector<CodeCounts> counts;
  for (const auto& code : vocabulary.codes()) {
    const auto idx = seen.index_of(code);
    if (!idx || seen.counts(*idx).occurrences < min_count) continue;
    codes.push_back(code);
    counts.push_back(seen.counts(*idx));
  }
  return Vocabulary(std::move(codes), std::move(counts));
}

namespace {

class Trainer {
 public:
  Trainer(EmbeddingTable& table, const EmbeddingConfig& config)
      : table_(table), config_(config), rng_(config.seed ^ 0x9e3779b97f4a7c15ULL) {
    std::vector<double> weights(table.vocabulary.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
      weights[i] = std::pow(static_cast<double>(table.vocabulary.counts(i).occurrences), 0.75);
    }
    unigram_ = std::discrete_distribution<std::size_t>(weights.begin(), weights.end());
    grad_.resize(table.dim());
    hidden_.resize(table.dim());
  }

  void draw_negatives(std::size_t positive, std::vector<std::size_t>& out) {
    out.clear();
    for (std::size_t k = 0; k < config_.negatives; ++k) {
      const auto n = unigram_(rng_);
      if (n != positive) out.push_back(n);
    }
  }

  // One exact gradient step on a single sample, u rows updated with the pre-step
  // input vector.
  void step(const Eigen::Ref<const Eigen::RowVectorXd>& input, std::size_t positive,
            const std::vector<std::size_t>& negatives, double lr) {
    grad_.setZero();
    auto term = [&](std::size_t target, double label) {
      auto u = table_.context_vectors.row(static_cast<Eigen::Index>(target));
      const double score = u.dot(input);
      if (!std::isfinite(score)) {
        throw TrainingError("embedding training diverged: non-finite score for code '" +
                            table_.vocabulary.code(target) + "'");
      }
      const double g = sigmoid(score) - label;
      grad_ += g * u;
      u -= (lr * g) * input;
    };
    term(positive, 1.0);
    for (auto k : negatives) term(k, 0.0);
  }

  void skip_gram(std::size_t center, std::size_t context, double lr) {
    draw_negatives(context, negatives_);
    hidden_ = table_.vectors.row(static_cast<Eigen::Index>(center));
    step(hidden_, context, negatives_, lr);
    table_.vectors.row(static_cast<Eigen::Index>(center)) -= lr * grad_;
  }

  void cbow(std::size_t target, const std::vector<std::size_t>& contexts, double lr) {
    if (contexts.empty()) return;
    draw_negatives(target, negatives_);
    hidden_.setZero();
    for (auto j : contexts) hidden_ += table_.vectors.row(static_cast<Eigen::Index>(j));
    hidden_ /= static_cast<double>(contexts.size());
    step(hidden_, target, negatives_, lr);
    const double share = lr / static_cast<double>(contexts.size());
    for (auto j : contexts) table_.vectors.row(static_cast<Eigen::Index>(j)) -= share * grad_;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  EmbeddingTable& table_;
  const EmbeddingConfig& config_;
  std::mt19937_64 rng_;
  std::discrete_distribution<std::size_t> unigram_;
  Eigen::RowVectorXd grad_;
  Eigen::RowVectorXd hidden_;
  std::vector<std::size_t> negatives_;
};

}  // namespace

EmbeddingTable train_embeddings(std::span<const PatientRecord> records, const Vocabulary& vocabulary,
                                const EmbeddingConfig& config) {
  config.validate();
  if (records.empty()) throw PreconditionError("embedding: empty corpus");
  auto vocab = restrict_vocabulary(records, vocabulary, config.min_count);
  if (vocab.empty()) throw PreconditionError("embedding: no code reaches min_count in the corpus");

  auto table = initialize_embeddings(std::move(vocab), config.dim, config.seed);
  if (config.epochs == 0) return table;

  std::size_t pairs_per_epoch = 0;
  for (const auto& r : records) {
    for_each_context_pair(r, table.vocabulary, config, [&](std::size_t, ContextPair) { ++pairs_per_epoch; });
  }
  const double total = static_cast<double>(pairs_per_epoch * config.epochs);
  const double lr0 = config.learning_rate;
  std::size_t processed = 0;
  auto rate = [&] {
    const double progress = total > 0 ? static_cast<double>(processed) / total : 1.0;
    return lr0 * (1.0 - 0.99 * std::min(progress, 1.0));
  };

  Trainer trainer(table, config);
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> contexts;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), trainer.rng());
    for (auto p : order) {
      if (config.objective == EmbeddingObjective::skip_gram) {
        for_each_context_pair(records[p], table.vocabulary, config, [&](std::size_t, ContextPair pair) {
          trainer.skip_gram(pair.center, pair.context, rate());
          ++processed;
        });
      } else {
        // pairs arrive grouped by center position
        std::size_t current = static_cast<std::size_t>(-1), target = 0;
        contexts.clear();
        for_each_context_pair(records[p], table.vocabulary, config, [&](std::size_t t, ContextPair pair) {
          if (t != current) {
            trainer.cbow(target, contexts, rate());
            contexts.clear();
            current = t;
            target = pair.center;
          }
          contexts.push_back(pair.context);
          ++processed;
        });
        trainer.cbow(target, contexts, rate());
      }
    }
    if (!table.vectors.allFinite() || !table.context_vectors.allFinite()) {
      throw TrainingError("embedding training diverged in epoch " + std::to_string(epoch + 1) +
                          ": non-finite parameters");
    }
  }
  return table;
}

void save_embeddings(std::ostream& out, const EmbeddingTable& table) {
  out << table.vocabulary.size() << ' ' << table.dim() << '\n';
  char buf[40];
  for (std::size_t i = 0; i < table.vocabulary.size(); ++i) {
    out << table.vocabulary.code(i);
    for (Eigen::Index j = 0; j < table.vectors.cols(); ++j) {
      std::snprintf(buf, sizeof buf, " %.17g", table.vectors(static_cast<Eigen::Index>(i), j));
      out << buf;
    }
    out << '\n';
  }
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingTable& table) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write embedding file '" + path.string() + "'");
  save_embeddings(out, table);
}

EmbeddingTable load_embeddings(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  };
  if (!next_line()) throw FormatError("embedding file: missing header");
  long long V = -1, d = -1;
  {
    std::istringstream header(line);
    std::string extra;
    if (!(header >> V >> d) || (header >> extra) || V < 0 || d < 1) {
      throw FormatError("embedding file: header must be \"V d\"");
    }
  }
  std::vector<std::string> codes;
  codes.reserve(static_cast<std::size_t>(V));
  Eigen::MatrixXd vectors(V, d);
  for (long long i = 0; i < V; ++i) {
    if (!next_line()) {
      throw FormatError("embedding file: header declares " + std::to_string(V) + " rows, found " +
                        std::to_string(i));
    }
    std::istringstream row(line);
    std::string code;
    row >> code;
    long long got = 0;
    double value = 0.0;
    while (row >> value) {
      if (got < d) vectors(i, got) = value;
      ++got;
    }
    if (!row.eof()) throw FormatError("embedding file line " + std::to_string(line_no) + ": bad number");
    if (got != d) {
      throw FormatError("embedding file line " + std::to_string(line_no) + ": expected " +
                        std::to_string(d) + " values, found " + std::to_string(got));
    }
    codes.push_back(std::move(code));
  }
  if (next_line()) {
    throw FormatError("embedding file: more rows than the declared " + std::to_string(V));
  }
  try {
    Vocabulary vocab(std::move(codes), std::vector<CodeCounts>(static_cast<std::size_t>(V)));
    return EmbeddingTable{std::move(vocab), std::move(vectors), Eigen::MatrixXd::Zero(V, d)};
  } catch (const PreconditionError& e) {
    throw FormatError(std::string("embedding file: ") + e.what());
  }
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open embedding file '" + path.string() + "'");
  return load_embeddings(in);
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double denom = a.norm() * b.norm();
  return denom > 0 ? a.dot(b) / denom : 0.0;
}

}  // namespace patsim
