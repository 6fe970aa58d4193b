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

#include "patsim/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <utility>

#include "patsim/errors.hpp"

namespace patsim {

namespace {

using PatchMap = Eigen::Map<const Eigen::MatrixXd, 0, Eigen::OuterStride<>>;

// Column i of the result is the flattened window x[:, i:i+h-1]; no copy is made
// because a run of whole columns is contiguous in column-major storage.
PatchMap patches(const Eigen::MatrixXd& padded, Eigen::Index width) {
  const Eigen::Index d = padded.rows();
  return PatchMap(padded.data(), d * width, padded.cols() - width + 1, Eigen::OuterStride<>(d));
}

// Exactly symmetric in (a, b): every product pair is formed in both orders and
// added commutatively.
double symmetric_form(const Eigen::VectorXd& a, const Eigen::MatrixXd& m, const Eigen::VectorXd& b) {
  const Eigen::Index n = a.size();
  double s = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    s += m(i, i) * (a(i) * b(i));
    for (Eigen::Index j = i + 1; j < n; ++j) s += m(i, j) * (a(i) * b(j) + a(j) * b(i));
  }
  return s;
}

Eigen::Vector2d softmax(const Eigen::Vector2d& z) {
  const double top = z.maxCoeff();
  Eigen::Vector2d e = (z.array() - top).exp();
  return e / e.sum();
}

double glorot(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace

Eigen::MatrixXd pad_visits(const Eigen::MatrixXd& x, std::size_t width) {
  const auto w = static_cast<Eigen::Index>(width);
  if (x.cols() >= w) return x;
  Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(x.rows(), w);
  padded.leftCols(x.cols()) = x;
  return padded;
}

Eigen::VectorXd conv_forward(const Eigen::MatrixXd& x, const ConvFilter& filter) {
  if (x.rows() != filter.weights.rows()) {
    throw PreconditionError("filter height differs from the embedding dimension");
  }
  const auto h = static_cast<Eigen::Index>(filter.width());
  if (h < 1) throw PreconditionError("filter width must be >= 1");
  const Eigen::MatrixXd padded = pad_visits(x, filter.width());
  const Eigen::Index windows = padded.cols() - h + 1;
  Eigen::VectorXd c(windows);
  for (Eigen::Index i = 0; i < windows; ++i) {
    const double z = (filter.weights.array() * padded.middleCols(i, h).array()).sum() + filter.bias;
    c(i) = std::max(0.0, z);
  }
  return c;
}

double max_pool(const Eigen::VectorXd& feature_map) {
  if (feature_map.size() == 0) throw PreconditionError("max_pool of an empty feature map");
  return feature_map.maxCoeff();
}

MatcherParams MatcherParams::zeros(const MatcherShape& s) {
  const auto d = static_cast<Eigen::Index>(s.dim);
  const auto h = static_cast<Eigen::Index>(s.filter_width);
  const auto m = static_cast<Eigen::Index>(s.feature_maps);
  const auto hid = static_cast<Eigen::Index>(s.hidden);
  const auto j = static_cast<Eigen::Index>(s.joined());
  return MatcherParams{Eigen::MatrixXd::Zero(m, d * h), Eigen::VectorXd::Zero(m),
                       Eigen::MatrixXd::Zero(m, m),     Eigen::MatrixXd::Zero(hid, j),
                       Eigen::VectorXd::Zero(hid),      Eigen::MatrixXd::Zero(2, hid),
                       Eigen::VectorXd::Zero(2)};
}

std::string_view to_string(LossKind kind) {
  return kind == LossKind::square ? "square" : "cross_entropy";
}

LossKind parse_loss_kind(std::string_view text) {
  if (text == "cross_entropy") return LossKind::cross_entropy;
  if (text == "square") return LossKind::square;
  throw ConfigError("unknown loss '" + std::string(text) + "'");
}

MatcherModel MatcherModel::initialize(const MatcherShape& shape, double dropout, std::uint64_t seed) {
  if (shape.dim < 1 || shape.filter_width < 1 || shape.feature_maps < 1 || shape.hidden < 1) {
    throw ConfigError("matcher: every layer size must be >= 1");
  }
  MatcherModel model{shape, dropout, MatcherParams::zeros(shape), MatcherParams::zeros(shape)};
  std::mt19937_64 rng(seed);
  auto fill = [&](Eigen::MatrixXd& t, double limit) {
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index j = 0; j < t.cols(); ++j)
      for (Eigen::Index i = 0; i < t.rows(); ++i) t(i, j) = u(rng);
  };
  auto& p = model.params;
  fill(p.filters, glorot(shape.dim * shape.filter_width, shape.feature_maps));
  fill(p.hidden_w, glorot(shape.joined(), shape.hidden));
  fill(p.output_w, glorot(shape.hidden, 2));
  p.pairing = 0.1 * Eigen::MatrixXd::Identity(p.pairing.rows(), p.pairing.cols());
  return model;
}

Eigen::MatrixXd MatcherModel::matching() const {
  return 0.5 * (params.pairing + params.pairing.transpose());
}

ConvFilter MatcherModel::filter(std::size_t k) const {
  const auto d = static_cast<Eigen::Index>(shape.dim);
  const auto h = static_cast<Eigen::Index>(shape.filter_width);
  ConvFilter f{Eigen::MatrixXd(d, h), params.filter_bias(static_cast<Eigen::Index>(k))};
  for (Eigen::Index c = 0; c < h; ++c)
    for (Eigen::Index r = 0; r < d; ++r) f.weights(r, c) = params.filters(static_cast<Eigen::Index>(k), c * d + r);
  return f;
}

namespace {

PairForward::Branch run_branch(const Eigen::MatrixXd& x, const MatcherModel& model) {
  if (x.rows() != static_cast<Eigen::Index>(model.shape.dim)) {
    throw PreconditionError("patient matrix has " + std::to_string(x.rows()) +
                            " rows, matcher expects " + std::to_string(model.shape.dim));
  }
  const auto h = static_cast<Eigen::Index>(model.shape.filter_width);
  const auto m = static_cast<Eigen::Index>(model.shape.feature_maps);
  PairForward::Branch br;
  br.input = pad_visits(x, model.shape.filter_width);
  const Eigen::MatrixXd pre = model.params.filters * patches(br.input, h);
  br.pooled.resize(m);
  br.pooled_pre.resize(m);
  br.argmax.resize(static_cast<std::size_t>(m));
  for (Eigen::Index k = 0; k < m; ++k) {
    Eigen::Index at = 0;
    const double z = pre.row(k).maxCoeff(&at) + model.params.filter_bias(k);
    br.argmax[static_cast<std::size_t>(k)] = at;
    br.pooled_pre(k) = z;
    br.pooled(k) = std::max(0.0, z);
  }
  return br;
}

void run_head(PairForward& f, const MatcherModel& model, const Eigen::MatrixXd& matching,
              const Eigen::VectorXd& mask) {
  const auto m = static_cast<Eigen::Index>(model.shape.feature_maps);
  const auto& p = model.params;
  f.sim = symmetric_form(f.a.pooled, matching, f.b.pooled);
  f.joined.resize(2 * m + 1);
  f.joined << f.a.pooled, f.sim, f.b.pooled;
  f.hidden_pre = p.hidden_w * f.joined + p.hidden_b;
  f.mask = mask;
  f.hidden_out = f.hidden_pre.cwiseMax(0.0).cwiseProduct(mask);
  f.logits = p.output_w * f.hidden_out + p.output_b;
  f.probabilities = softmax(f.logits);
}

}  // namespace

DeepPatientVector embed_patient(const Eigen::MatrixXd& x, const MatcherModel& model) {
  return run_branch(x, model).pooled;
}

double bilinear_similarity(const DeepPatientVector& a, const DeepPatientVector& b, const MatcherModel& model) {
  const auto m = static_cast<Eigen::Index>(model.shape.feature_maps);
  if (a.size() != m || b.size() != m) throw PreconditionError("deep vectors must have one entry per filter");
  return symmetric_form(a, model.matching(), b);
}

PairForward forward_pair(const PatientMatrix& a, const PatientMatrix& b, const MatcherModel& model,
                         const Eigen::VectorXd& mask) {
  if (mask.size() != static_cast<Eigen::Index>(model.shape.hidden)) {
    throw PreconditionError("dropout mask length differs from the hidden layer");
  }
  PairForward f;
  f.a = run_branch(a.data, model);
  f.b = run_branch(b.data, model);
  run_head(f, model, model.matching(), mask);
  return f;
}

PairForward forward_pair(const PatientMatrix& a, const PatientMatrix& b, const MatcherModel& model, Mode mode,
                         std::mt19937_64* rng) {
  const auto hid = static_cast<Eigen::Index>(model.shape.hidden);
  Eigen::VectorXd mask = Eigen::VectorXd::Ones(hid);
  if (mode == Mode::train && model.dropout > 0.0) {
    if (rng == nullptr) throw PreconditionError("train mode with dropout needs a random generator");
    std::bernoulli_distribution keep(1.0 - model.dropout);
    const double scale = 1.0 / (1.0 - model.dropout);
    for (Eigen::Index i = 0; i < hid; ++i) mask(i) = keep(*rng) ? scale : 0.0;
  }
  return forward_pair(a, b, model, mask);
}

double pair_loss(const PairForward& forward, double label, LossKind kind) {
  if (kind == LossKind::square) {
    const double r = label - forward.p_similar();
    return r * r;
  }
  if (label != 0.0 && label != 1.0) throw PreconditionError("cross-entropy needs a 0/1 label");
  const auto& z = forward.logits;
  const double top = z.maxCoeff();
  const double log_norm = top + std::log((z.array() - top).exp().sum());
  return log_norm - z(label == 1.0 ? 1 : 0);
}

namespace {

void accumulate_branch(const PairForward::Branch& br, const Eigen::VectorXd& grad_pooled,
                       const MatcherModel& model, MatcherParams& into) {
  const auto d = static_cast<Eigen::Index>(model.shape.dim);
  const auto dh = d * static_cast<Eigen::Index>(model.shape.filter_width);
  for (Eigen::Index k = 0; k < grad_pooled.size(); ++k) {
    if (br.pooled_pre(k) <= 0.0 || grad_pooled(k) == 0.0) continue;
    const Eigen::Map<const Eigen::RowVectorXd> patch(br.input.data() + br.argmax[static_cast<std::size_t>(k)] * d, dh);
    into.filters.row(k) += grad_pooled(k) * patch;
    into.filter_bias(k) += grad_pooled(k);
  }
}

void accumulate_backward(const PairForward& f, double label, const MatcherModel& model, LossKind kind,
                         const Eigen::MatrixXd& matching, MatcherParams& into) {
  const auto m = static_cast<Eigen::Index>(model.shape.feature_maps);
  const auto& p = model.params;

  Eigen::Vector2d dlogits;
  if (kind == LossKind::square) {
    const double p0 = f.probabilities(0), p1 = f.probabilities(1);
    const double c = -2.0 * (label - p1) * p0 * p1;
    dlogits << -c, c;
  } else {
    dlogits = f.probabilities;
    dlogits(label == 1.0 ? 1 : 0) -= 1.0;
  }
  into.output_w.noalias() += dlogits * f.hidden_out.transpose();
  into.output_b += dlogits;

  Eigen::VectorXd dpre = (p.output_w.transpose() * dlogits).cwiseProduct(f.mask);
  for (Eigen::Index i = 0; i < dpre.size(); ++i) {
    if (f.hidden_pre(i) <= 0.0) dpre(i) = 0.0;
  }
  into.hidden_w.noalias() += dpre * f.joined.transpose();
  into.hidden_b += dpre;

  const Eigen::VectorXd dj = p.hidden_w.transpose() * dpre;
  const double ds = dj(m);
  const Eigen::VectorXd da = dj.head(m) + ds * (matching * f.b.pooled);
  const Eigen::VectorXd db = dj.tail(m) + ds * (matching * f.a.pooled);
  // s = a^T ((A + A^T) / 2) b
  into.pairing.noalias() += (0.5 * ds) * (f.a.pooled * f.b.pooled.transpose() +
                                          f.b.pooled * f.a.pooled.transpose());
  accumulate_branch(f.a, da, model, into);
  accumulate_branch(f.b, db, model, into);
}

}  // namespace

MatcherParams backward(const PairForward& forward, double label, const MatcherModel& model, LossKind kind) {
  auto grads = MatcherParams::zeros(model.shape);
  accumulate_backward(forward, label, model, kind, model.matching(), grads);
  return grads;
}

void adagrad_step(MatcherModel& model, const MatcherParams& gradients, double learning_rate) {
  std::vector<Eigen::Map<Eigen::ArrayXd>> params, accs;
  std::vector<Eigen::Map<const Eigen::ArrayXd>> grads;
  model.params.for_each([&](const char*, auto& t) { params.emplace_back(t.data(), t.size()); });
  model.accumulators.for_each([&](const char*, auto& t) { accs.emplace_back(t.data(), t.size()); });
  gradients.for_each([&](const char*, const auto& t) { grads.emplace_back(t.data(), t.size()); });
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size() || accs[i].size() != params[i].size()) {
      throw PreconditionError("adagrad: gradient shapes differ from the model");
    }
    accs[i] += grads[i].square();
    params[i] -= learning_rate * grads[i] / (accs[i].sqrt() + kAdagradEpsilon);
  }
}

namespace {

struct PairBudget {
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

PairBudget available_pairs(std::span<const std::string> cohorts) {
  std::map<std::string_view, std::size_t> sizes;
  for (const auto& c : cohorts) ++sizes[c];
  const std::size_t n = cohorts.size();
  PairBudget b;
  for (const auto& [c, k] : sizes) b.positives += k * (k - 1) / 2;
  b.negatives = n * (n - 1) / 2 - b.positives;
  return b;
}

std::size_t positives_for(double ratio, std::size_t count) {
  return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(count)));
}

}  // namespace

std::vector<LabeledPair> sample_pairs(std::span<const std::string> cohorts, double positive_ratio,
                                      std::size_t count, std::uint64_t seed) {
  if (!(positive_ratio >= 0.0 && positive_ratio <= 1.0)) {
    throw PreconditionError("positive_ratio must lie in [0, 1]");
  }
  const auto budget = available_pairs(cohorts);
  const std::size_t want_pos = positives_for(positive_ratio, count);
  const std::size_t want_neg = count - want_pos;
  if (want_neg > 0 && budget.negatives == 0) {
    throw PreconditionError("cannot sample dissimilar pairs: fewer than two cohorts present");
  }
  if (want_pos > budget.positives || want_neg > budget.negatives) {
    throw PreconditionError("requested " + std::to_string(want_pos) + " similar and " +
                            std::to_string(want_neg) + " dissimilar pairs, only " +
                            std::to_string(budget.positives) + " and " + std::to_string(budget.negatives) +
                            " exist");
  }

  std::mt19937_64 rng(seed);
  const std::size_t n = cohorts.size();
  std::vector<LabeledPair> out;
  out.reserve(count);
  auto take = [&](std::size_t i, std::size_t j, double label) {
    if (std::bernoulli_distribution(0.5)(rng)) std::swap(i, j);
    out.push_back({i, j, label});
  };

  const bool sparse = want_pos * 4 <= budget.positives && want_neg * 4 <= budget.negatives;
  if (sparse) {
    // Uniform unordered pairs, kept until each class quota is met.
    std::set<std::pair<std::size_t, std::size_t>> seen;
    std::size_t got_pos = 0, got_neg = 0;
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (got_pos < want_pos || got_neg < want_neg) {
      std::size_t i = pick(rng), j = pick(rng);
      if (i == j) continue;
      if (i > j) std::swap(i, j);
      const bool same = cohorts[i] == cohorts[j];
      if (same ? got_pos >= want_pos : got_neg >= want_neg) continue;
      if (!seen.emplace(i, j).second) continue;
      take(i, j, same ? 1.0 : 0.0);
      (same ? got_pos : got_neg) += 1;
    }
  } else {
    std::vector<std::pair<std::size_t, std::size_t>> pos, neg;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) (cohorts[i] == cohorts[j] ? pos : neg).emplace_back(i, j);
    }
    auto draw = [&](std::vector<std::pair<std::size_t, std::size_t>>& pool, std::size_t k, double label) {
      for (std::size_t t = 0; t < k; ++t) {
        const auto r = std::uniform_int_distribution<std::size_t>(t, pool.size() - 1)(rng);
        std::swap(pool[t], pool[r]);
        take(pool[t].first, pool[t].second, label);
      }
    };
    draw(pos, want_pos, 1.0);
    draw(neg, want_neg, 0.0);
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

void MatcherConfig::validate() const {
  if (shape.dim < 1 || shape.filter_width < 1 || shape.feature_maps < 1 || shape.hidden < 1) {
    throw ConfigError("matcher: every layer size must be >= 1");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("matcher: dropout must lie in [0, 1)");
  if (!(learning_rate > 0.0)) throw ConfigError("matcher: learning_rate must be > 0");
  if (minibatch < 1) throw ConfigError("matcher: minibatch must be >= 1");
  if (!(positive_ratio > 0.0 && positive_ratio < 1.0)) {
    throw ConfigError("matcher: positive_ratio must lie in (0, 1)");
  }
}

namespace {

// Largest count <= wanted whose class split fits the available pairs.
std::size_t feasible_count(std::span<const std::string> cohorts, double ratio, std::size_t wanted) {
  const auto budget = available_pairs(cohorts);
  if (budget.negatives == 0 || budget.positives == 0) return 0;
  std::size_t count = std::min(wanted, budget.positives + budget.negatives);
  while (count > 0) {
    const auto pos = positives_for(ratio, count);
    if (pos <= budget.positives && count - pos <= budget.negatives) break;
    --count;
  }
  return count;
}

double mean_loss(std::span<const PatientMatrix> patients, std::span<const LabeledPair> pairs,
                 const MatcherModel& model, LossKind kind) {
  if (pairs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& pr : pairs) {
    const auto f = forward_pair(patients[pr.first], patients[pr.second], model, Mode::infer);
    total += pair_loss(f, pr.label, kind);
  }
  return total / static_cast<double>(pairs.size());
}

bool all_finite(const MatcherParams& p) {
  bool ok = true;
  p.for_each([&](const char*, const auto& t) { ok = ok && t.allFinite(); });
  return ok;
}

}  // namespace

TrainedMatcher train_matcher(std::span<const PatientMatrix> train, std::span<const std::string> train_cohorts,
                             std::span<const PatientMatrix> dev, std::span<const std::string> dev_cohorts,
                             const MatcherConfig& config) {
  config.validate();
  if (train.size() != train_cohorts.size() || dev.size() != dev_cohorts.size()) {
    throw PreconditionError("matcher: every patient needs a cohort label");
  }
  const std::size_t per_epoch = feasible_count(train_cohorts, config.positive_ratio, config.pairs_per_epoch);
  if (per_epoch == 0) throw PreconditionError("matcher: training split needs at least two cohorts");

  TrainedMatcher result{MatcherModel::initialize(config.shape, config.dropout, config.seed), {}};
  MatcherModel model = result.model;
  std::mt19937_64 dropout_rng(config.seed ^ 0xd1b54a32d192ed03ULL);

  std::vector<LabeledPair> dev_pairs;
  if (const auto n = feasible_count(dev_cohorts, config.positive_ratio, config.dev_pairs); n > 0) {
    dev_pairs = sample_pairs(dev_cohorts, config.positive_ratio, n, config.seed + 0x5eed);
  }

  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto pairs = sample_pairs(train_cohorts, config.positive_ratio, per_epoch,
                                    config.seed + 1000003ULL * epoch);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < pairs.size(); start += config.minibatch) {
      const std::size_t end = std::min(pairs.size(), start + config.minibatch);
      auto grads = MatcherParams::zeros(config.shape);
      const Eigen::MatrixXd matching = model.matching();
      for (std::size_t i = start; i < end; ++i) {
        const auto& pr = pairs[i];
        const auto f = forward_pair(train[pr.first], train[pr.second], model, Mode::train, &dropout_rng);
        const double l = pair_loss(f, pr.label, config.loss);
        if (!std::isfinite(l)) {
          throw TrainingError("matcher training diverged in epoch " + std::to_string(epoch) +
                              ": non-finite loss");
        }
        epoch_loss += l;
        accumulate_backward(f, pr.label, model, config.loss, matching, grads);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      grads.for_each([&](const char*, auto& t) { t *= scale; });
      adagrad_step(model, grads, config.learning_rate);
    }
    if (!all_finite(model.params)) {
      throw TrainingError("matcher training diverged in epoch " + std::to_string(epoch) +
                          ": non-finite parameters");
    }
    result.history.train_loss.push_back(epoch_loss / static_cast<double>(pairs.size()));

    if (dev_pairs.empty()) {
      result.model = model;
      result.history.best_epoch = epoch;
      continue;
    }
    const double dev_loss = mean_loss(dev, dev_pairs, model, config.loss);
    result.history.dev_loss.push_back(dev_loss);
    if (dev_loss < best) {
      best = dev_loss;
      result.model = model;
      result.history.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  return result;
}

SimilarityMatrix cnn_similarity_matrix(std::span<const PatientMatrix> patients, const MatcherModel& model) {
  const auto m = static_cast<Eigen::Index>(model.shape.feature_maps);
  const auto& p = model.params;
  const Eigen::MatrixXd matching = model.matching();
  // hidden_w * [a; s; b] splits into per-patient halves plus the s column.
  const auto left = p.hidden_w.leftCols(m);
  const auto right = p.hidden_w.rightCols(m);
  const Eigen::VectorXd sim_col = p.hidden_w.col(m);

  std::vector<Eigen::VectorXd> deep, as_left, as_right, projected;
  for (const auto& pm : patients) {
    deep.push_back(embed_patient(pm.data, model));
    as_left.push_back(left * deep.back());
    as_right.push_back(right * deep.back());
    projected.push_back(matching * deep.back());
  }
  auto directed = [&](std::size_t i, std::size_t j) {
    const double s = deep[i].dot(projected[j]);
    const Eigen::VectorXd hidden = (as_left[i] + s * sim_col + as_right[j] + p.hidden_b).cwiseMax(0.0);
    return softmax(p.output_w * hidden + p.output_b)(1);
  };
  auto score = [&](std::size_t i, std::size_t j) { return 0.5 * (directed(i, j) + directed(j, i)); };
  return build_similarity_matrix(patients, Measure::cnn, score, [&](std::size_t i) { return directed(i, i); });
}

namespace {

constexpr const char* kCheckpointMagic = "patsim-matcher";
constexpr int kCheckpointVersion = 1;

void write_tensor(std::ostream& out, const char* name, const auto& t) {
  out << "tensor " << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
  char buf[40];
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    for (Eigen::Index j = 0; j < t.cols(); ++j) {
      std::snprintf(buf, sizeof buf, j == 0 ? "%.17g" : " %.17g", t(i, j));
      out << buf;
    }
    out << '\n';
  }
}

void read_tensor(std::istream& in, const char* name, auto& t) {
  std::string tag, got_name;
  long long rows = -1, cols = -1;
  if (!(in >> tag >> got_name >> rows >> cols) || tag != "tensor" || got_name != name) {
    throw FormatError(std::string("checkpoint: expected tensor '") + name + "'");
  }
  if (rows != t.rows() || cols != t.cols()) {
    throw FormatError(std::string("checkpoint: tensor '") + name + "' has shape " + std::to_string(rows) +
                      "x" + std::to_string(cols) + ", expected " + std::to_string(t.rows()) + "x" +
                      std::to_string(t.cols()));
  }
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    for (Eigen::Index j = 0; j < t.cols(); ++j) {
      if (!(in >> t(i, j))) throw FormatError(std::string("checkpoint: truncated tensor '") + name + "'");
    }
  }
}

}  // namespace

void save_model(std::ostream& out, const MatcherModel& model) {
  const auto& s = model.shape;
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "shape " << s.dim << ' ' << s.filter_width << ' ' << s.feature_maps << ' ' << s.hidden << '\n';
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", model.dropout);
  out << "dropout " << buf << '\n';
  model.params.for_each([&](const char* name, const auto& t) { write_tensor(out, name, t); });
  model.accumulators.for_each([&](const char* name, const auto& t) { write_tensor(out, name, t); });
}

void save_model(const std::filesystem::path& path, const MatcherModel& model) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file '" + path.string() + "'");
  save_model(out, model);
}

MatcherModel load_model(std::istream& in) {
  std::string magic, key;
  int version = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic) throw FormatError("checkpoint: bad header");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  MatcherShape shape;
  if (!(in >> key >> shape.dim >> shape.filter_width >> shape.feature_maps >> shape.hidden) || key != "shape") {
    throw FormatError("checkpoint: bad shape line");
  }
  double dropout = 0.0;
  if (!(in >> key >> dropout) || key != "dropout") throw FormatError("checkpoint: bad dropout line");
  MatcherModel model{shape, dropout, MatcherParams::zeros(shape), MatcherParams::zeros(shape)};
  model.params.for_each([&](const char* name, auto& t) { read_tensor(in, name, t); });
  model.accumulators.for_each([&](const char* name, auto& t) { read_tensor(in, name, t); });
  return model;
}

MatcherModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file '" + path.string() + "'");
  return load_model(in);
}

}  // namespace patsim
