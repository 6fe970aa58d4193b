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

#include "patsim/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <type_traits>
#include <unordered_map>

#include "patsim/errors.hpp"

namespace patsim {

namespace fs = std::filesystem;

std::string_view to_string(Representation r) {
  switch (r) {
    case Representation::onehot: return "onehot";
    case Representation::shallow: return "shallow";
    case Representation::deep: return "deep";
  }
  return "deep";
}

Representation parse_representation(std::string_view text) {
  if (text == "onehot") return Representation::onehot;
  if (text == "shallow") return Representation::shallow;
  if (text == "deep") return Representation::deep;
  throw ConfigError("unknown representation '" + std::string(text) + "'");
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::dev: return "dev";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  if (text == "dev") return Split::dev;
  throw FormatError("unknown split '" + std::string(text) + "'");
}

namespace {

std::string_view to_string(SweepParam p) {
  switch (p) {
    case SweepParam::d: return "d";
    case SweepParam::w: return "w";
    case SweepParam::m: return "m";
    case SweepParam::all: return "all";
  }
  return "all";
}

std::string_view to_string(EmbeddingObjective o) { return o == EmbeddingObjective::cbow ? "cbow" : "skip_gram"; }

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(value) + "' as " +
                    std::string(expected));
}

template <typename T>
void parse_value(std::string_view key, std::string_view text, T& out) {
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") out = true;
    else if (text == "false" || text == "0" || text == "no" || text == "off") out = false;
    else bad_value(key, text, "a boolean");
  } else if constexpr (std::is_unsigned_v<T>) {
    T v{};
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size() || text.empty()) {
      bad_value(key, text, "a non-negative integer");
    }
    out = v;
  } else if constexpr (std::is_floating_point_v<T>) {
    std::string s(text);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) bad_value(key, text, "a number");
    out = v;
  } else if constexpr (std::is_same_v<T, std::string>) {
    out = std::string(text);
  } else if constexpr (std::is_same_v<T, fs::path>) {
    out = fs::path(std::string(text));
  } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
    std::vector<std::size_t> values;
    std::string_view rest = text;
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const auto item = trim(rest.substr(0, comma));
      std::size_t v = 0;
      parse_value(key, item, v);
      values.push_back(v);
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    }
    if (values.empty()) bad_value(key, text, "a comma-separated list");
    out = std::move(values);
  } else {
    try {
      if constexpr (std::is_same_v<T, Representation>) out = parse_representation(text);
      else if constexpr (std::is_same_v<T, Measure>) out = parse_measure(text);
      else if constexpr (std::is_same_v<T, LossKind>) out = parse_loss_kind(text);
      else if constexpr (std::is_same_v<T, EmbeddingObjective>) {
        if (text == "skip_gram") out = EmbeddingObjective::skip_gram;
        else if (text == "cbow") out = EmbeddingObjective::cbow;
        else throw ConfigError("");
      } else if constexpr (std::is_same_v<T, SweepParam>) {
        if (text == "d") out = SweepParam::d;
        else if (text == "w") out = SweepParam::w;
        else if (text == "m") out = SweepParam::m;
        else if (text == "all") out = SweepParam::all;
        else throw ConfigError("");
      } else {
        static_assert(sizeof(T) == 0, "unsupported config field type");
      }
    } catch (const Error&) {
      bad_value(key, text, "one of the documented choices");
    }
  }
}

template <typename T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_unsigned_v<T>) {
    return std::to_string(v);
  } else if constexpr (std::is_floating_point_v<T>) {
    // shortest text that parses back to the same value
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, fs::path>) {
    return v.string();
  } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  } else {
    return std::string(to_string(v));
  }
}

template <typename Access>
ConfigKey make_key(std::string name, std::string help, Access access) {
  ConfigKey k;
  k.name = name;
  k.help = std::move(help);
  k.set = [name, access](PipelineConfig& c, std::string_view text) { parse_value(name, text, access(c)); };
  k.get = [access](const PipelineConfig& c) { return format_value(access(c)); };
  return k;
}

#define PATSIM_KEY(name, help, expr) make_key(name, help, [](auto& c) -> auto& { return c.expr; })

std::vector<ConfigKey> build_keys() {
  return {
      PATSIM_KEY("seed", "global seed for every stage", seed),
      PATSIM_KEY("out", "run directory for all artifacts", out),

      PATSIM_KEY("synth.n_cohorts", "number of cohorts", synth.n_cohorts),
      PATSIM_KEY("synth.patients_per_cohort", "patients per cohort", synth.patients_per_cohort),
      PATSIM_KEY("synth.vocab_size", "total code vocabulary", synth.vocab_size),
      PATSIM_KEY("synth.shared_vocab_frac", "vocabulary share of background codes", synth.shared_vocab_frac),
      PATSIM_KEY("synth.cohort_specific_frac", "vocabulary share of each cohort pool", synth.cohort_specific_frac),
      PATSIM_KEY("synth.mean_events_per_patient", "mean events per patient", synth.mean_events_per_patient),
      PATSIM_KEY("synth.min_visits", "fewest visits per patient", synth.visits_per_patient_range.first),
      PATSIM_KEY("synth.max_visits", "most visits per patient", synth.visits_per_patient_range.second),
      PATSIM_KEY("synth.chronic_frac", "vocabulary share of chronic codes", synth.chronic_frac),
      PATSIM_KEY("synth.specific_event_rate", "share of acute events from the cohort pool",
                 synth.specific_event_rate),
      PATSIM_KEY("synth.identifier_frac", "share of each cohort pool that are identifiers", synth.identifier_frac),
      PATSIM_KEY("synth.identifier_mass", "share of cohort-pool draws hitting identifiers", synth.identifier_mass),
      PATSIM_KEY("synth.chronic_per_patient", "chronic codes per patient", synth.chronic_per_patient),
      PATSIM_KEY("synth.chronic_visit_frac", "share of visits carrying each chronic code",
                 synth.chronic_visit_frac),
      PATSIM_KEY("synth.background_zipf", "Zipf exponent of background codes", synth.background_zipf),
      PATSIM_KEY("synth.specific_zipf", "Zipf exponent of non-identifier cohort codes", synth.specific_zipf),

      PATSIM_KEY("data.input", "event file to use instead of the synth output", data.input),
      PATSIM_KEY("data.max_patient_frac", "drop codes seen in more than this share of patients",
                 data.max_patient_frac),
      PATSIM_KEY("data.min_patient_count", "drop codes seen in fewer patients", data.min_patient_count),
      PATSIM_KEY("data.min_events", "drop patients with fewer events", data.min_events),
      PATSIM_KEY("data.strip_identifiers", "remove cohort identifier codes", data.strip_identifiers),
      PATSIM_KEY("data.train_frac", "training share of each cohort", data.train_frac),
      PATSIM_KEY("data.test_frac", "test share of each cohort", data.test_frac),
      PATSIM_KEY("data.dev_frac", "development share of each cohort", data.dev_frac),

      PATSIM_KEY("embedding.dim", "embedding size d", embedding.dim),
      PATSIM_KEY("embedding.base_window", "window length theta", embedding.base_window),
      PATSIM_KEY("embedding.freq_scale", "window growth a per occurrence", embedding.freq_scale),
      PATSIM_KEY("embedding.adaptive", "use frequency-adaptive windows", embedding.adaptive),
      PATSIM_KEY("embedding.negatives", "negative samples per pair", embedding.negatives),
      PATSIM_KEY("embedding.epochs", "passes over the corpus", embedding.epochs),
      PATSIM_KEY("embedding.learning_rate", "initial learning rate", embedding.learning_rate),
      PATSIM_KEY("embedding.min_count", "minimum code occurrences", embedding.min_count),
      PATSIM_KEY("embedding.objective", "skip_gram or cbow", embedding.objective),

      PATSIM_KEY("represent.normalize_columns", "scale visit columns to unit norm", represent.normalize_columns),

      PATSIM_KEY("matcher.filter_width", "convolution width h", matcher.shape.filter_width),
      PATSIM_KEY("matcher.feature_maps", "number of filters m", matcher.shape.feature_maps),
      PATSIM_KEY("matcher.hidden", "hidden layer size", matcher.shape.hidden),
      PATSIM_KEY("matcher.dropout", "dropout rate on the hidden layer", matcher.dropout),
      PATSIM_KEY("matcher.learning_rate", "AdaGrad learning rate", matcher.learning_rate),
      PATSIM_KEY("matcher.minibatch", "pairs per update", matcher.minibatch),
      PATSIM_KEY("matcher.max_epochs", "epoch limit", matcher.max_epochs),
      PATSIM_KEY("matcher.patience", "epochs without dev improvement before stopping", matcher.patience),
      PATSIM_KEY("matcher.pairs_per_epoch", "training pairs per epoch", matcher.pairs_per_epoch),
      PATSIM_KEY("matcher.dev_pairs", "development pairs", matcher.dev_pairs),
      PATSIM_KEY("matcher.positive_ratio", "share of same-cohort pairs", matcher.positive_ratio),
      PATSIM_KEY("matcher.loss", "cross_entropy or square", matcher.loss),

      PATSIM_KEY("similarity.measure", "rv, dcor or cnn", measure),

      PATSIM_KEY("cluster.representation", "onehot, shallow or deep", cluster.representation),
      PATSIM_KEY("cluster.k", "number of clusters (0: number of cohorts)", cluster.k),
      PATSIM_KEY("cluster.max_iters", "k-means iteration limit", cluster.max_iters),
      PATSIM_KEY("cluster.normalize_rows", "unit-normalize patient vectors before k-means", cluster.normalize_rows),

      PATSIM_KEY("sweep.param", "d, w, m or all", sweep.param),
      PATSIM_KEY("sweep.d_grid", "embedding sizes", sweep.d_grid),
      PATSIM_KEY("sweep.w_grid", "filter widths", sweep.w_grid),
      PATSIM_KEY("sweep.m_grid", "feature map counts", sweep.m_grid),

      PATSIM_KEY("pathways.cohort", "cohort whose pathways are extracted", pathways.cohort),
      PATSIM_KEY("pathways.top_k", "patients kept", pathways.top_k),
  };
}

#undef PATSIM_KEY

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

void set_config_value(PipelineConfig& config, std::string_view key, std::string_view value) {
  for (const auto& k : config_keys()) {
    if (k.name == key) {
      k.set(config, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void apply_config(PipelineConfig& config, std::istream& in) {
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty() || text[0] == '#' || text[0] == ';') continue;
    if (text.front() == '[') {
      if (text.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section");
      section = trim(std::string_view(text).substr(1, text.size() - 2));
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = trim(std::string_view(text).substr(0, eq));
    set_config_value(config, section.empty() ? key : section + "." + key, std::string_view(text).substr(eq + 1));
  }
}

void apply_config_file(PipelineConfig& config, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  apply_config(config, in);
}

void write_config(std::ostream& out, const PipelineConfig& config) {
  std::string current;
  for (const auto& k : config_keys()) {
    const auto dot = k.name.find('.');
    const auto section = dot == std::string::npos ? std::string() : k.name.substr(0, dot);
    if (section != current) {
      out << "\n[" << section << "]\n";
      current = section;
    }
    out << (dot == std::string::npos ? k.name : k.name.substr(dot + 1)) << " = " << k.get(config) << '\n';
  }
}

PipelineConfig PipelineConfig::resolved() const {
  PipelineConfig c = *this;
  c.synth.seed = seed;
  c.embedding.seed = seed;
  c.matcher.seed = seed;
  c.matcher.shape.dim = embedding.dim;
  return c;
}

void PipelineConfig::validate() const {
  const auto c = resolved();
  auto wrap = [](const char* section, auto&& check) {
    try {
      check();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("[") + section + "] " + e.what());
    }
  };
  wrap("synth", [&] { c.synth.validate(); });
  wrap("embedding", [&] { c.embedding.validate(); });
  wrap("matcher", [&] { c.matcher.validate(); });
  const auto& d = c.data;
  for (const auto& [name, v] : {std::pair{"data.train_frac", d.train_frac}, std::pair{"data.test_frac", d.test_frac},
                                std::pair{"data.dev_frac", d.dev_frac}}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string("config key '") + name + "' must lie in [0, 1]");
  }
  if (std::abs(d.train_frac + d.test_frac + d.dev_frac - 1.0) > 1e-9) {
    throw ConfigError("config keys 'data.train_frac', 'data.test_frac', 'data.dev_frac' must sum to 1");
  }
  if (!(d.max_patient_frac > 0.0 && d.max_patient_frac <= 1.0)) {
    throw ConfigError("config key 'data.max_patient_frac' must lie in (0, 1]");
  }
  if (c.cluster.max_iters < 1) throw ConfigError("config key 'cluster.max_iters' must be >= 1");
  if (c.pathways.top_k < 1) throw ConfigError("config key 'pathways.top_k' must be >= 1");
}

std::vector<Split> stratified_split(std::span<const std::string> cohorts, const DataConfig& data,
                                    std::uint64_t seed) {
  std::map<std::string_view, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < cohorts.size(); ++i) groups[cohorts[i]].push_back(i);
  std::vector<Split> out(cohorts.size(), Split::dev);
  std::mt19937_64 rng(seed);
  for (auto& [cohort, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = members.size();
    const auto n_train = std::min<std::size_t>(n, std::llround(data.train_frac * static_cast<double>(n)));
    const auto n_test =
        std::min<std::size_t>(n - n_train, std::llround(data.test_frac * static_cast<double>(n)));
    for (std::size_t j = 0; j < n; ++j) {
      out[members[j]] = j < n_train ? Split::train : j < n_train + n_test ? Split::test : Split::dev;
    }
  }
  return out;
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) out.push_back(i);
  return out;
}

Dataset prepare_dataset(std::span<const PatientRecord> raw, const GroundTruth* truth, const PipelineConfig& config) {
  const auto& data = config.data;
  const auto vocab = filter_vocabulary(raw, data.max_patient_frac, data.min_patient_count);
  auto records = filter_patients(raw, data.min_events, vocab);
  if (data.strip_identifiers) {
    if (truth == nullptr) throw PreconditionError("identifier removal needs the ground-truth file");
    records = strip_identifiers(records, *truth, data.min_events);
  }
  if (records.empty()) throw PreconditionError("no patient survives the frequency filters");
  Dataset ds;
  for (auto& r : records) {
    std::string cohort;
    if (r.cohort) {
      cohort = *r.cohort;
    } else if (truth != nullptr && truth->cohorts.contains(r.patient_id)) {
      cohort = truth->cohorts.at(r.patient_id);
      r.cohort = cohort;
    } else {
      throw PreconditionError("patient '" + r.patient_id + "' has no cohort label");
    }
    ds.cohorts.push_back(std::move(cohort));
  }
  ds.records = std::move(records);
  ds.splits = stratified_split(ds.cohorts, data, config.seed);
  return ds;
}

EmbeddingTable embed_dataset(Dataset& dataset, const PipelineConfig& config) {
  const auto c = config.resolved();
  auto table = train_embeddings(dataset.records, Vocabulary::from_records(dataset.records), c.embedding);
  auto kept = filter_patients(dataset.records, c.data.min_events, table.vocabulary);
  if (kept.size() != dataset.records.size()) {
    std::unordered_map<std::string_view, std::size_t> where;
    for (std::size_t i = 0; i < dataset.records.size(); ++i) where[dataset.records[i].patient_id] = i;
    Dataset next;
    for (auto& r : kept) {
      const auto i = where.at(r.patient_id);
      next.cohorts.push_back(dataset.cohorts[i]);
      next.splits.push_back(dataset.splits[i]);
      next.records.push_back(std::move(r));
    }
    dataset = std::move(next);
  } else {
    dataset.records = std::move(kept);
  }
  return table;
}

std::vector<PatientMatrix> represent_dataset(const Dataset& dataset, const EmbeddingTable& table,
                                             const PipelineConfig& config) {
  std::vector<PatientMatrix> out;
  out.reserve(dataset.records.size());
  for (const auto& r : dataset.records) out.push_back(to_patient_matrix(r, table, config.represent));
  return out;
}

namespace {

template <typename T>
std::vector<T> pick(std::span<const T> items, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(items[i]);
  return out;
}

}  // namespace

TrainedMatcher train_on_dataset(const Dataset& dataset, std::span<const PatientMatrix> matrices,
                                const PipelineConfig& config) {
  const auto c = config.resolved();
  const auto train_idx = dataset.indices(Split::train);
  const auto dev_idx = dataset.indices(Split::dev);
  const std::span<const std::string> cohorts(dataset.cohorts);
  return train_matcher(pick(matrices, std::span<const std::size_t>(train_idx)),
                       pick(cohorts, std::span<const std::size_t>(train_idx)),
                       pick(matrices, std::span<const std::size_t>(dev_idx)),
                       pick(cohorts, std::span<const std::size_t>(dev_idx)), c.matcher);
}

SimilarityMatrix test_similarity(const Dataset& dataset, std::span<const PatientMatrix> matrices, Measure measure,
                                 const MatcherModel* model) {
  const auto idx = dataset.indices(Split::test);
  const auto test = pick(matrices, std::span<const std::size_t>(idx));
  if (measure != Measure::cnn) return build_similarity_matrix(test, measure);
  if (model == nullptr) throw PreconditionError("the cnn measure needs a trained matcher");
  return cnn_similarity_matrix(test, *model);
}

std::size_t cluster_count(const Dataset& dataset, const PipelineConfig& config) {
  if (config.cluster.k > 0) return config.cluster.k;
  std::set<std::string_view> seen;
  for (auto i : dataset.indices(Split::test)) seen.insert(dataset.cohorts[i]);
  return seen.size();
}

Assignment cluster_vectors(const Dataset& dataset, const EmbeddingTable& table, Representation representation,
                           const PipelineConfig& config) {
  if (representation == Representation::deep) {
    throw PreconditionError("deep clustering runs on a similarity matrix");
  }
  const auto idx = dataset.indices(Split::test);
  if (idx.empty()) throw PreconditionError("the test split is empty");
  const auto width = representation == Representation::onehot ? table.vocabulary.size() : table.dim();
  Eigen::MatrixXd features(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(width));
  Assignment a;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& record = dataset.records[idx[r]];
    features.row(static_cast<Eigen::Index>(r)) = representation == Representation::onehot
                                                     ? visit_count_vector(record, table.vocabulary)
                                                     : to_summed_vector(record, table).data;
    a.patient_ids.push_back(record.patient_id);
  }
  if (config.cluster.normalize_rows) {
    features.rowwise() -= features.colwise().mean();
    features.rowwise().normalize();
  }
  a.k = cluster_count(dataset, config);
  a.clusters = kmeans(features, a.k, config.seed, config.cluster.max_iters).assignment;
  return a;
}

Assignment cluster_similarity(const SimilarityMatrix& sim, std::size_t k, const PipelineConfig& config) {
  Assignment a;
  a.patient_ids = sim.patient_ids;
  a.k = k;
  a.clusters = kmeans_from_similarity(sim, k, config.seed, config.cluster.max_iters).assignment;
  return a;
}

std::map<std::string, std::string> cohort_map(const Dataset& dataset) {
  std::map<std::string, std::string> out;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) out[dataset.records[i].patient_id] = dataset.cohorts[i];
  return out;
}

EvaluationReport evaluate_assignment(const Assignment& assignment, const std::map<std::string, std::string>& cohorts,
                                     std::uint64_t seed) {
  std::vector<std::string> c, q;
  for (std::size_t i = 0; i < assignment.patient_ids.size(); ++i) {
    const auto it = cohorts.find(assignment.patient_ids[i]);
    if (it == cohorts.end()) {
      throw PreconditionError("no cohort for clustered patient '" + assignment.patient_ids[i] + "'");
    }
    c.push_back(std::to_string(assignment.clusters[i]));
    q.push_back(it->second);
  }
  return evaluate(PartitionPair(std::move(c), std::move(q)), assignment.k, seed);
}

std::vector<std::size_t> most_similar_members(const SimilarityMatrix& sim, std::span<const std::size_t> members,
                                              std::size_t top_k) {
  std::vector<std::pair<double, std::size_t>> scored;
  for (auto i : members) {
    double total = 0.0;
    for (auto j : members)
      if (j != i) total += sim.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    const double mean = members.size() > 1 ? total / static_cast<double>(members.size() - 1) : 0.0;
    scored.emplace_back(mean, i);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < std::min(top_k, scored.size()); ++r) out.push_back(scored[r].second);
  return out;
}

std::vector<PathwayCount> event_transitions(std::span<const PatientRecord> records) {
  std::map<std::pair<std::string, std::string>, std::size_t> counts;
  for (const auto& r : records) {
    const auto seq = r.event_sequence();
    for (std::size_t i = 1; i < seq.size(); ++i) ++counts[{std::string(seq[i - 1]), std::string(seq[i])}];
  }
  std::vector<PathwayCount> out;
  for (const auto& [key, n] : counts) out.push_back({key.first, key.second, n});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.count > b.count; });
  return out;
}

// ---- artifact I/O -----------------------------------------------------------

namespace {

void require(const fs::path& path, std::string_view stage) {
  if (!fs::exists(path)) {
    throw Error("missing input '" + path.string() + "' (run 'patsim " + std::string(stage) + "' first)");
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

void check_csv_token(const std::string& s, const char* what) {
  if (s.find_first_of(",\n\"") != std::string::npos) {
    throw FormatError(std::string(what) + " '" + s + "' cannot be written to a CSV artifact");
  }
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path, std::string_view header) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || trim(line) != header) {
    throw FormatError("'" + path.string() + "': expected header \"" + std::string(header) + "\"");
  }
  const auto columns = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')) + 1;
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(trim(line));
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != columns) {
      throw FormatError("'" + path.string() + "' line " + std::to_string(line_no) + ": expected " +
                        std::to_string(columns) + " fields");
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

void write_split(const fs::path& path, const Dataset& ds) {
  auto out = open_out(path);
  out << "patient_id,cohort,split\n";
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    check_csv_token(ds.records[i].patient_id, "patient id");
    check_csv_token(ds.cohorts[i], "cohort");
    out << ds.records[i].patient_id << ',' << ds.cohorts[i] << ',' << to_string(ds.splits[i]) << '\n';
  }
}

Dataset load_dataset(const Artifacts& a) {
  require(a.dataset(), "embed");
  require(a.split(), "embed");
  Dataset ds;
  ds.records = parse_events(a.dataset(), EventFormat::jsonl);
  const auto rows = read_csv(a.split(), "patient_id,cohort,split");
  std::unordered_map<std::string, std::pair<std::string, Split>> by_id;
  for (const auto& r : rows) by_id[r[0]] = {r[1], parse_split(r[2])};
  if (by_id.size() != ds.records.size()) {
    throw FormatError("'" + a.split().string() + "' does not match '" + a.dataset().string() + "'");
  }
  for (const auto& r : ds.records) {
    const auto it = by_id.find(r.patient_id);
    if (it == by_id.end()) throw FormatError("patient '" + r.patient_id + "' is missing from the split file");
    ds.cohorts.push_back(it->second.first);
    ds.splits.push_back(it->second.second);
  }
  return ds;
}

void write_assignment(const fs::path& path, const Assignment& a) {
  auto out = open_out(path);
  out << "patient_id,cluster\n";
  for (std::size_t i = 0; i < a.patient_ids.size(); ++i) out << a.patient_ids[i] << ',' << a.clusters[i] << '\n';
}

Assignment read_assignment(const fs::path& path) {
  Assignment a;
  for (const auto& r : read_csv(path, "patient_id,cluster")) {
    a.patient_ids.push_back(r[0]);
    std::size_t c = 0;
    const auto [end, ec] = std::from_chars(r[1].data(), r[1].data() + r[1].size(), c);
    if (ec != std::errc() || end != r[1].data() + r[1].size()) {
      throw FormatError("'" + path.string() + "': bad cluster id '" + r[1] + "'");
    }
    a.clusters.push_back(c);
  }
  return a;
}

std::optional<GroundTruth> load_truth_if_present(const Artifacts& a) {
  if (!fs::exists(a.truth())) return std::nullopt;
  return read_truth(a.truth());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

PipelineConfig checked(const PipelineConfig& config) {
  config.validate();
  auto c = config.resolved();
  fs::create_directories(c.out);
  return c;
}

}  // namespace

void cmd_synth(const PipelineConfig& config) {
  const auto c = checked(config);
  const Artifacts a{c.out};
  const auto ds = generate(c.synth);
  write_events(a.events(), ds.records, EventFormat::jsonl);
  write_truth(a.truth(), ds.truth);
}

void cmd_embed(const PipelineConfig& config) {
  const auto c = checked(config);
  const Artifacts a{c.out};
  const fs::path input = c.data.input.empty() ? a.events() : c.data.input;
  require(input, "synth");
  const auto raw = parse_events(input, format_for_path(input));
  const auto truth = load_truth_if_present(a);
  if (c.data.strip_identifiers && !truth) require(a.truth(), "synth");
  auto ds = prepare_dataset(raw, truth ? &*truth : nullptr, c);
  const auto table = embed_dataset(ds, c);
  write_events(a.dataset(), ds.records, EventFormat::jsonl);
  write_split(a.split(), ds);
  save_embeddings(a.embeddings(), table);
}

void cmd_represent(const PipelineConfig& config) {
  const auto c = checked(config);
  const Artifacts a{c.out};
  const auto ds = load_dataset(a);
  require(a.embeddings(), "embed");
  const auto table = load_embeddings(a.embeddings());
  write_patient_matrices(a.matrices(), represent_dataset(ds, table, c));
}

void cmd_train(const PipelineConfig& config) {
  const auto c = checked(config);
  const Artifacts a{c.out};
  const auto ds = load_dataset(a);
  require(a.matrices(), "represent");
  const auto matrices = read_patient_matrices(a.matrices());
  const auto trained = train_on_dataset(ds, matrices, c);
  save_model(a.model(), trained.model);
}

void cmd_sim(const PipelineConfig& config) {
  const auto c = checked(config);
  const Artifacts a{c.out};
  const auto ds = load_dataset(a);
  require(a.matrices(), "represent");
  const auto matrices = read_patient_matrices(a.matrices());
  std::optional<MatcherModel> model;
  if (c.measure == Measure::cnn) {
    require(a.model(), "train");
    model = load_model(a.model());
  }
  const auto sim = test_similarity(ds, matrices, c.measure, model ? &*model : nullptr);
  if (sim.undefined_pairs > 0) {
    std::cerr << "warning: " << sim.undefined_pairs << " pairs had an undefined similarity and were scored 0\n";
  }
  write_similarity_csv(a.similarity(), sim);
}

void cmd_cluster(const PipelineConfig& config) {
  const auto c = checked(config);
  const Artifacts a{c.out};
  const auto ds = load_dataset(a);
  Assignment assignment;
  if (c.cluster.representation == Representation::deep) {
    require(a.similarity(), "sim");
    const auto sim = read_similarity_csv(a.similarity(), c.measure);
    assignment = cluster_similarity(sim, cluster_count(ds, c), c);
  } else {
    require(a.embeddings(), "embed");
    assignment = cluster_vectors(ds, load_embeddings(a.embeddings()), c.cluster.representation, c);
  }
  write_assignment(a.clusters(), assignment);
}

void cmd_eval(const PipelineConfig& config) {
  const auto c = checked(config);
  const Artifacts a{c.out};
  const auto ds = load_dataset(a);
  require(a.clusters(), "cluster");
  auto assignment = read_assignment(a.clusters());
  assignment.k = cluster_count(ds, c);
  write_report(a.report(), evaluate_assignment(assignment, cohort_map(ds), c.seed));
}

std::vector<SweepRow> cmd_sweep(const PipelineConfig& config) {
  const auto base = checked(config);
  const Artifacts a{base.out};
  const auto loaded = load_dataset(a);

  struct Point {
    const char* param;
    std::size_t value, d, w, m;
  };
  std::vector<Point> points;
  const auto d0 = base.embedding.dim, w0 = base.matcher.shape.filter_width, m0 = base.matcher.shape.feature_maps;
  const auto p = base.sweep.param;
  if (p == SweepParam::d || p == SweepParam::all)
    for (auto v : base.sweep.d_grid) points.push_back({"d", v, v, w0, m0});
  if (p == SweepParam::w || p == SweepParam::all)
    for (auto v : base.sweep.w_grid) points.push_back({"w", v, d0, v, m0});
  if (p == SweepParam::m || p == SweepParam::all)
    for (auto v : base.sweep.m_grid) points.push_back({"m", v, d0, w0, v});

  struct Embedded {
    Dataset dataset;
    std::vector<PatientMatrix> matrices;
  };
  std::map<std::size_t, Embedded> by_dim;
  std::vector<SweepRow> rows;
  for (const auto& pt : points) {
    auto c = base;
    c.embedding.dim = pt.d;
    c.matcher.shape.filter_width = pt.w;
    c.matcher.shape.feature_maps = pt.m;
    c.validate();
    c = c.resolved();
    auto it = by_dim.find(pt.d);
    if (it == by_dim.end()) {
      Embedded e{loaded, {}};
      const auto table = embed_dataset(e.dataset, c);
      e.matrices = represent_dataset(e.dataset, table, c);
      it = by_dim.emplace(pt.d, std::move(e)).first;
    }
    const auto& e = it->second;
    const auto trained = train_on_dataset(e.dataset, e.matrices, c);
    const auto sim = test_similarity(e.dataset, e.matrices, Measure::cnn, &trained.model);
    const auto assignment = cluster_similarity(sim, cluster_count(e.dataset, c), c);
    rows.push_back({pt.param, pt.value, pt.d, pt.w, pt.m, evaluate_assignment(assignment, cohort_map(e.dataset), c.seed)});
  }

  auto out = open_out(a.sweep());
  out << "param,value,d,w,m,rand_index,purity,nmi,precision,recall,f_measure\n";
  for (const auto& r : rows) {
    out << r.param << ',' << r.value << ',' << r.d << ',' << r.w << ',' << r.m << ',' << fmt(r.report.rand_index)
        << ',' << fmt(r.report.purity) << ',' << fmt(r.report.nmi) << ',' << fmt(r.report.precision) << ','
        << fmt(r.report.recall) << ',' << fmt(r.report.f_measure) << '\n';
  }
  return rows;
}

void cmd_pathways(const PipelineConfig& config) {
  const auto c = checked(config);
  const Artifacts a{c.out};
  const auto ds = load_dataset(a);
  require(a.similarity(), "sim");
  require(a.clusters(), "cluster");
  if (std::find(ds.cohorts.begin(), ds.cohorts.end(), c.pathways.cohort) == ds.cohorts.end()) {
    throw PreconditionError("unknown cohort '" + c.pathways.cohort + "'");
  }
  const auto sim = read_similarity_csv(a.similarity(), c.measure);
  const auto assignment = read_assignment(a.clusters());
  const auto cohorts = cohort_map(ds);

  std::unordered_map<std::string_view, std::size_t> sim_index;
  for (std::size_t i = 0; i < sim.patient_ids.size(); ++i) sim_index[sim.patient_ids[i]] = i;

  // The cluster holding most of the cohort; ties go to the lower cluster id.
  std::map<std::size_t, std::size_t> hits;
  for (std::size_t i = 0; i < assignment.patient_ids.size(); ++i) {
    const auto it = cohorts.find(assignment.patient_ids[i]);
    if (it != cohorts.end() && it->second == c.pathways.cohort) ++hits[assignment.clusters[i]];
  }
  std::vector<std::size_t> members;
  if (!hits.empty()) {
    const auto dominant =
        std::max_element(hits.begin(), hits.end(), [](const auto& x, const auto& y) { return x.second < y.second; })
            ->first;
    for (std::size_t i = 0; i < assignment.patient_ids.size(); ++i) {
      if (assignment.clusters[i] != dominant) continue;
      const auto it = sim_index.find(assignment.patient_ids[i]);
      if (it == sim_index.end()) {
        throw FormatError("clustered patient '" + assignment.patient_ids[i] + "' is absent from the similarity file");
      }
      members.push_back(it->second);
    }
  }

  std::unordered_map<std::string_view, const PatientRecord*> records;
  for (const auto& r : ds.records) records[r.patient_id] = &r;
  std::vector<PatientRecord> chosen;
  for (auto i : most_similar_members(sim, members, c.pathways.top_k)) chosen.push_back(*records.at(sim.patient_ids[i]));

  auto out = open_out(a.pathways());
  out << "source_code,target_code,count\n";
  for (const auto& t : event_transitions(chosen)) out << t.source << ',' << t.target << ',' << t.count << '\n';
}

void cmd_run(const PipelineConfig& config) {
  const auto c = checked(config);
  if (c.data.input.empty()) cmd_synth(c);
  cmd_embed(c);
  cmd_represent(c);
  const bool deep = c.cluster.representation == Representation::deep;
  if (deep && c.measure == Measure::cnn) cmd_train(c);
  if (deep) cmd_sim(c);
  cmd_cluster(c);
  cmd_eval(c);
}

}  // namespace patsim
