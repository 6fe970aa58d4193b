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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "patsim/cluster.hpp"
#include "patsim/ehr.hpp"
#include "patsim/embedding.hpp"
#include "patsim/matcher.hpp"
#include "patsim/representation.hpp"
#include "patsim/similarity.hpp"
#include "patsim/synth.hpp"

namespace patsim {

enum class Representation { onehot, shallow, deep };

std::string_view to_string(Representation r);
Representation parse_representation(std::string_view text);

struct DataConfig {
  std::filesystem::path input;  // empty: the synth output in the run directory
  double max_patient_frac = kDefaultMaxPatientFrac;
  std::size_t min_patient_count = kDefaultMinPatientCount;
  std::size_t min_events = kDefaultMinEvents;
  bool strip_identifiers = false;
  double train_frac = 0.45;
  double test_frac = 0.45;
  double dev_frac = 0.10;
};

struct ClusterConfig {
  Representation representation = Representation::deep;
  std::size_t k = 0;  // 0: number of cohorts among the clustered patients
  std::size_t max_iters = kDefaultKMeansIters;
  bool normalize_rows = false;  // center columns, then unit L2 norm per patient vector
};

enum class SweepParam { d, w, m, all };

struct SweepConfig {
  SweepParam param = SweepParam::all;
  std::vector<std::size_t> d_grid{20, 30, 50, 200, 500};
  std::vector<std::size_t> w_grid{5, 10, 15, 20, 25};
  std::vector<std::size_t> m_grid{50, 100, 150, 200};
};

struct PathwaysConfig {
  std::string cohort = "COPD";
  std::size_t top_k = 100;
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = "patsim_out";
  SynthConfig synth;
  DataConfig data;
  EmbeddingConfig embedding;
  RepresentOptions represent;
  MatcherConfig matcher;
  Measure measure = Measure::cnn;
  ClusterConfig cluster;
  SweepConfig sweep;
  PathwaysConfig pathways;

  /// Copies the global seed into every module and the embedding size into the matcher.
  PipelineConfig resolved() const;
  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// Every configurable key, as "section.key" (top-level keys have no section).
struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(PipelineConfig&, std::string_view)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

const std::vector<ConfigKey>& config_keys();

/// Sets one key; unknown keys and malformed values raise ConfigError naming the key.
void set_config_value(PipelineConfig& config, std::string_view key, std::string_view value);

/// Flat INI: "[section]" headers, "key = value" lines, '#' or ';' comments.
void apply_config(PipelineConfig& config, std::istream& in);
void apply_config_file(PipelineConfig& config, const std::filesystem::path& path);
void write_config(std::ostream& out, const PipelineConfig& config);

enum class Split { train, test, dev };

std::string_view to_string(Split s);
Split parse_split(std::string_view text);

/// Patient-level split stratified by cohort; cohorts are processed in sorted order.
std::vector<Split> stratified_split(std::span<const std::string> cohorts, const DataConfig& data,
                                    std::uint64_t seed);

struct Dataset {
  std::vector<PatientRecord> records;
  std::vector<std::string> cohorts;  // per record
  std::vector<Split> splits;         // per record

  std::vector<std::size_t> indices(Split s) const;
};

/// Frequency filters, optional identifier removal, then the split. Cohorts come from
/// the records, falling back to `truth`.
Dataset prepare_dataset(std::span<const PatientRecord> raw, const GroundTruth* truth, const PipelineConfig& config);

/// Embeddings over every patient, then records restricted to the learned vocabulary.
EmbeddingTable embed_dataset(Dataset& dataset, const PipelineConfig& config);

std::vector<PatientMatrix> represent_dataset(const Dataset& dataset, const EmbeddingTable& table,
                                             const PipelineConfig& config);

TrainedMatcher train_on_dataset(const Dataset& dataset, std::span<const PatientMatrix> matrices,
                                const PipelineConfig& config);

/// Similarity over the test split.
SimilarityMatrix test_similarity(const Dataset& dataset, std::span<const PatientMatrix> matrices, Measure measure,
                                 const MatcherModel* model);

struct Assignment {
  std::vector<std::string> patient_ids;
  std::vector<std::size_t> clusters;
  std::size_t k = 0;
};

/// k-means over per-patient vectors of the test split (visit counts or summed embeddings).
Assignment cluster_vectors(const Dataset& dataset, const EmbeddingTable& table, Representation representation,
                           const PipelineConfig& config);
Assignment cluster_similarity(const SimilarityMatrix& sim, std::size_t k, const PipelineConfig& config);

EvaluationReport evaluate_assignment(const Assignment& assignment,
                                     const std::map<std::string, std::string>& cohorts, std::uint64_t seed);

std::map<std::string, std::string> cohort_map(const Dataset& dataset);

/// Test-split cohort count, or config.cluster.k when set.
std::size_t cluster_count(const Dataset& dataset, const PipelineConfig& config);

struct SweepRow {
  std::string param;
  std::size_t value = 0;
  std::size_t d = 0, w = 0, m = 0;
  EvaluationReport report;
};

struct PathwayCount {
  std::string source;
  std::string target;
  std::size_t count = 0;
};

/// Mean similarity of each member to the others; the top_k highest are kept.
std::vector<std::size_t> most_similar_members(const SimilarityMatrix& sim, std::span<const std::size_t> members,
                                              std::size_t top_k);
std::vector<PathwayCount> event_transitions(std::span<const PatientRecord> records);

/// File names inside the run directory.
struct Artifacts {
  std::filesystem::path root;

  std::filesystem::path events() const { return root / "events.jsonl"; }
  std::filesystem::path truth() const { return root / "truth.json"; }
  std::filesystem::path dataset() const { return root / "dataset.jsonl"; }
  std::filesystem::path split() const { return root / "split.csv"; }
  std::filesystem::path embeddings() const { return root / "embeddings.txt"; }
  std::filesystem::path matrices() const { return root / "matrices.txt"; }
  std::filesystem::path model() const { return root / "model.txt"; }
  std::filesystem::path similarity() const { return root / "similarity.csv"; }
  std::filesystem::path clusters() const { return root / "clusters.csv"; }
  std::filesystem::path report() const { return root / "report.json"; }
  std::filesystem::path sweep() const { return root / "sweep.csv"; }
  std::filesystem::path pathways() const { return root / "pathways.csv"; }
};

void cmd_synth(const PipelineConfig& config);
void cmd_embed(const PipelineConfig& config);
void cmd_represent(const PipelineConfig& config);
void cmd_train(const PipelineConfig& config);
void cmd_sim(const PipelineConfig& config);
void cmd_cluster(const PipelineConfig& config);
void cmd_eval(const PipelineConfig& config);
std::vector<SweepRow> cmd_sweep(const PipelineConfig& config);
void cmd_pathways(const PipelineConfig& config);
/// synth (unless data.input is set), embed, represent, train, sim, cluster, eval.
void cmd_run(const PipelineConfig& config);

}  // namespace patsim
