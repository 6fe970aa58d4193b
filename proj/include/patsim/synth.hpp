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
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "patsim/ehr.hpp"

namespace patsim {

/// Parameters of the synthetic multi-cohort event generator.
///
/// Each cohort draws events from a mixture of background codes shared by every
/// cohort and a pool of codes private to the cohort. A small head of every private
/// pool is labelled as the cohort's identifier codes. Chronic codes recur across a
/// patient's visits, so their within-patient frequency is well above that of acute
/// codes.
struct SynthConfig {
  std::size_t n_cohorts = 4;
  std::size_t patients_per_cohort = 2000;
  std::size_t vocab_size = 6064;
  double shared_vocab_frac = 0.6;
  double cohort_specific_frac = 0.1;  // per cohort
  std::size_t mean_events_per_patient = 124;
  std::pair<std::size_t, std::size_t> visits_per_patient_range{8, 30};
  double chronic_frac = 0.02;
  std::uint64_t seed = 1;

  // Signal controls.
  double specific_event_rate = 0.15;   // share of acute events drawn from the cohort pool
  double identifier_frac = 0.05;       // share of each cohort pool that are identifiers
  double identifier_mass = 0.5;        // share of cohort-pool draws that hit identifiers
  std::size_t chronic_per_patient = 2;
  double chronic_visit_frac = 0.2;     // share of visits carrying each chronic code
  double background_zipf = 0.5;        // exponent of the background code weights
  double specific_zipf = 0.5;          // exponent of the non-identifier cohort code weights

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

struct GroundTruth {
  std::map<std::string, std::string> cohorts;                        // patient -> cohort
  std::map<std::string, std::vector<std::string>> identifier_codes;  // cohort -> codes
  std::vector<std::string> chronic_codes;

  bool operator==(const GroundTruth&) const = default;
};

struct SynthDataset {
  std::vector<PatientRecord> records;
  GroundTruth truth;
};

/// Deterministic in `config.seed`.
SynthDataset generate(const SynthConfig& config);

/// Removes every event whose code is an identifier of any cohort, drops emptied
/// visits and records left with fewer than `min_events` events.
std::vector<PatientRecord> strip_identifiers(std::span<const PatientRecord> records,
                                             const GroundTruth& truth,
                                             std::size_t min_events = kDefaultMinEvents);

void write_truth(std::ostream& out, const GroundTruth& truth);
void write_truth(const std::filesystem::path& path, const GroundTruth& truth);
GroundTruth read_truth(std::istream& in);
GroundTruth read_truth(const std::filesystem::path& path);

}  // namespace patsim
