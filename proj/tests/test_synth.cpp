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

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "patsim/errors.hpp"
#include "patsim/synth.hpp"

using namespace patsim;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.n_cohorts = 3;
  c.patients_per_cohort = 40;
  c.vocab_size = 600;
  c.mean_events_per_patient = 80;
  return c;
}

std::string serialize(const SynthDataset& ds) {
  std::ostringstream out;
  write_events(out, ds.records, EventFormat::jsonl);
  write_truth(out, ds.truth);
  return out.str();
}

std::set<std::string> code_set(const PatientRecord& r) {
  std::set<std::string> s;
  for (auto c : r.event_sequence()) s.emplace(c);
  return s;
}

}  // namespace

TEST(Generate, SameSeedIsByteIdentical) {
  const auto c = small_config();
  EXPECT_EQ(serialize(generate(c)), serialize(generate(c)));
  auto other = c;
  other.seed = 2;
  EXPECT_NE(serialize(generate(c)), serialize(generate(other)));
}

TEST(Generate, ShapeAndEventCounts) {
  const auto c = small_config();
  const auto ds = generate(c);
  ASSERT_EQ(ds.records.size(), 120u);
  EXPECT_EQ(ds.truth.cohorts.size(), 120u);
  double total = 0;
  for (const auto& r : ds.records) {
    total += static_cast<double>(r.event_count());
    EXPECT_GE(r.visits.size(), c.visits_per_patient_range.first);
    EXPECT_LE(r.visits.size(), c.visits_per_patient_range.second);
    ASSERT_TRUE(r.cohort.has_value());
    EXPECT_EQ(*r.cohort, ds.truth.cohorts.at(r.patient_id));
  }
  EXPECT_NEAR(total / 120.0, 80.0, 8.0);
}

TEST(Generate, FullScaleDefaults) {
  const SynthConfig c;
  EXPECT_EQ(c.n_cohorts, 4u);
  EXPECT_EQ(c.patients_per_cohort, 2000u);
  EXPECT_EQ(c.vocab_size, 6064u);
  EXPECT_EQ(c.mean_events_per_patient, 124u);
}

TEST(Generate, SingleCohortMapsEveryone) {
  auto c = small_config();
  c.n_cohorts = 1;
  c.shared_vocab_frac = 0.5;
  const auto ds = generate(c);
  std::set<std::string> labels;
  for (const auto& [p, cohort] : ds.truth.cohorts) labels.insert(cohort);
  EXPECT_EQ(labels.size(), 1u);
}

TEST(Generate, CohortCodesStayInTheirCohort) {
  const auto ds = generate(small_config());
  for (const auto& r : ds.records) {
    const auto& cohort = ds.truth.cohorts.at(r.patient_id);
    for (const auto& [name, codes] : ds.truth.identifier_codes) {
      for (const auto& code : codes) {
        if (name != cohort) EXPECT_FALSE(code_set(r).contains(code));
      }
    }
    // Every cohort-pool code carries the prefix of exactly one cohort.
    std::set<std::string> prefixes;
    for (const auto& code : code_set(r)) {
      if (code[0] == 'C') prefixes.insert(code.substr(0, code.find('-')));
    }
    EXPECT_LE(prefixes.size(), 1u);
  }
}

TEST(Generate, ChronicCodesRecur) {
  const auto ds = generate(small_config());
  const std::set<std::string> chronic(ds.truth.chronic_codes.begin(), ds.truth.chronic_codes.end());
  std::size_t seen = 0;
  for (const auto& r : ds.records) {
    std::map<std::string, int> f;
    for (auto c : r.event_sequence()) ++f[std::string(c)];
    for (const auto& [code, n] : f) {
      if (chronic.contains(code)) {
        EXPECT_GE(n, 3) << code;
        ++seen;
      }
    }
  }
  EXPECT_GT(seen, 0u);
}

TEST(Generate, CohortLabelInformativeOfSpecificCodes) {
  // Mutual information between the cohort and the presence of each cohort's identifiers.
  const auto ds = generate(small_config());
  for (const auto& [name, codes] : ds.truth.identifier_codes) {
    double joint[2][2] = {{0, 0}, {0, 0}};
    for (const auto& r : ds.records) {
      const auto s = code_set(r);
      bool has = false;
      for (const auto& code : codes) has = has || s.contains(code);
      joint[ds.truth.cohorts.at(r.patient_id) == name][has] += 1;
    }
    const double n = static_cast<double>(ds.records.size());
    double mi = 0;
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        if (joint[a][b] == 0) continue;
        const double pa = (joint[a][0] + joint[a][1]) / n, pb = (joint[0][b] + joint[1][b]) / n;
        mi += joint[a][b] / n * std::log(joint[a][b] / n / (pa * pb));
      }
    }
    EXPECT_GT(mi, 0.05) << name;
  }
}

TEST(SynthConfig, RejectsInconsistentFractions) {
  auto c = small_config();
  c.shared_vocab_frac = 0.8;
  c.cohort_specific_frac = 0.1;
  EXPECT_THROW(generate(c), ConfigError);
  c = small_config();
  c.patients_per_cohort = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.visits_per_patient_range = {5, 3};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(StripIdentifiers, RemovesExactlyTheIdentifierCodes) {
  const auto ds = generate(small_config());
  std::set<std::string> ids;
  for (const auto& [n, codes] : ds.truth.identifier_codes) ids.insert(codes.begin(), codes.end());
  const auto stripped = strip_identifiers(ds.records, ds.truth, 0);
  ASSERT_EQ(stripped.size(), ds.records.size());
  for (std::size_t i = 0; i < stripped.size(); ++i) {
    std::multiset<std::string> expected;
    for (auto c : ds.records[i].event_sequence()) {
      if (!ids.contains(std::string(c))) expected.emplace(c);
    }
    std::multiset<std::string> got;
    for (auto c : stripped[i].event_sequence()) got.emplace(c);
    EXPECT_EQ(got, expected);
  }
}

TEST(StripIdentifiers, DatasetShrinksSlightly) {
  auto c = small_config();
  c.specific_event_rate = 0.3;
  const auto ds = generate(c);
  const auto stripped = strip_identifiers(ds.records, ds.truth, 70);
  std::size_t before = 0;
  for (const auto& r : ds.records) before += r.event_count() >= 70;
  EXPECT_LT(stripped.size(), before);
  EXPECT_GT(stripped.size(), 0u);
}

TEST(StripIdentifiers, EmptyIdentifierListsChangeNothing) {
  const auto ds = generate(small_config());
  GroundTruth truth = ds.truth;
  for (auto& [n, codes] : truth.identifier_codes) codes.clear();
  EXPECT_EQ(strip_identifiers(ds.records, truth, 0), ds.records);
}

TEST(StripIdentifiers, PatientOfOnlyIdentifiersIsDropped) {
  GroundTruth truth;
  truth.cohorts = {{"a", "X"}, {"b", "X"}};
  truth.identifier_codes["X"] = {"ID"};
  const auto d = Date::from_ymd(2015, 1, 1);
  const std::vector<PatientRecord> recs{assemble_record("a", {{"ID", d, EventKind::diagnosis}}),
                                        assemble_record("b", {{"ID", d, EventKind::diagnosis},
                                                              {"Z", d, EventKind::diagnosis}})};
  const auto out = strip_identifiers(recs, truth, 0);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].patient_id, "b");
}

TEST(StripIdentifiers, UnknownPatientIsAPreconditionError) {
  const auto ds = generate(small_config());
  GroundTruth truth = ds.truth;
  truth.cohorts.erase(ds.records.front().patient_id);
  EXPECT_THROW(strip_identifiers(ds.records, truth, 0), PreconditionError);
}

TEST(Truth, RoundTrip) {
  const auto ds = generate(small_config());
  std::stringstream s;
  write_truth(s, ds.truth);
  EXPECT_EQ(read_truth(s), ds.truth);
  std::istringstream bad("{\"cohorts\": 3}");
  EXPECT_THROW(read_truth(bad), FormatError);
}
