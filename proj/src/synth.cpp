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

#include "patsim/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "patsim/errors.hpp"

namespace patsim {

using json = nlohmann::json;

void SynthConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("synth: " + what); };
  if (n_cohorts == 0) fail("n_cohorts must be positive");
  if (patients_per_cohort == 0) fail("patients_per_cohort must be positive");
  if (vocab_size == 0) fail("vocab_size must be positive");
  if (mean_events_per_patient == 0) fail("mean_events_per_patient must be positive");
  if (visits_per_patient_range.first == 0 ||
      visits_per_patient_range.first > visits_per_patient_range.second) {
    fail("visits_per_patient_range must satisfy 1 <= min <= max");
  }
  if (visits_per_patient_range.second > 4 * 365) fail("more visits than days in the span");
  auto is_frac = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!is_frac(shared_vocab_frac) || !is_frac(cohort_specific_frac) || !is_frac(chronic_frac)) {
    fail("vocabulary fractions must lie in [0, 1]");
  }
  if (shared_vocab_frac + static_cast<double>(n_cohorts) * cohort_specific_frac > 1.0 + 1e-12) {
    fail("shared_vocab_frac + n_cohorts * cohort_specific_frac exceeds 1");
  }
  if (!is_frac(specific_event_rate) || !is_frac(identifier_frac) || !is_frac(identifier_mass) ||
      !is_frac(chronic_visit_frac)) {
    fail("signal rates must lie in [0, 1]");
  }
  if (background_zipf < 0.0 || specific_zipf < 0.0) fail("Zipf exponents must be nonnegative");

  const auto n_specific = static_cast<std::size_t>(std::llround(cohort_specific_frac * vocab_size));
  if (specific_event_rate > 0.0 && n_specific == 0) {
    fail("specific_event_rate > 0 requires cohort-specific codes");
  }
  const auto n_chronic = static_cast<std::size_t>(std::llround(chronic_frac * vocab_size));
  if (chronic_per_patient > n_chronic) fail("chronic_per_patient exceeds the chronic code pool");
  if (n_chronic + n_cohorts * n_specific >= vocab_size) fail("no codes left for the background pool");
}

namespace {

std::string cohort_name(std::size_t c, std::size_t n_cohorts) {
  static const char* kNames[] = {"COPD", "Diabetes", "Obesity", "HeartFailure"};
  if (n_cohorts <= 4) return kNames[c];
  return "cohort_" + std::to_string(c);
}

std::string numbered(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
  return buf;
}

EventKind kind_for(std::size_t i) { return i % 3 == 2 ? EventKind::medication : EventKind::diagnosis; }

struct CodeEntry {
  std::string code;
  EventKind kind;
};

}  // namespace

SynthDataset generate(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);

  const auto V = config.vocab_size;
  const auto n_specific = static_cast<std::size_t>(std::llround(config.cohort_specific_frac * V));
  const auto n_chronic = static_cast<std::size_t>(std::llround(config.chronic_frac * V));
  const auto n_background = V - n_chronic - config.n_cohorts * n_specific;

  // Background: shared codes plus whatever the cohort pools leave over, Zipf weighted.
  std::vector<CodeEntry> background, chronic;
  std::vector<std::vector<CodeEntry>> specific(config.n_cohorts);
  std::size_t serial = 0;
  for (std::size_t i = 0; i < n_background; ++i, ++serial) {
    background.push_back({numbered("B", i), kind_for(serial)});
  }
  for (std::size_t i = 0; i < n_chronic; ++i, ++serial) {
    chronic.push_back({numbered("K", i), kind_for(serial)});
  }
  GroundTruth truth;
  const std::size_t n_identifiers =
      n_specific == 0 ? 0
                      : std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(
                                                    config.identifier_frac * n_specific)),
                                                config.identifier_frac > 0 ? 1 : 0, n_specific);
  for (std::size_t c = 0; c < config.n_cohorts; ++c) {
    const auto name = cohort_name(c, config.n_cohorts);
    auto& ids = truth.identifier_codes[name];
    for (std::size_t i = 0; i < n_specific; ++i, ++serial) {
      specific[c].push_back({numbered(("C" + std::to_string(c) + "-").c_str(), i), kind_for(serial)});
      if (i < n_identifiers) ids.push_back(specific[c].back().code);
    }
  }
  for (const auto& e : chronic) truth.chronic_codes.push_back(e.code);

  std::vector<double> weights(n_background);
  for (std::size_t i = 0; i < n_background; ++i) {
    weights[i] = 1.0 / std::pow(static_cast<double>(i + 1), config.background_zipf);
  }
  std::shuffle(weights.begin(), weights.end(), rng);
  std::discrete_distribution<std::size_t> pick_background(weights.begin(), weights.end());

  std::vector<std::discrete_distribution<std::size_t>> pick_specific;
  if (n_specific > n_identifiers) {
    std::vector<double> w(n_specific - n_identifiers);
    for (std::size_t c = 0; c < config.n_cohorts; ++c) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = 1.0 / std::pow(static_cast<double>(i + 1), config.specific_zipf);
      std::shuffle(w.begin(), w.end(), rng);
      pick_specific.emplace_back(w.begin(), w.end());
    }
  }

  const auto [vmin, vmax] = config.visits_per_patient_range;
  const auto lo_events = static_cast<std::size_t>(std::llround(0.75 * config.mean_events_per_patient));
  const auto hi_events = static_cast<std::size_t>(std::llround(1.25 * config.mean_events_per_patient));
  const Date origin = Date::from_ymd(2012, 1, 1);
  constexpr int kSpanDays = 4 * 365;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform_index = [&](std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  };

  SynthDataset out;
  const std::size_t n_patients = config.n_cohorts * config.patients_per_cohort;
  out.records.reserve(n_patients);
  for (std::size_t p = 0; p < n_patients; ++p) {
    const std::size_t c = p % config.n_cohorts;
    const auto cohort = cohort_name(c, config.n_cohorts);
    const auto id = numbered("P", p + 1);

    const std::size_t n_visits = std::uniform_int_distribution<std::size_t>(vmin, vmax)(rng);
    std::set<int> offsets;
    while (offsets.size() < n_visits) offsets.insert(std::uniform_int_distribution<int>(0, kSpanDays - 1)(rng));
    std::vector<Date> dates;
    for (int off : offsets) dates.emplace_back(origin.days() + std::chrono::days{off});

    std::vector<std::unordered_set<std::string_view>> used(n_visits);
    std::vector<MedicalEvent> events;
    auto emit = [&](std::size_t visit, const CodeEntry& entry) {
      if (!used[visit].insert(entry.code).second) return false;
      events.push_back(MedicalEvent{entry.code, dates[visit], entry.kind});
      return true;
    };

    // Chronic codes: each one recurs on a fixed share of the visits, at least three.
    std::vector<std::size_t> chronic_pick(chronic.size());
    for (std::size_t i = 0; i < chronic.size(); ++i) chronic_pick[i] = i;
    std::shuffle(chronic_pick.begin(), chronic_pick.end(), rng);
    std::vector<std::size_t> visit_order(n_visits);
    for (std::size_t k = 0; k < config.chronic_per_patient; ++k) {
      const auto& entry = chronic[chronic_pick[k]];
      const auto wanted = std::clamp<std::size_t>(
          static_cast<std::size_t>(std::llround(config.chronic_visit_frac * n_visits)), 3, n_visits);
      for (std::size_t v = 0; v < n_visits; ++v) visit_order[v] = v;
      std::shuffle(visit_order.begin(), visit_order.end(), rng);
      for (std::size_t v = 0; v < wanted; ++v) emit(visit_order[v], entry);
    }

    const std::size_t target = std::max(
        std::uniform_int_distribution<std::size_t>(lo_events, hi_events)(rng), events.size() + n_visits);
    auto draw_acute = [&]() -> const CodeEntry& {
      if (unit(rng) < config.specific_event_rate) {
        const auto& pool = specific[c];
        if (n_identifiers > 0 && (n_identifiers == pool.size() || unit(rng) < config.identifier_mass)) {
          return pool[uniform_index(n_identifiers)];
        }
        return pool[n_identifiers + pick_specific[c](rng)];
      }
      return background[pick_background(rng)];
    };
    std::size_t slot = 0;
    const std::size_t max_slots = 20 * target + n_visits;
    while (events.size() < target && slot < max_slots) {
      // Visits left empty by the chronic pass are filled first.
      std::size_t visit = slot < n_visits ? slot : uniform_index(n_visits);
      if (slot < n_visits && !used[visit].empty()) {
        ++slot;
        continue;
      }
      ++slot;
      for (int attempt = 0; attempt < 10; ++attempt) {
        if (emit(visit, draw_acute())) break;
      }
    }
    out.truth.cohorts[id] = cohort;
    out.records.push_back(assemble_record(id, std::move(events), cohort));
  }
  out.truth.identifier_codes = std::move(truth.identifier_codes);
  out.truth.chronic_codes = std::move(truth.chronic_codes);
  return out;
}

std::vector<PatientRecord> strip_identifiers(std::span<const PatientRecord> records,
                                             const GroundTruth& truth, std::size_t min_events) {
  std::unordered_set<std::string_view> identifiers;
  for (const auto& [cohort, codes] : truth.identifier_codes) {
    for (const auto& code : codes) identifiers.insert(code);
  }
  std::vector<PatientRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!truth.cohorts.contains(r.patient_id)) {
      throw PreconditionError("ground truth has no cohort for patient '" + r.patient_id + "'");
    }
    PatientRecord kept{r.patient_id, {}, r.cohort};
    for (const auto& v : r.visits) {
      Visit visit{v.date, {}};
      for (const auto& e : v.events) {
        if (!identifiers.contains(e.code)) visit.events.push_back(e);
      }
      if (!visit.events.empty()) kept.visits.push_back(std::move(visit));
    }
    if (!kept.visits.empty() && kept.event_count() >= min_events) out.push_back(std::move(kept));
  }
  return out;
}

void write_truth(std::ostream& out, const GroundTruth& truth) {
  json doc;
  doc["cohorts"] = truth.cohorts;
  doc["identifier_codes"] = truth.identifier_codes;
  doc["chronic_codes"] = truth.chronic_codes;
  out << doc.dump(2) << '\n';
}

void write_truth(const std::filesystem::path& path, const GroundTruth& truth) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write truth file '" + path.string() + "'");
  write_truth(out, truth);
}

GroundTruth read_truth(std::istream& in) {
  GroundTruth truth;
  try {
    const auto doc = json::parse(in);
    truth.cohorts = doc.at("cohorts").get<std::map<std::string, std::string>>();
    truth.identifier_codes =
        doc.at("identifier_codes").get<std::map<std::string, std::vector<std::string>>>();
    if (doc.contains("chronic_codes")) {
      truth.chronic_codes = doc["chronic_codes"].get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("truth file: ") + e.what());
  }
  return truth;
}

GroundTruth read_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open truth file '" + path.string() + "'");
  return read_truth(in);
}

}  // namespace patsim
