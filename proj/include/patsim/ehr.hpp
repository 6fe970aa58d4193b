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

#include <chrono>
#include <compare>
#include <functional>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace patsim {

/// Calendar date with day resolution.
class Date {
 public:
  Date() = default;
  explicit Date(std::chrono::sys_days days) : days_(days) {}

  /// Throws std::invalid_argument unless `text` is a valid "YYYY-MM-DD".
  static Date parse(std::string_view text);
  static Date from_ymd(int year, unsigned month, unsigned day);

  std::chrono::sys_days days() const noexcept { return days_; }
  std::string to_string() const;

  auto operator<=>(const Date&) const = default;

 private:
  std::chrono::sys_days days_{};
};

enum class EventKind { diagnosis, medication, other };

std::string_view to_string(EventKind kind);
/// Throws std::invalid_argument on an unknown kind name.
EventKind parse_event_kind(std::string_view text);

struct MedicalEvent {
  std::string code;
  Date timestamp;
  EventKind kind = EventKind::diagnosis;

  bool operator==(const MedicalEvent&) const = default;
};

/// All events of one patient sharing a calendar date. Events are kept sorted by code.
struct Visit {
  Date date;
  std::vector<MedicalEvent> events;

  bool operator==(const Visit&) const = default;
};

struct PatientRecord {
  std::string patient_id;
  std::vector<Visit> visits;  // strictly ascending by date
  std::optional<std::string> cohort;

  std::size_t event_count() const;
  /// Event codes in time order, visit by visit.
  std::vector<std::string_view> event_sequence() const;

  bool operator==(const PatientRecord&) const = default;
};

/// Groups loose events into visits: one visit per date, visits sorted, events within
/// a visit sorted by code, repeated (date, code) pairs collapsed to the first seen.
PatientRecord assemble_record(std::string patient_id, std::vector<MedicalEvent> events,
                              std::optional<std::string> cohort = std::nullopt);

struct CodeCounts {
  std::size_t patients = 0;     // number of records containing the code
  std::size_t occurrences = 0;  // total events carrying the code

  bool operator==(const CodeCounts&) const = default;
};

/// Dense index space over event codes.
class Vocabulary {
 public:
  Vocabulary() = default;
  /// Throws PreconditionError on duplicate codes or a size mismatch.
  Vocabulary(std::vector<std::string> codes, std::vector<CodeCounts> counts);

  /// Every code seen in `records`, sorted lexicographically, with counts.
  static Vocabulary from_records(std::span<const PatientRecord> records);

  std::size_t size() const noexcept { return codes_.size(); }
  bool empty() const noexcept { return codes_.empty(); }
  const std::string& code(std::size_t index) const { return codes_.at(index); }
  const CodeCounts& counts(std::size_t index) const { return counts_.at(index); }
  const std::vector<std::string>& codes() const noexcept { return codes_; }
  std::optional<std::size_t> index_of(std::string_view code) const;
  bool contains(std::string_view code) const { return index_of(code).has_value(); }

 private:
  std::vector<std::string> codes_;
  std::vector<CodeCounts> counts_;
  struct CodeHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const noexcept {
      return std::hash<std::string_view>{}(s);
    }
  };
  std::unordered_map<std::string, std::size_t, CodeHash, std::equal_to<>> index_;
};

enum class EventFormat { jsonl, csv };

/// Picks the format from the file extension (".csv" or anything else as JSONL).
EventFormat format_for_path(const std::filesystem::path& path);

std::vector<PatientRecord> parse_events(std::istream& in, EventFormat format);
std::vector<PatientRecord> parse_events(const std::filesystem::path& path, EventFormat format);

void write_events(std::ostream& out, std::span<const PatientRecord> records, EventFormat format);
void write_events(const std::filesystem::path& path, std::span<const PatientRecord> records,
                  EventFormat format);

inline constexpr double kDefaultMaxPatientFrac = 0.90;
inline constexpr std::size_t kDefaultMinPatientCount = 5;
inline constexpr std::size_t kDefaultMinEvents = 40;

/// Keeps codes whose patient support s satisfies
/// min_patient_count <= s <= max_patient_frac * records.size().
Vocabulary filter_vocabulary(std::span<const PatientRecord> records,
                             double max_patient_frac = kDefaultMaxPatientFrac,
                             std::size_t min_patient_count = kDefaultMinPatientCount);

/// Removes out-of-vocabulary events and empty visits, then drops records with fewer
/// than `min_events` remaining events.
std::vector<PatientRecord> filter_patients(std::span<const PatientRecord> records,
                                           std::size_t min_events, const Vocabulary& vocabulary);

}  // namespace patsim
