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

#include "patsim/ehr.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "patsim/errors.hpp"

namespace patsim {

using json = nlohmann::json;

namespace {

int parse_int(std::string_view text, std::string_view what) {
  int value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw std::invalid_argument("bad " + std::string(what) + " in date");
  }
  return value;
}

}  // namespace

Date Date::parse(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
    throw std::invalid_argument("invalid date '" + std::string(text) + "', expected YYYY-MM-DD");
  }
  const int y = parse_int(text.substr(0, 4), "year");
  const int m = parse_int(text.substr(5, 2), "month");
  const int d = parse_int(text.substr(8, 2), "day");
  if (m < 1 || d < 1) {
    throw std::invalid_argument("invalid date '" + std::string(text) + "'");
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y},
                                        std::chrono::month{static_cast<unsigned>(m)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) {
    throw std::invalid_argument("invalid date '" + std::string(text) + "'");
  }
  return Date{std::chrono::sys_days{ymd}};
}

Date Date::from_ymd(int year, unsigned month, unsigned day) {
  const std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                                        std::chrono::day{day}};
  if (!ymd.ok()) throw std::invalid_argument("invalid calendar date");
  return Date{std::chrono::sys_days{ymd}};
}

std::string Date::to_string() const {
  const std::chrono::year_month_day ymd{days_};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::diagnosis:
      return "diagnosis";
    case EventKind::medication:
      return "medication";
    case EventKind::other:
      return "other";
  }
  return "other";
}

EventKind parse_event_kind(std::string_view text) {
  if (text == "diagnosis") return EventKind::diagnosis;
  if (text == "medication") return EventKind::medication;
  if (text == "other") return EventKind::other;
  throw std::invalid_argument("unknown event kind '" + std::string(text) + "'");
}

std::size_t PatientRecord::event_count() const {
  std::size_t n = 0;
  for (const auto& v : visits) n += v.events.size();
  return n;
}

std::vector<std::string_view> PatientRecord::event_sequence() const {
  std::vector<std::string_view> seq;
  seq.reserve(event_count());
  for (const auto& v : visits) {
    for (const auto& e : v.events) seq.emplace_back(e.code);
  }
  return seq;
}

PatientRecord assemble_record(std::string patient_id, std::vector<MedicalEvent> events,
                              std::optional<std::string> cohort) {
  // stable: the first instance of a duplicated (date, code) wins
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.code < b.code;
  });
  events.erase(std::unique(events.begin(), events.end(),
                           [](const auto& a, const auto& b) {
                             return a.timestamp == b.timestamp && a.code == b.code;
                           }),
               events.end());

  PatientRecord record{std::move(patient_id), {}, std::move(cohort)};
  for (auto& e : events) {
    if (record.visits.empty() || record.visits.back().date != e.timestamp) {
      record.visits.push_back(Visit{e.timestamp, {}});
    }
    record.visits.back().events.push_back(std::move(e));
  }
  return record;
}

Vocabulary::Vocabulary(std::vector<std::string> codes, std::vector<CodeCounts> counts)
    : codes_(std::move(codes)), counts_(std::move(counts)) {
  if (codes_.size() != counts_.size()) {
    throw PreconditionError("vocabulary: codes and counts differ in length");
  }
  index_.reserve(codes_.size());
  for (std::size_t i = 0; i < codes_.size(); ++i) {
    if (codes_[i].empty()) throw PreconditionError("vocabulary: empty code");
    if (!index_.emplace(codes_[i], i).second) {
      throw PreconditionError("vocabulary: duplicate code '" + codes_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::from_records(std::span<const PatientRecord> records) {
  std::map<std::string, CodeCounts, std::less<>> tally;
  std::vector<std::string_view> seen;
  for (const auto& r : records) {
    seen.clear();
    for (const auto& v : r.visits) {
      for (const auto& e : v.events) {
        tally[e.code].occurrences += 1;
        seen.emplace_back(e.code);
      }
    }
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    for (auto code : seen) tally.find(code)->second.patients += 1;
  }
  std::vector<std::string> codes;
  std::vector<CodeCounts> counts;
  codes.reserve(tally.size());
  counts.reserve(tally.size());
  for (auto& [code, c] : tally) {
    codes.push_back(code);
    counts.push_back(c);
  }
  return Vocabulary(std::move(codes), std::move(counts));
}

std::optional<std::size_t> Vocabulary::index_of(std::string_view code) const {
  auto it = index_.find(code);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

EventFormat format_for_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? EventFormat::csv : EventFormat::jsonl;
}

namespace {

struct RawEvent {
  std::string patient_id;
  MedicalEvent event;
  std::optional<std::string> cohort;
};

class RecordBuilder {
 public:
  void add(RawEvent raw, std::size_t line) {
    if (raw.patient_id.empty()) throw ParseError(line, "empty patient_id");
    if (raw.event.code.empty()) throw ParseError(line, "empty code");
    auto [it, inserted] = slot_.emplace(raw.patient_id, pending_.size());
    if (inserted) {
      pending_.push_back(Pending{raw.patient_id, {}, raw.cohort});
    }
    auto& p = pending_[it->second];
    if (raw.cohort) {
      if (p.cohort && *p.cohort != *raw.cohort) {
        throw ParseError(line, "patient '" + raw.patient_id + "' has conflicting cohort labels '" +
                                   *p.cohort + "' and '" + *raw.cohort + "'");
      }
      p.cohort = raw.cohort;
    }
    p.events.push_back(std::move(raw.event));
  }

  std::vector<PatientRecord> finish() {
    std::vector<PatientRecord> out;
    out.reserve(pending_.size());
    for (auto& p : pending_) {
      out.push_back(assemble_record(std::move(p.id), std::move(p.events), std::move(p.cohort)));
    }
    return out;
  }

 private:
  struct Pending {
    std::string id;
    std::vector<MedicalEvent> events;
    std::optional<std::string> cohort;
  };
  std::unordered_map<std::string, std::size_t> slot_;
  std::vector<Pending> pending_;
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

std::vector<std::string> split_csv(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          fields.back().push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        fields.back().push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back().push_back(c);
    }
  }
  if (quoted) throw ParseError(line_no, "unterminated quoted field");
  return fields;
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

Date parse_date_at(std::string_view text, std::size_t line) {
  try {
    return Date::parse(text);
  } catch (const std::invalid_argument& e) {
    throw ParseError(line, e.what());
  }
}

EventKind parse_kind_at(std::string_view text, std::size_t line) {
  try {
    return parse_event_kind(text);
  } catch (const std::invalid_argument& e) {
    throw ParseError(line, e.what());
  }
}

std::vector<PatientRecord> parse_jsonl(std::istream& in) {
  RecordBuilder builder;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(line_no, "expected a JSON object");
    auto get_string = [&](const char* key, bool required) -> std::optional<std::string> {
      auto it = obj.find(key);
      if (it == obj.end() || it->is_null()) {
        if (required) throw ParseError(line_no, std::string("missing field '") + key + "'");
        return std::nullopt;
      }
      if (!it->is_string()) throw ParseError(line_no, std::string("field '") + key + "' must be a string");
      return it->get<std::string>();
    };
    RawEvent raw;
    raw.patient_id = *get_string("patient_id", true);
    raw.event.timestamp = parse_date_at(*get_string("date", true), line_no);
    raw.event.code = *get_string("code", true);
    if (auto kind = get_string("kind", false)) raw.event.kind = parse_kind_at(*kind, line_no);
    else raw.event.kind = EventKind::other;
    raw.cohort = get_string("cohort", false);
    builder.add(std::move(raw), line_no);
  }
  return builder.finish();
}

std::vector<PatientRecord> parse_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  // header
  std::optional<std::vector<std::string>> header;
  while (!header && std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    header = split_csv(trim(line), line_no);
  }
  if (!header) return {};

  int col_patient = -1, col_date = -1, col_code = -1, col_kind = -1, col_cohort = -1;
  for (std::size_t i = 0; i < header->size(); ++i) {
    const auto name = trim((*header)[i]);
    int* slot = name == "patient_id" ? &col_patient
                : name == "date"     ? &col_date
                : name == "code"     ? &col_code
                : name == "kind"     ? &col_kind
                : name == "cohort"   ? &col_cohort
                                     : nullptr;
    if (slot == nullptr) throw ParseError(line_no, "unknown column '" + std::string(name) + "'");
    *slot = static_cast<int>(i);
  }
  if (col_patient < 0 || col_date < 0 || col_code < 0) {
    throw ParseError(line_no, "header must contain patient_id, date and code");
  }

  RecordBuilder builder;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty()) continue;
    const auto fields = split_csv(text, line_no);
    if (fields.size() != header->size()) {
      throw ParseError(line_no, "expected " + std::to_string(header->size()) + " fields, got " +
                                    std::to_string(fields.size()));
    }
    RawEvent raw;
    raw.patient_id = fields[col_patient];
    raw.event.timestamp = parse_date_at(fields[col_date], line_no);
    raw.event.code = fields[col_code];
    raw.event.kind = col_kind >= 0 && !fields[col_kind].empty() ? parse_kind_at(fields[col_kind], line_no)
                                                                 : EventKind::other;
    if (col_cohort >= 0 && !fields[col_cohort].empty()) raw.cohort = fields[col_cohort];
    builder.add(std::move(raw), line_no);
  }
  return builder.finish();
}

}  // namespace

std::vector<PatientRecord> parse_events(std::istream& in, EventFormat format) {
  return format == EventFormat::csv ? parse_csv(in) : parse_jsonl(in);
}

std::vector<PatientRecord> parse_events(const std::filesystem::path& path, EventFormat format) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open event file '" + path.string() + "'");
  return parse_events(in, format);
}

void write_events(std::ostream& out, std::span<const PatientRecord> records, EventFormat format) {
  if (format == EventFormat::csv) out << "patient_id,date,code,kind,cohort\n";
  for (const auto& r : records) {
    for (const auto& v : r.visits) {
      for (const auto& e : v.events) {
        if (format == EventFormat::csv) {
          out << csv_field(r.patient_id) << ',' << e.timestamp.to_string() << ',' << csv_field(e.code)
              << ',' << to_string(e.kind) << ',' << (r.cohort ? csv_field(*r.cohort) : "") << '\n';
        } else {
          json obj = {{"patient_id", r.patient_id},
                      {"date", e.timestamp.to_string()},
                      {"code", e.code},
                      {"kind", std::string(to_string(e.kind))}};
          if (r.cohort) obj["cohort"] = *r.cohort;
          out << obj.dump() << '\n';
        }
      }
    }
  }
}

void write_events(const std::filesystem::path& path, std::span<const PatientRecord> records,
                  EventFormat format) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write event file '" + path.string() + "'");
  write_events(out, records, format);
}

Vocabulary filter_vocabulary(std::span<const PatientRecord> records, double max_patient_frac,
                             std::size_t min_patient_count) {
  if (!(max_patient_frac > 0.0 && max_patient_frac <= 1.0)) {
    throw PreconditionError("max_patient_frac must lie in (0, 1]");
  }
  const auto all = Vocabulary::from_records(records);
  // floor(f * P) with slack for products such as 0.9 * 10 landing at 8.999...
  const auto ceiling = static_cast<std::size_t>(
      std::floor(max_patient_frac * static_cast<double>(records.size()) + 1e-9));
  std::vector<std::string> codes;
  std::vector<CodeCounts> counts;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto s = all.counts(i).patients;
    if (s >= min_patient_count && s <= ceiling) {
      codes.push_back(all.code(i));
      counts.push_back(all.counts(i));
    }
  }
  return Vocabulary(std::move(codes), std::move(counts));
}

std::vector<PatientRecord> filter_patients(std::span<const PatientRecord> records,
                                           std::size_t min_events, const Vocabulary& vocabulary) {
  std::vector<PatientRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    PatientRecord kept{r.patient_id, {}, r.cohort};
    for (const auto& v : r.visits) {
      Visit visit{v.date, {}};
      for (const auto& e : v.events) {
        if (vocabulary.contains(e.code)) visit.events.push_back(e);
      }
      if (!visit.events.empty()) kept.visits.push_back(std::move(visit));
    }
    if (kept.event_count() >= min_events && !kept.visits.empty()) out.push_back(std::move(kept));
  }
  return out;
}

}  // namespace patsim
