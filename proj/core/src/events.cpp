#include "healthpoint/events.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "json.hpp"

namespace hp {

bool CaseRecord::fully_observed() const {
  return std::all_of(availability.begin(), availability.end(), [](std::uint8_t v) { return v != 0; });
}

EventBatch::EventBatch(BatchSpec spec, std::vector<CaseRecord> cases) : spec_(spec), cases_(std::move(cases)) {
  std::vector<std::optional<std::size_t>> widths(spec_.modalities);
  for (const auto& rec : cases_) {
    const std::string who = "case " + std::to_string(rec.case_id);
    if (rec.events.empty()) throw IngestError(who + " has no events");
    if (rec.availability.size() != spec_.modalities) {
      throw IngestError(who + " has an availability mask of the wrong length");
    }
    std::vector<std::uint8_t> mu(spec_.modalities, 0);
    for (const auto& e : rec.events) {
      if (e.case_id != rec.case_id) throw IngestError(who + " holds an event of case " + std::to_string(e.case_id));
      if (e.modality >= spec_.modalities) {
        throw IngestError(who + ": unknown modality " + std::to_string(e.modality));
      }
      if (!(e.timestamp >= 0.0 && e.timestamp <= spec_.horizon)) {
        throw IngestError(who + ": timestamp " + std::to_string(e.timestamp) + " outside [0, " +
                          std::to_string(spec_.horizon) + "]");
      }
      auto& w = widths[e.modality];
      if (!w) w = e.content.size();
      if (*w != e.content.size()) {
        throw IngestError(who + ": modality " + std::to_string(e.modality) + " content has " +
                          std::to_string(e.content.size()) + " features, expected " + std::to_string(*w));
      }
      mu[e.modality] = 1;
    }
    if (mu != rec.availability) throw IngestError(who + ": availability mask disagrees with its events");
    if (!std::is_sorted(rec.events.begin(), rec.events.end(), [](const auto& a, const auto& b) {
          return std::tie(a.modality, a.timestamp) < std::tie(b.modality, b.timestamp);
        })) {
      throw IngestError(who + ": events are not sorted by (modality, timestamp)");
    }
  }
}

std::size_t EventBatch::event_count() const {
  std::size_t n = 0;
  for (const auto& c : cases_) n += c.events.size();
  return n;
}

std::vector<std::size_t> EventBatch::feature_dims() const {
  std::vector<std::size_t> dims(spec_.modalities, 0);
  for (const auto& c : cases_) {
    for (const auto& e : c.events) dims[e.modality] = e.content.size();
  }
  return dims;
}

EventBatch EventBatch::select(const std::vector<std::size_t>& order) const {
  std::vector<CaseRecord> picked;
  picked.reserve(order.size());
  for (auto i : order) picked.push_back(cases_.at(i));
  EventBatch out;
  out.spec_ = spec_;
  out.cases_ = std::move(picked);
  return out;
}

EventBatch make_batch(BatchSpec spec, std::vector<ClinicalEvent> events, const std::vector<CaseLabel>& labels) {
  std::map<std::int64_t, CaseRecord> by_case;
  for (auto& e : events) {
    auto& rec = by_case[e.case_id];
    rec.case_id = e.case_id;
    rec.events.push_back(std::move(e));
  }
  for (const auto& l : labels) {
    auto it = by_case.find(l.case_id);
    if (it == by_case.end()) throw IngestError("case " + std::to_string(l.case_id) + " has no events");
    it->second.label_observed = l.observed;
    it->second.label = l.observed ? l.label : 0;
  }
  std::vector<CaseRecord> cases;
  cases.reserve(by_case.size());
  for (auto& [id, rec] : by_case) {
    std::stable_sort(rec.events.begin(), rec.events.end(), [](const auto& a, const auto& b) {
      return std::tie(a.modality, a.timestamp) < std::tie(b.modality, b.timestamp);
    });
    rec.availability.assign(spec.modalities, 0);
    for (const auto& e : rec.events) {
      if (e.modality >= spec.modalities) {
        throw IngestError("case " + std::to_string(id) + ": unknown modality " + std::to_string(e.modality));
      }
      rec.availability[e.modality] = 1;
    }
    cases.push_back(std::move(rec));
  }
  return EventBatch(spec, std::move(cases));
}

namespace {

struct PendingLabel {
  bool observed = false;
  int label = 0;
};

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw IngestError("line " + std::to_string(line) + ": " + what);
}

}  // namespace

EventBatch ingest(std::istream& in, const IngestOptions& options) {
  using Key = std::tuple<std::int64_t, std::uint32_t, double>;
  std::map<Key, ClinicalEvent> events;
  std::map<std::int64_t, PendingLabel> labels;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      fail(line, std::string("malformed record: ") + e.what());
    }
    if (!rec.is_object()) fail(line, "record is not an object");
    ClinicalEvent ev;
    try {
      const auto& cid = rec.at("case_id");
      const auto& mod = rec.at("modality");
      const auto& ts = rec.at("timestamp");
      const auto& feats = rec.at("features");
      if (!cid.is_number_integer() || !mod.is_number_integer() || !ts.is_number() || !feats.is_array()) {
        fail(line, "field of the wrong type");
      }
      ev.case_id = cid.get<std::int64_t>();
      const auto m = mod.get<std::int64_t>();
      if (m < 0 || static_cast<std::size_t>(m) >= options.spec.modalities) {
        fail(line, "unknown modality " + std::to_string(m));
      }
      ev.modality = static_cast<std::uint32_t>(m);
      ev.timestamp = ts.get<double>();
      for (const auto& f : feats) {
        if (!f.is_number()) fail(line, "non-numeric feature");
        ev.content.push_back(f.get<double>());
      }
    } catch (const nlohmann::json::out_of_range& e) {
      fail(line, std::string("missing field: ") + e.what());
    }
    if (!std::isfinite(ev.timestamp) || ev.timestamp < 0.0 || ev.timestamp > options.spec.horizon) {
      fail(line, "timestamp " + std::to_string(ev.timestamp) + " outside [0, " + std::to_string(options.spec.horizon) + "]");
    }

    const bool has_label_fields = rec.contains("label_observed") || rec.contains("label");
    PendingLabel here;
    if (has_label_fields) {
      const auto lo = rec.value("label_observed", 0);
      if (lo != 0 && lo != 1) fail(line, "label_observed must be 0 or 1");
      here.observed = lo == 1;
      if (here.observed) {
        if (!rec.contains("label")) fail(line, "label_observed=1 without a label");
        const auto lab = rec.at("label").get<int>();
        if (lab != 0 && lab != 1) fail(line, "label must be 0 or 1");
        here.label = lab;
      }
    }
    auto it = labels.find(ev.case_id);
    if (it == labels.end()) {
      labels.emplace(ev.case_id, here);
    } else if (has_label_fields && (it->second.observed != here.observed || it->second.label != here.label)) {
      fail(line, "label fields disagree with the first record of case " + std::to_string(ev.case_id));
    }

    Key key{ev.case_id, ev.modality, ev.timestamp};
    auto [pos, inserted] = events.try_emplace(key, ev);
    if (!inserted) {
      if (options.duplicates == DuplicatePolicy::error) {
        fail(line, "duplicate event for case " + std::to_string(ev.case_id) + ", modality " +
                       std::to_string(ev.modality) + " at t=" + std::to_string(ev.timestamp));
      }
      pos->second = std::move(ev);
    }
  }
  std::vector<ClinicalEvent> flat;
  flat.reserve(events.size());
  for (auto& [k, e] : events) flat.push_back(std::move(e));
  std::vector<CaseLabel> case_labels;
  for (const auto& [id, l] : labels) case_labels.push_back({id, l.observed, l.label});
  return make_batch(options.spec, std::move(flat), case_labels);
}

EventBatch ingest(const std::filesystem::path& path, const IngestOptions& options) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open dataset " + path.string());
  return ingest(in, options);
}

void write_dataset(std::ostream& out, const EventBatch& batch) {
  for (const auto& rec : batch.cases()) {
    bool first = true;
    for (const auto& e : rec.events) {
      nlohmann::ordered_json j;
      j["case_id"] = e.case_id;
      j["modality"] = e.modality;
      j["timestamp"] = e.timestamp;
      j["features"] = e.content;
      if (first) {
        if (rec.label_observed) j["label"] = rec.label;
        j["label_observed"] = rec.label_observed ? 1 : 0;
        first = false;
      }
      out << j.dump() << '\n';
    }
  }
}

void write_dataset(const std::filesystem::path& path, const EventBatch& batch) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestError("cannot open " + path.string() + " for writing");
  write_dataset(out, batch);
}

}  // namespace hp
