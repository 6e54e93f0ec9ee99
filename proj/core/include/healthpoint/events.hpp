// Clinical events, availability/label masks and the newline-delimited dataset format.
//
// Dataset file: one JSON object per line,
//   {"case_id": int, "modality": int, "timestamp": float, "features": [float...],
//    "label": 0|1 (optional), "label_observed": 0|1}
// The label fields are written on a case's first record; later records of the
// same case may repeat them but must agree.

#ifndef HEALTHPOINT_EVENTS_HPP
#define HEALTHPOINT_EVENTS_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace hp {

struct ClinicalEvent {
  std::vector<double> content;
  double timestamp = 0.0;  ///< Hours since admission.
  std::uint32_t modality = 0;
  std::int64_t case_id = 0;

  bool operator==(const ClinicalEvent&) const = default;
};

/// All events of one case, sorted by (modality, timestamp), with its masks.
struct CaseRecord {
  std::int64_t case_id = 0;
  std::vector<ClinicalEvent> events;
  std::vector<std::uint8_t> availability;  ///< mu[m], derived from the events.
  bool label_observed = false;
  int label = 0;  ///< Meaningful only when label_observed.

  bool observed(std::size_t modality) const { return availability[modality] != 0; }
  bool fully_observed() const;

  bool operator==(const CaseRecord&) const = default;
};

class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BatchSpec {
  std::size_t modalities = 2;
  double horizon = 48.0;

  bool operator==(const BatchSpec&) const = default;
};

/// Events grouped by case. Immutable after construction; construction enforces
/// mu consistency, horizon bounds and at least one observed modality per case.
class EventBatch {
 public:
  EventBatch() = default;
  EventBatch(BatchSpec spec, std::vector<CaseRecord> cases);

  const BatchSpec& spec() const { return spec_; }
  std::size_t modalities() const { return spec_.modalities; }
  std::size_t size() const { return cases_.size(); }
  const std::vector<CaseRecord>& cases() const { return cases_; }
  const CaseRecord& operator[](std::size_t c) const { return cases_[c]; }

  std::size_t event_count() const;
  /// Content width per modality (0 when a modality never occurs).
  std::vector<std::size_t> feature_dims() const;

  /// Sub-batch made of the given cases in the given order.
  EventBatch select(const std::vector<std::size_t>& order) const;

  bool operator==(const EventBatch&) const = default;

 private:
  BatchSpec spec_;
  std::vector<CaseRecord> cases_;
};

/// Groups raw events into cases, sorts them and derives mu. Labels are given per case id.
struct CaseLabel {
  std::int64_t case_id = 0;
  bool observed = false;
  int label = 0;
};
EventBatch make_batch(BatchSpec spec, std::vector<ClinicalEvent> events, const std::vector<CaseLabel>& labels);

enum class DuplicatePolicy { keep_last, error };

struct IngestOptions {
  BatchSpec spec;
  DuplicatePolicy duplicates = DuplicatePolicy::keep_last;
};

EventBatch ingest(std::istream& in, const IngestOptions& options);
EventBatch ingest(const std::filesystem::path& path, const IngestOptions& options);

void write_dataset(std::ostream& out, const EventBatch& batch);
void write_dataset(const std::filesystem::path& path, const EventBatch& batch);

}  // namespace hp

#endif  // HEALTHPOINT_EVENTS_HPP
