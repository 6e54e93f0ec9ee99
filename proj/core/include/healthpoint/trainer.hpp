// Training loop, evaluation and the per-epoch metric log.
//
// Each epoch shuffles the training cases with a stream derived from (seed, epoch),
// runs one AdamW step per mini-batch and evaluates the validation split in its
// stored order with the same batch size. Because level 4 attends across the cases
// of a batch, predictions depend on batch composition; evaluation therefore always
// uses the fixed in-order batching so a saved checkpoint re-evaluates exactly.
//
// Files written to the output directory (when one is given):
//   metrics.jsonl  one record per completed epoch
//   run.json       effective configuration and its hash
//   last.ckpt      state after the latest epoch (resume point)
//   best.ckpt      state after the epoch with the highest validation AUROC

#ifndef HEALTHPOINT_TRAINER_HPP
#define HEALTHPOINT_TRAINER_HPP

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "healthpoint/config.hpp"
#include "healthpoint/metrics.hpp"

namespace hp {

struct EpochRecord {
  std::size_t epoch = 0;  ///< 1-based.
  double L_g = 0, L_f = 0, L_s = 0, L_a = 0, L_r = 0, L_total = 0;
  double val_auroc = 0, val_auprc = 0, val_f1 = 0;

  bool operator==(const EpochRecord&) const = default;
};

/// One-line JSON form used in metrics.jsonl.
std::string to_jsonl(const EpochRecord& record);
EpochRecord parse_epoch_record(const std::string& line);

struct EvalResult {
  Metrics metrics;
  std::vector<double> probabilities;  ///< Cases with observed labels, in batch order.
  std::vector<int> labels;
  std::vector<std::int64_t> case_ids;
};

/// Scores `data` in consecutive batches of `batch_size`. Throws MetricError when
/// the labelled cases hold a single class.
EvalResult evaluate(const HierarchyModel& model, const EventBatch& data, std::size_t batch_size,
                    InferenceMode mode);

/// Per-case probabilities only; cases without labels are included.
std::vector<double> score(const HierarchyModel& model, const EventBatch& data, std::size_t batch_size,
                          InferenceMode mode);

struct TrainOptions {
  std::filesystem::path out_dir;  ///< Empty: keep everything in memory.
  std::filesystem::path resume;   ///< Checkpoint to continue from.
  /// Called after every epoch; returning false stops training.
  std::function<bool(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_auroc = 0.0;
};

/// Trains `model` in place. The model must have been built from config.effective_model().
TrainResult train(HierarchyModel& model, const EventBatch& train_split, const EventBatch& val_split,
                  const RunConfig& config, const TrainOptions& options = {});

/// Loads parameters from a checkpoint, checking that it was written for `config`'s model.
void load_parameters(HierarchyModel& model, const std::filesystem::path& checkpoint);

}  // namespace hp

#endif  // HEALTHPOINT_TRAINER_HPP
