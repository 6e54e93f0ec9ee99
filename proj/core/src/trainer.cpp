#include "healthpoint/trainer.hpp"

#include <fstream>
#include <numeric>

#include "healthpoint/checkpoint.hpp"
#include "healthpoint/optim.hpp"
#include "healthpoint/rng.hpp"
#include "json.hpp"

namespace hp {

using Json = nlohmann::ordered_json;

namespace {

Json record_json(const EpochRecord& r) {
  return Json{{"epoch", r.epoch}, {"L_g", r.L_g},         {"L_f", r.L_f},             {"L_s", r.L_s},
              {"L_a", r.L_a},     {"L_r", r.L_r},         {"L_total", r.L_total},     {"val_auroc", r.val_auroc},
              {"val_auprc", r.val_auprc}, {"val_f1", r.val_f1}};
}

EpochRecord record_from(const Json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.L_g = j.at("L_g").get<double>();
  r.L_f = j.at("L_f").get<double>();
  r.L_s = j.at("L_s").get<double>();
  r.L_a = j.at("L_a").get<double>();
  r.L_r = j.at("L_r").get<double>();
  r.L_total = j.at("L_total").get<double>();
  r.val_auroc = j.at("val_auroc").get<double>();
  r.val_auprc = j.at("val_auprc").get<double>();
  r.val_f1 = j.at("val_f1").get<double>();
  return r;
}

std::vector<std::vector<std::size_t>> in_order_batches(std::size_t n, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    std::vector<std::size_t> b(std::min(batch_size, n - start));
    std::iota(b.begin(), b.end(), start);
    out.push_back(std::move(b));
  }
  return out;
}

// Configuration with the fields that may legitimately change on resume blanked out.
std::string resume_key(RunConfig c) {
  c.train.epochs = 0;
  return to_json(c);
}

struct State {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_auroc = 0.0;
};

std::string state_json(const State& s) {
  Json j;
  j["history"] = Json::array();
  for (const auto& r : s.history) j["history"].push_back(record_json(r));
  j["best_epoch"] = s.best_epoch;
  j["best_auroc"] = s.best_auroc;
  return j.dump();
}

State parse_state(const std::string& text) {
  State s;
  const Json j = Json::parse(text);
  for (const auto& r : j.at("history")) s.history.push_back(record_from(r));
  s.best_epoch = j.at("best_epoch").get<std::size_t>();
  s.best_auroc = j.at("best_auroc").get<double>();
  return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

std::string to_jsonl(const EpochRecord& record) { return record_json(record).dump(); }

EpochRecord parse_epoch_record(const std::string& line) { return record_from(Json::parse(line)); }

std::vector<double> score(const HierarchyModel& model, const EventBatch& data, std::size_t batch_size,
                          InferenceMode mode) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  std::vector<double> probs;
  probs.reserve(data.size());
  for (const auto& idx : in_order_batches(data.size(), batch_size)) {
    const EventBatch batch = data.select(idx);
    Tape tape;
    const LayerOutputs out = model.forward(tape, batch);
    const auto p = predict(tape, out, batch, model.heads(), mode);
    probs.insert(probs.end(), p.begin(), p.end());
  }
  return probs;
}

EvalResult evaluate(const HierarchyModel& model, const EventBatch& data, std::size_t batch_size,
                    InferenceMode mode) {
  const auto probs = score(model, data, batch_size, mode);
  EvalResult r;
  for (std::size_t c = 0; c < data.size(); ++c) {
    if (!data[c].label_observed) continue;
    r.probabilities.push_back(probs[c]);
    r.labels.push_back(data[c].label);
    r.case_ids.push_back(data[c].case_id);
  }
  r.metrics = compute_metrics(r.probabilities, r.labels);
  return r;
}

void load_parameters(HierarchyModel& model, const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  restore(ckpt, model.store(), nullptr);
}

TrainResult train(HierarchyModel& model, const EventBatch& train_split, const EventBatch& val_split,
                  const RunConfig& config, const TrainOptions& options) {
  const TrainConfig& tc = config.train;
  if (tc.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (train_split.size() == 0) throw std::invalid_argument("training split is empty");
  if (!(model.config() == config.effective_model())) {
    throw std::invalid_argument("model was not built from this run configuration");
  }

  AdamWConfig oc;
  oc.learning_rate = tc.learning_rate;
  oc.weight_decay = tc.weight_decay;
  AdamW optimizer(oc);
  State state;

  if (!options.resume.empty()) {
    const Checkpoint ckpt = load_checkpoint(options.resume);
    const RunConfig saved = parse_run_config(ckpt.manifest.config_json);
    if (resume_key(saved) != resume_key(config)) {
      throw CheckpointError("checkpoint " + options.resume.string() + " was written for a different configuration");
    }
    restore(ckpt, model.store(), &optimizer);
    state = parse_state(ckpt.manifest.state_json);
    if (state.history.size() != ckpt.manifest.epoch) throw CheckpointError("checkpoint history is inconsistent");
  }

  const bool persist = !options.out_dir.empty();
  if (persist) {
    std::filesystem::create_directories(options.out_dir);
    Json run;
    run["config_hash"] = config_hash(config);
    run["config"] = Json::parse(to_json(config));
    write_text(options.out_dir / "run.json", run.dump(2) + "\n");
  }

  const auto params = model.store().all();
  model.store().zero_grad();
  const std::size_t n = train_split.size();

  for (std::size_t epoch = state.history.size() + 1; epoch <= tc.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(Rng::derive(tc.seed, epoch));
    rng.shuffle(order);

    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += tc.batch_size) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + tc.batch_size)));
      const EventBatch batch = train_split.select(idx);
      Tape tape;
      const LayerOutputs out = model.forward(tape, batch);
      const LossBreakdown loss = compute_losses(tape, out, batch, model.heads(), config.loss);
      tape.backward(loss.total);
      optimizer.step(params);
      rec.L_g += loss.global.item();
      rec.L_f += loss.fusion.item();
      rec.L_s += loss.unimodal.item();
      rec.L_a += loss.align.item();
      rec.L_r += loss.recon.item();
      rec.L_total += loss.total.item();
      ++batches;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    for (double* v : {&rec.L_g, &rec.L_f, &rec.L_s, &rec.L_a, &rec.L_r, &rec.L_total}) *v *= inv;

    const EvalResult val = evaluate(model, val_split, tc.batch_size, tc.branch);
    rec.val_auroc = val.metrics.auroc;
    rec.val_auprc = val.metrics.auprc;
    rec.val_f1 = val.metrics.f1;
    state.history.push_back(rec);
    const bool improved = state.best_epoch == 0 || rec.val_auroc > state.best_auroc;
    if (improved) {
      state.best_epoch = epoch;
      state.best_auroc = rec.val_auroc;
    }

    if (persist) {
      CheckpointManifest manifest;
      manifest.config_hash = config_hash(config);
      manifest.step = optimizer.steps();
      manifest.epoch = epoch;
      manifest.config_json = to_json(config);
      manifest.state_json = state_json(state);
      const Checkpoint ckpt = capture(model.store(), &optimizer, manifest);
      save_checkpoint(options.out_dir / "last.ckpt", ckpt);
      if (improved) save_checkpoint(options.out_dir / "best.ckpt", ckpt);
      std::string log;
      for (const auto& r : state.history) log += to_jsonl(r) + "\n";
      write_text(options.out_dir / "metrics.jsonl", log);
    }
    if (options.on_epoch && !options.on_epoch(rec)) break;
  }

  return TrainResult{state.history, state.best_epoch, state.best_auroc};
}

}  // namespace hp
