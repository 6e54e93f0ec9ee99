#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "healthpoint/checkpoint.hpp"
#include "support.hpp"

using namespace hp;
namespace fs = std::filesystem;

namespace {

RunConfig small_run(TaskKind task = TaskKind::separable) {
  RunConfig rc;
  rc.data.train_cases = 48;
  rc.data.val_cases = rc.data.test_cases = 24;
  rc.data.feature_dims = {3, 3};
  rc.data.horizon = 12.0;
  rc.data.event_rate = {0.5, 0.4};
  rc.data.modality_missing = 0.3;
  rc.data.label_missing = 0.2;
  rc.data.task = task;
  rc.data.seed = 5;
  const ModelConfig tiny = test::tiny_model(0);
  rc.model.width = tiny.width;
  rc.model.heads = tiny.heads;
  rc.model.rank = tiny.rank;
  rc.model.ffn_multiplier = tiny.ffn_multiplier;
  rc.model.k_max = tiny.k_max;
  rc.model.grid1.interval = tiny.grid1.interval;
  rc.model.grid3.interval = tiny.grid3.interval;
  rc.model.init_seed = 2;
  rc.train.epochs = 3;
  rc.train.batch_size = 8;
  rc.train.learning_rate = 3e-3;
  rc.train.seed = 7;
  return rc;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hp_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<Tensor> values(const HierarchyModel& m) {
  std::vector<Tensor> v;
  for (const auto* p : m.store().all()) v.push_back(p->value);
  return v;
}

}  // namespace

TEST_CASE("run configurations round-trip through JSON") {
  RunConfig rc = small_run(TaskKind::coupled);
  rc.loss.fga.excluded = {1};
  rc.train.branch = InferenceMode::global;
  rc.model.pre_norm = false;
  rc.model.isolate_reconstruction = false;
  const RunConfig back = parse_run_config(to_json(rc));
  CHECK(back == rc);
  CHECK(to_json(back) == to_json(rc));
  CHECK(config_hash(back) == config_hash(rc));
  CHECK(config_hash(rc).size() == 16);
  RunConfig other = rc;
  other.loss.lambda_r = 9.0;
  CHECK(config_hash(other) != config_hash(rc));
}

TEST_CASE("partial JSON overlays the base configuration") {
  const RunConfig rc = parse_run_config(R"({"model": {"rank": 3}, "train": {"epochs": 2}})");
  CHECK(rc.model.rank == 3);
  CHECK(rc.train.epochs == 2);
  CHECK(rc.model.width == RunConfig{}.model.width);
  CHECK(rc.effective_model().feature_dims == rc.data.feature_dims);
}

TEST_CASE("bad configurations raise ConfigError") {
  CHECK_THROWS_AS(parse_run_config(R"({"model": {"rnak": 3}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"extra": {}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"model": {"rank": "eight"}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"model": 3})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{not json"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"branch": "vote"}})"), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("epoch records round-trip through their log line") {
  EpochRecord r{3, 0.5, 0.25, 0.125, 1.0 / 3.0, 2.0, 3.1, 0.7, 0.6, 0.55};
  CHECK(parse_epoch_record(to_jsonl(r)) == r);
  CHECK(to_jsonl(r).find('\n') == std::string::npos);
}

TEST_CASE("checkpoints round-trip and reject damaged files") {
  const fs::path dir = scratch("ckpt");
  HierarchyModel model(test::tiny_model(1));
  AdamW opt;
  // One step so the optimizer holds moments.
  {
    const EventBatch batch = test::tiny_batch(2, 4, 0.3);
    Tape tape;
    const LayerOutputs out = model.forward(tape, batch);
    tape.backward(compute_losses(tape, out, batch, model.heads(), {}).total);
    opt.step(model.store().all());
  }
  CheckpointManifest man{"abc", opt.steps(), 1, "{}", R"({"k":1})"};
  save_checkpoint(dir / "a.ckpt", capture(model.store(), &opt, man));
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.manifest == man);

  HierarchyModel other(test::tiny_model(9));
  AdamW opt2;
  restore(back, other.store(), &opt2);
  CHECK(values(other) == values(model));
  CHECK(opt2.steps() == opt.steps());
  REQUIRE(opt2.moments().size() == opt.moments().size());
  for (const auto& [name, m] : opt.moments()) {
    CHECK(opt2.moments().at(name).first == m.first);
    CHECK(opt2.moments().at(name).second == m.second);
  }

  const std::string bytes = slurp(dir / "a.ckpt");
  std::ofstream(dir / "trunc.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(dir / "trunc.ckpt"), CheckpointError);
  std::ofstream(dir / "magic.ckpt", std::ios::binary) << "NOTACKPT" << bytes.substr(8);
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), CheckpointError);

  // A differently shaped model cannot take these parameters.
  HierarchyModel wide(test::tiny_model(1, 3));
  CHECK_THROWS_AS(restore(back, wide.store(), nullptr), CheckpointError);
  Checkpoint partial = back;
  partial.entries.erase(partial.entries.begin());
  CHECK_THROWS_AS(restore(partial, other.store(), nullptr), CheckpointError);
  fs::remove_all(dir);
}

TEST_CASE("training is deterministic and resumable") {
  const RunConfig rc = small_run();
  const Dataset ds = generate(rc.data);
  const fs::path a = scratch("run_a"), b = scratch("run_b"), c = scratch("run_c");

  HierarchyModel ma(rc.effective_model()), mb(rc.effective_model());
  const TrainResult ra = train(ma, ds.train, ds.val, rc, {a, {}, {}});
  const TrainResult rb = train(mb, ds.train, ds.val, rc, {b, {}, {}});
  REQUIRE(ra.history.size() == 3);
  CHECK(ra.history == rb.history);
  CHECK(values(ma) == values(mb));
  CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));
  CHECK(slurp(a / "last.ckpt") == slurp(b / "last.ckpt"));
  CHECK(fs::exists(a / "best.ckpt"));
  CHECK(fs::exists(a / "run.json"));

  // Two epochs, then resume to three.
  RunConfig two = rc;
  two.train.epochs = 2;
  {
    HierarchyModel m(two.effective_model());
    train(m, ds.train, ds.val, two, {c, {}, {}});
  }
  HierarchyModel mc(rc.effective_model());
  const TrainResult rc3 = train(mc, ds.train, ds.val, rc, {c, c / "last.ckpt", {}});
  CHECK(rc3.history == ra.history);
  CHECK(values(mc) == values(ma));
  CHECK(slurp(c / "metrics.jsonl") == slurp(a / "metrics.jsonl"));
  CHECK(rc3.best_epoch == ra.best_epoch);

  // Resuming under a different configuration is refused.
  RunConfig changed = rc;
  changed.loss.lambda_a = 0.5;
  HierarchyModel md(changed.effective_model());
  CHECK_THROWS_AS(train(md, ds.train, ds.val, changed, {{}, c / "last.ckpt", {}}), CheckpointError);

  // The best checkpoint re-evaluates to the logged validation metric.
  HierarchyModel me(rc.effective_model());
  load_parameters(me, a / "best.ckpt");
  const EvalResult ev = evaluate(me, ds.val, rc.train.batch_size, rc.train.branch);
  CHECK(ev.metrics.auroc == ra.history[ra.best_epoch - 1].val_auroc);
  CHECK(ev.metrics.auprc == ra.history[ra.best_epoch - 1].val_auprc);

  for (const auto& p : {a, b, c}) fs::remove_all(p);
}

TEST_CASE("the training callback can stop early") {
  const RunConfig rc = small_run();
  const Dataset ds = generate(rc.data);
  HierarchyModel m(rc.effective_model());
  std::size_t calls = 0;
  const TrainResult r = train(m, ds.train, ds.val, rc, {{}, {}, [&](const EpochRecord&) { return ++calls < 2; }});
  CHECK(r.history.size() == 2);
}

TEST_CASE("a model built for another configuration is refused") {
  const RunConfig rc = small_run();
  const Dataset ds = generate(rc.data);
  RunConfig other = rc;
  other.model.rank = 3;
  HierarchyModel m(other.effective_model());
  CHECK_THROWS_AS(train(m, ds.train, ds.val, rc), std::invalid_argument);
}

TEST_CASE("supervised loss falls on the separable task") {
  RunConfig rc = small_run();
  rc.data.train_cases = 96;
  rc.data.label_missing = 0.0;
  rc.loss.lambda_a = 0.0;
  rc.loss.lambda_r = 0.0;
  rc.train.epochs = 6;
  const Dataset ds = generate(rc.data);
  HierarchyModel m(rc.effective_model());
  const TrainResult r = train(m, ds.train, ds.val, rc);
  MESSAGE("L_g first " << r.history.front().L_g << " last " << r.history.back().L_g);
  CHECK(r.history.back().L_g < r.history[1].L_g);
  CHECK(r.history.back().L_total < r.history.front().L_total);
}
