// hp: generate synthetic data, train, evaluate, self-test and benchmark.
//
// Exit codes: 0 success, 1 validation or invariant failure, 2 usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "bench.hpp"
#include "healthpoint/checkpoint.hpp"
#include "healthpoint/trainer.hpp"
#include "json.hpp"
#include "selftest.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr int kFailure = 1;
constexpr int kUsage = 2;

// Flags shared by the commands that build a run configuration. Unset flags leave the
// configuration file (or the defaults) untouched.
struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> cases;
  std::optional<double> modality_missing, label_missing;
  std::optional<std::size_t> rank, heads;
  std::optional<double> delta, lambda_a, lambda_r;
  std::optional<std::size_t> epochs;
  std::optional<std::string> branch;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "Seed for data, initialisation and batch order");
    cmd->add_option("--cases", cases, "Total generated cases, split 4:1:1 into train/val/test");
    cmd->add_option("--modality-missing", modality_missing, "Probability that a case loses modalities");
    cmd->add_option("--label-missing", label_missing, "Probability that a training label is hidden");
    cmd->add_option("--rank", rank, "Rank of the relation coupling");
    cmd->add_option("--heads", heads, "Attention heads");
    cmd->add_option("--delta", delta, "Level-1 time window in hours");
    cmd->add_option("--lambda-a", lambda_a, "Weight of the alignment loss");
    cmd->add_option("--lambda-r", lambda_r, "Weight of the reconstruction loss");
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--branch", branch, "Inference branch: entropy or global")
        ->check(CLI::IsMember({"entropy", "global"}));
  }

  hp::RunConfig apply(hp::RunConfig c) const {
    if (!config.empty()) c = hp::load_run_config(config, c);
    if (seed) c.data.seed = c.train.seed = c.model.init_seed = *seed;
    if (cases) {
      const std::size_t val = *cases / 6;
      c.data.val_cases = val;
      c.data.test_cases = val;
      c.data.train_cases = *cases - 2 * val;
    }
    if (modality_missing) c.data.modality_missing = *modality_missing;
    if (label_missing) c.data.label_missing = *label_missing;
    if (rank) c.model.rank = *rank;
    if (heads) c.model.heads = *heads;
    if (delta) c.model.delta = *delta;
    if (lambda_a) c.loss.lambda_a = *lambda_a;
    if (lambda_r) c.loss.lambda_r = *lambda_r;
    if (epochs) c.train.epochs = *epochs;
    if (branch) c.train.branch = hp::parse_inference_mode(*branch);
    return c;
  }
};

Json data_section(const hp::RunConfig& c) { return Json::parse(hp::to_json(c))["data"]; }

// Dataset directory written by `generate`; its manifest supplies the generator settings.
struct DataDir {
  fs::path dir;

  hp::RunConfig overlay(const hp::RunConfig& c) const {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw std::runtime_error("no manifest.json in " + dir.string());
    const Json manifest = Json::parse(in);
    Json wrapper;
    wrapper["data"] = manifest.at("generator");
    return hp::parse_run_config(wrapper.dump(), c);
  }

  hp::EventBatch load(const hp::RunConfig& c, const std::string& split) const {
    hp::IngestOptions opt;
    opt.spec = hp::BatchSpec{c.data.modalities, c.data.horizon};
    opt.duplicates = hp::DuplicatePolicy::error;
    return hp::ingest(dir / (split + ".jsonl"), opt);
  }
};

int cmd_generate(const hp::RunConfig& c, const fs::path& out) {
  const hp::Dataset ds = hp::generate(c.data);
  fs::create_directories(out);
  Json manifest;
  manifest["config_hash"] = hp::config_hash(c);
  manifest["generator"] = data_section(c);
  const std::pair<const char*, const hp::EventBatch*> splits[] = {
      {"train", &ds.train}, {"val", &ds.val}, {"test", &ds.test}};
  for (const auto& [name, batch] : splits) {
    const std::string file = std::string(name) + ".jsonl";
    hp::write_dataset(out / file, *batch);
    manifest["splits"][name] = {{"file", file}, {"cases", batch->size()}, {"events", batch->event_count()}};
  }
  std::ofstream(out / "manifest.json") << manifest.dump(2) << "\n";
  std::cout << "wrote " << ds.train.size() << "/" << ds.val.size() << "/" << ds.test.size()
            << " train/val/test cases to " << out.string() << "\n";
  return 0;
}

int cmd_train(hp::RunConfig c, const std::optional<DataDir>& data, const fs::path& out, const fs::path& resume) {
  if (data) c = data->overlay(c);
  hp::EventBatch train_split, val_split;
  if (data) {
    train_split = data->load(c, "train");
    val_split = data->load(c, "val");
  } else {
    hp::Dataset ds = hp::generate(c.data);
    train_split = std::move(ds.train);
    val_split = std::move(ds.val);
  }
  std::cerr << "config " << hp::config_hash(c) << "\n" << hp::to_json(c) << "\n";
  hp::HierarchyModel model(c.effective_model());
  hp::TrainOptions opt;
  opt.out_dir = out;
  opt.resume = resume;
  opt.on_epoch = [](const hp::EpochRecord& r) {
    std::cout << hp::to_jsonl(r) << std::endl;
    return true;
  };
  const hp::TrainResult res = hp::train(model, train_split, val_split, c, opt);
  std::cerr << "best epoch " << res.best_epoch << " val_auroc " << res.best_auroc << "; checkpoints in "
            << out.string() << "\n";
  return 0;
}

int cmd_eval(const Overrides& ov, const std::optional<DataDir>& data, const fs::path& checkpoint,
             const std::string& split) {
  const hp::Checkpoint ckpt = hp::load_checkpoint(checkpoint);
  hp::RunConfig c = hp::parse_run_config(ckpt.manifest.config_json);
  if (ov.branch) c.train.branch = hp::parse_inference_mode(*ov.branch);
  if (data) c = data->overlay(c);
  hp::HierarchyModel model(c.effective_model());
  hp::restore(ckpt, model.store(), nullptr);
  hp::EventBatch batch;
  if (data) {
    batch = data->load(c, split);
  } else {
    hp::Dataset ds = hp::generate(c.data);
    batch = split == "val" ? std::move(ds.val) : split == "test" ? std::move(ds.test) : std::move(ds.train);
  }
  const hp::EvalResult r = hp::evaluate(model, batch, c.train.batch_size, c.train.branch);
  Json report{{"checkpoint", checkpoint.string()},
              {"epoch", ckpt.manifest.epoch},
              {"split", split},
              {"branch", hp::inference_mode_name(c.train.branch)},
              {"cases", r.labels.size()},
              {"auroc", r.metrics.auroc},
              {"auprc", r.metrics.auprc},
              {"f1", r.metrics.f1}};
  std::cout << report.dump() << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-level relational attention over irregular multimodal event streams"};
  app.require_subcommand(1);

  Overrides ov;
  std::string out, resume, data_dir, checkpoint, split = "test", fault;
  std::size_t bench_pairs = 2000;

  auto* gen = app.add_subcommand("generate", "Write synthetic train/val/test splits and a manifest");
  ov.attach(gen);
  gen->add_option("--out", out, "Output directory")->default_val("data");

  auto* tr = app.add_subcommand("train", "Train a model and log per-epoch metrics");
  ov.attach(tr);
  tr->add_option("--data", data_dir, "Dataset directory from `generate` (default: generate in memory)");
  tr->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  tr->add_option("--out", out, "Run directory")->default_val("run");

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a split");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data_dir, "Dataset directory (default: regenerate from the checkpoint's config)");
  ev->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--branch", ov.branch, "Inference branch: entropy or global")
      ->check(CLI::IsMember({"entropy", "global"}));

  auto* st = app.add_subcommand("selftest", "Run oracle, gradient and invariant checks");
  st->add_option("--seed", ov.seed, "Seed for the random cases");
  st->add_option("--inject-fault", fault)->group("");

  auto* bn = app.add_subcommand("bench", "Op counts and timings of the coupling against the full tensor");
  bn->add_option("--pairs", bench_pairs, "Relation pairs per configuration")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    std::optional<DataDir> data;
    if (!data_dir.empty()) data = DataDir{data_dir};
    if (gen->parsed()) return cmd_generate(ov.apply({}), out);
    if (tr->parsed()) {
      hp::RunConfig base;
      if (!resume.empty() && ov.config.empty()) {
        base = hp::parse_run_config(hp::load_checkpoint(resume).manifest.config_json);
      }
      return cmd_train(ov.apply(base), data, out, resume);
    }
    if (ev->parsed()) return cmd_eval(ov, data, checkpoint, split);
    if (st->parsed()) {
      const auto results = hp::tools::run_selftest(hp::tools::parse_fault(fault), ov.seed.value_or(0), std::cout);
      std::size_t failed = 0;
      for (const auto& r : results) failed += r.passed ? 0 : 1;
      std::cout << (failed ? std::to_string(failed) + " check(s) failed" : "all checks passed") << std::endl;
      return failed ? kFailure : 0;
    }
    if (bn->parsed()) return hp::tools::run_bench(std::cout, bench_pairs) ? 0 : kFailure;
  } catch (const hp::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const hp::MetricError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
