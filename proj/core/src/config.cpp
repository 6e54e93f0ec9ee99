#include "healthpoint/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace hp {

using Json = nlohmann::ordered_json;

ModelConfig RunConfig::effective_model() const {
  ModelConfig m = model;
  m.modalities = data.modalities;
  m.feature_dims = data.feature_dims;
  m.grid1.horizon = data.horizon;
  m.grid3.horizon = data.horizon;
  return m;
}

std::string inference_mode_name(InferenceMode mode) { return mode == InferenceMode::global ? "global" : "entropy"; }

InferenceMode parse_inference_mode(const std::string& name) {
  if (name == "entropy") return InferenceMode::entropy;
  if (name == "global") return InferenceMode::global;
  throw ConfigError("unknown branch '" + name + "' (expected entropy or global)");
}

namespace {

Json to_tree(const RunConfig& c) {
  Json j;
  const auto& d = c.data;
  j["data"] = {{"train_cases", d.train_cases},
               {"val_cases", d.val_cases},
               {"test_cases", d.test_cases},
               {"modalities", d.modalities},
               {"feature_dims", d.feature_dims},
               {"horizon", d.horizon},
               {"event_rate", d.event_rate},
               {"modality_missing", d.modality_missing},
               {"label_missing", d.label_missing},
               {"task", task_name(d.task)},
               {"noise", d.noise},
               {"seed", d.seed}};
  const auto& m = c.model;
  j["model"] = {{"width", m.width},
                {"heads", m.heads},
                {"rank", m.rank},
                {"ffn_multiplier", m.ffn_multiplier},
                {"delta", m.delta},
                {"k_max", m.k_max},
                {"grid1", m.grid1.interval},
                {"grid3", m.grid3.interval},
                {"pre_norm", m.pre_norm},
                {"isolate_reconstruction", m.isolate_reconstruction},
                {"init_seed", m.init_seed}};
  const auto& l = c.loss;
  j["loss"] = {{"lambda_a", l.lambda_a},
               {"lambda_r", l.lambda_r},
               {"normalize", l.normalize},
               {"detach_target", l.detach_target},
               {"temperature", l.fga.temperature},
               {"fga_excluded", l.fga.excluded}};
  const auto& t = c.train;
  j["train"] = {{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"learning_rate", t.learning_rate},
                {"weight_decay", t.weight_decay},
                {"seed", t.seed},
                {"branch", inference_mode_name(t.branch)}};
  return j;
}

// Copies json[key] into out when present, converting type errors into ConfigError.
template <class T>
void take(const Json& obj, const char* section, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(section) + "." + key + ": " + e.what());
  }
}

void reject_unknown(const Json& obj, const char* section, std::initializer_list<const char*> known) {
  if (!obj.is_object()) throw ConfigError(std::string("section '") + section + "' must be an object");
  std::set<std::string> names(known.begin(), known.end());
  for (const auto& [k, v] : obj.items()) {
    if (!names.count(k)) throw ConfigError(std::string("unknown key ") + section + "." + k);
  }
}

}  // namespace

std::string to_json(const RunConfig& config) { return to_tree(config).dump(2); }

RunConfig parse_run_config(const std::string& text, const RunConfig& base) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(root, "config", {"data", "model", "loss", "train"});
  RunConfig c = base;
  if (root.contains("data")) {
    const Json& s = root["data"];
    reject_unknown(s, "data", {"train_cases", "val_cases", "test_cases", "modalities", "feature_dims", "horizon",
                               "event_rate", "modality_missing", "label_missing", "task", "noise", "seed"});
    take(s, "data", "train_cases", c.data.train_cases);
    take(s, "data", "val_cases", c.data.val_cases);
    take(s, "data", "test_cases", c.data.test_cases);
    take(s, "data", "modalities", c.data.modalities);
    take(s, "data", "feature_dims", c.data.feature_dims);
    take(s, "data", "horizon", c.data.horizon);
    take(s, "data", "event_rate", c.data.event_rate);
    take(s, "data", "modality_missing", c.data.modality_missing);
    take(s, "data", "label_missing", c.data.label_missing);
    std::string task = task_name(c.data.task);
    take(s, "data", "task", task);
    try {
      c.data.task = parse_task(task);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    take(s, "data", "noise", c.data.noise);
    take(s, "data", "seed", c.data.seed);
  }
  if (root.contains("model")) {
    const Json& s = root["model"];
    reject_unknown(s, "model", {"width", "heads", "rank", "ffn_multiplier", "delta", "k_max", "grid1", "grid3",
                                "pre_norm", "isolate_reconstruction", "init_seed"});
    take(s, "model", "width", c.model.width);
    take(s, "model", "heads", c.model.heads);
    take(s, "model", "rank", c.model.rank);
    take(s, "model", "ffn_multiplier", c.model.ffn_multiplier);
    take(s, "model", "delta", c.model.delta);
    take(s, "model", "k_max", c.model.k_max);
    take(s, "model", "grid1", c.model.grid1.interval);
    take(s, "model", "grid3", c.model.grid3.interval);
    take(s, "model", "pre_norm", c.model.pre_norm);
    take(s, "model", "isolate_reconstruction", c.model.isolate_reconstruction);
    take(s, "model", "init_seed", c.model.init_seed);
  }
  if (root.contains("loss")) {
    const Json& s = root["loss"];
    reject_unknown(s, "loss", {"lambda_a", "lambda_r", "normalize", "detach_target", "temperature", "fga_excluded"});
    take(s, "loss", "lambda_a", c.loss.lambda_a);
    take(s, "loss", "lambda_r", c.loss.lambda_r);
    take(s, "loss", "normalize", c.loss.normalize);
    take(s, "loss", "detach_target", c.loss.detach_target);
    take(s, "loss", "temperature", c.loss.fga.temperature);
    take(s, "loss", "fga_excluded", c.loss.fga.excluded);
  }
  if (root.contains("train")) {
    const Json& s = root["train"];
    reject_unknown(s, "train", {"epochs", "batch_size", "learning_rate", "weight_decay", "seed", "branch"});
    take(s, "train", "epochs", c.train.epochs);
    take(s, "train", "batch_size", c.train.batch_size);
    take(s, "train", "learning_rate", c.train.learning_rate);
    take(s, "train", "weight_decay", c.train.weight_decay);
    take(s, "train", "seed", c.train.seed);
    std::string branch = inference_mode_name(c.train.branch);
    take(s, "train", "branch", branch);
    c.train.branch = parse_inference_mode(branch);
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), base);
}

std::string config_hash(const RunConfig& config) {
  const std::string text = to_tree(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace hp
