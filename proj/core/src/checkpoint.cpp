#include "healthpoint/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace hp {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'H', 'P', 'C', 'K', 'P', 'T', '0', '1'};
const std::string kMomentFirst = "adamw.m/";
const std::string kMomentSecond = "adamw.v/";

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError("truncated checkpoint");
  return v;
}

std::string get_string(std::istream& is, std::size_t n) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw CheckpointError("truncated checkpoint");
  return s;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : entries) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  const auto& m = checkpoint.manifest;
  nlohmann::ordered_json manifest;
  manifest["config_hash"] = m.config_hash;
  manifest["step"] = m.step;
  manifest["epoch"] = m.epoch;
  manifest["config"] = nlohmann::ordered_json::parse(m.config_json);
  manifest["state"] = nlohmann::ordered_json::parse(m.state_json);
  const std::string text = manifest.dump();
  os.write(kMagic, sizeof(kMagic));
  put<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint64_t>(os, checkpoint.entries.size());
  for (const auto& [name, tensor] : checkpoint.entries) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.ndim()));
    for (auto e : tensor.shape()) put<std::uint64_t>(os, e);
    os.write(reinterpret_cast<const char*>(tensor.data().data()),
             static_cast<std::streamsize>(tensor.size() * sizeof(double)));
  }
  if (!os) throw CheckpointError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint archive");
  }
  Checkpoint ck;
  const auto mlen = get<std::uint64_t>(is);
  try {
    const auto manifest = nlohmann::ordered_json::parse(get_string(is, mlen));
    ck.manifest.config_hash = manifest.at("config_hash").get<std::string>();
    ck.manifest.step = manifest.at("step").get<std::uint64_t>();
    ck.manifest.epoch = manifest.at("epoch").get<std::uint64_t>();
    ck.manifest.config_json = manifest.at("config").dump();
    if (manifest.contains("state")) ck.manifest.state_json = manifest.at("state").dump();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint manifest: ") + e.what());
  }
  const auto count = get<std::uint64_t>(is);
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = get_string(is, get<std::uint32_t>(is));
    const auto ndim = get<std::uint32_t>(is);
    Shape shape(ndim);
    for (auto& e : shape) e = static_cast<std::size_t>(get<std::uint64_t>(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw CheckpointError("truncated payload for " + name);
    ck.entries.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

Checkpoint capture(const ParameterStore& store, const AdamW* optimizer, CheckpointManifest manifest) {
  Checkpoint ck;
  ck.manifest = std::move(manifest);
  for (const Parameter* p : store.all()) ck.entries.emplace_back(p->name, p->value);
  if (optimizer) {
    ck.manifest.step = optimizer->steps();
    for (const Parameter* p : store.all()) {
      auto it = optimizer->moments().find(p->name);
      if (it == optimizer->moments().end()) continue;
      ck.entries.emplace_back(kMomentFirst + p->name, it->second.first);
      ck.entries.emplace_back(kMomentSecond + p->name, it->second.second);
    }
  }
  return ck;
}

void restore(const Checkpoint& checkpoint, ParameterStore& store, AdamW* optimizer) {
  for (Parameter* p : store.all()) {
    const Tensor* t = checkpoint.find(p->name);
    if (!t) throw CheckpointError("checkpoint lacks parameter " + p->name);
    if (t->shape() != p->value.shape()) {
      throw CheckpointError("parameter " + p->name + " has shape " + to_string(p->value.shape()) +
                            " but the checkpoint stores " + to_string(t->shape()));
    }
    p->value = *t;
    p->zero_grad();
  }
  if (optimizer) {
    std::map<std::string, AdamW::Moments> moments;
    for (Parameter* p : store.all()) {
      const Tensor* m = checkpoint.find(kMomentFirst + p->name);
      const Tensor* v = checkpoint.find(kMomentSecond + p->name);
      if (m && v) moments.emplace(p->name, AdamW::Moments{*m, *v});
    }
    optimizer->restore(checkpoint.manifest.step, std::move(moments));
  }
}

}  // namespace hp
