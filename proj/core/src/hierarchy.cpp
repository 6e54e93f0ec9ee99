#include "healthpoint/hierarchy.hpp"

#include <stdexcept>

#include "healthpoint/selfsup.hpp"

namespace hp {
namespace {

LrrlConfig block_config(const ModelConfig& c, int level, bool reconstruction) {
  LrrlConfig lc;
  lc.dims = level_spec(level).dims;
  lc.width = c.width;
  lc.heads = c.heads;
  lc.rank = c.rank;
  lc.modalities = c.modalities;
  lc.ffn_hidden = c.ffn_multiplier * c.width;
  lc.pre_norm = c.pre_norm;
  lc.reconstruction = reconstruction;
  lc.isolate_reconstruction = c.isolate_reconstruction;
  return lc;
}

LrrslConfig sampler_config(const ModelConfig& c, std::vector<std::uint32_t> handled) {
  return LrrslConfig{c.width, c.heads, c.rank, c.modalities, std::move(handled)};
}

}  // namespace

HierarchyModel::HierarchyModel(const ModelConfig& config) : config_(config) {
  if (config.feature_dims.size() != config.modalities) {
    throw std::invalid_argument("feature_dims lists " + std::to_string(config.feature_dims.size()) +
                                " modalities, config has " + std::to_string(config.modalities));
  }
  if (config.grid1.interval.size() != config.modalities || config.grid3.interval.size() != config.modalities) {
    throw std::invalid_argument("anchor grids must give one interval per modality");
  }
  Rng rng(config.init_seed);
  encoder_ = ModalityEncoder(store_, "encoder", config.feature_dims, config.width, Activation::gelu, rng);
  for (std::size_t m = 0; m < config.modalities; ++m) {
    const std::string tag = ".m" + std::to_string(m);
    local_.emplace_back(store_, "l1" + tag, block_config(config, 1, false), rng);
    sampler1_.emplace_back(store_, "s1" + tag, sampler_config(config, {static_cast<std::uint32_t>(m)}), rng);
    intra_.emplace_back(store_, "l2" + tag, block_config(config, 2, false), rng);
    projection_.emplace_back(store_, "proj" + tag, config.width, config.width, rng);
  }
  std::vector<std::uint32_t> all(config.modalities);
  for (std::size_t m = 0; m < config.modalities; ++m) all[m] = static_cast<std::uint32_t>(m);
  cross_modality_ = LrrlLayer(store_, "l3", block_config(config, 3, true), rng);
  sampler3_ = LrrslLayer(store_, "s3", sampler_config(config, all), rng);
  cross_sample_ = LrrlLayer(store_, "l4", block_config(config, 4, true), rng);
  fusion_ = LrrlLayer(store_, "l5", block_config(config, 5, false), rng);
  heads_.fusion = Linear(store_, "head.fusion", config.modalities * config.width, 2, rng);
  for (std::size_t m = 0; m < config.modalities; ++m) {
    heads_.modality.emplace_back(store_, "head.m" + std::to_string(m), config.width, 2, rng);
  }
}

Var HierarchyModel::reconstruct(Tape& tape, const PointCloud& h3bar, Var h3r, Var h4r, PointCloud* h3r_sampled) const {
  PointCloud sampled = sampler3_.forward(tape, h3bar.with_tokens(h3r), config_.grid3, MissingPolicy::sample);
  const Var hhat = sampled.tokens + h4r;
  if (h3r_sampled) *h3r_sampled = std::move(sampled);
  return hhat;
}

LayerOutputs HierarchyModel::forward(Tape& tape, const EventBatch& batch) const {
  if (batch.modalities() != config_.modalities) {
    throw std::invalid_argument("batch has " + std::to_string(batch.modalities()) + " modalities, model expects " +
                                std::to_string(config_.modalities));
  }
  if (batch.size() == 0) throw std::invalid_argument("empty batch");
  const NeighborhoodOptions nopt = neighborhood_options();
  LayerOutputs out;
  out.encoded = encode(tape, batch, encoder_);

  std::vector<PointCloud> level2, projected;
  for (std::size_t m = 0; m < config_.modalities; ++m) {
    const PointCloud raw = out.encoded.part(m);
    // A modality absent from the whole batch has nothing to attend over; its blocks become placeholders.
    const PointCloud h1 = raw.size() ? local_[m].forward(tape, raw, build_neighborhoods(raw, 1, nopt)).cloud : raw;
    const PointCloud h2 = sampler1_[m].forward(tape, h1, config_.grid1, MissingPolicy::placeholder);
    const PointCloud h2bar = intra_[m].forward(tape, h2, build_neighborhoods(h2, 2, nopt)).cloud;
    projected.push_back(h2bar.with_tokens(projection_[m].forward(tape, h2bar.tokens)));
    level2.push_back(h2bar);
  }
  out.h2bar = PointCloud::merge(level2);
  const PointCloud x3 = PointCloud::merge(projected);

  auto l3 = cross_modality_.forward(tape, x3, build_neighborhoods(x3, 3, nopt));
  out.h3bar = l3.cloud;
  out.h3r = l3.reconstruction;
  out.h4 = sampler3_.forward(tape, out.h3bar, config_.grid3, MissingPolicy::placeholder);

  auto l4 = cross_sample_.forward(tape, out.h4, build_neighborhoods(out.h4, 4, nopt));
  out.h4bar = l4.cloud;
  out.h4r = l4.reconstruction;
  out.hhat = reconstruct(tape, out.h3bar, out.h3r, out.h4r, &out.h3r_sampled);
  out.h4bar_recovered = out.h4bar.with_tokens(recovery_update(out.h4bar, out.hhat));

  out.h5bar = fusion_.forward(tape, out.h4bar_recovered, build_neighborhoods(out.h4bar_recovered, 5, nopt)).cloud;
  return out;
}

}  // namespace hp
