#include "healthpoint/lrrl.hpp"

#include <stdexcept>

namespace hp {

LrrlLayer::LrrlLayer(ParameterStore& store, const std::string& name, const LrrlConfig& config, Rng& rng)
    : config_(config),
      relations_(store, name + ".rel", config.dims, config.width, config.modalities, rng),
      coupling_(store, name + ".couple", config.dims, config.width, config.heads, config.rank, rng),
      value_(store, name + ".W_V", config.width, config.width, rng, false),
      ffn_(store, name + ".ffn", config.width, config.ffn_hidden, config.width, Activation::gelu, rng) {
  if (config.pre_norm) {
    norm1_ = LayerNorm(store, name + ".norm1", config.width);
    norm2_ = LayerNorm(store, name + ".norm2", config.width);
  }
  if (config.reconstruction) {
    rec_.emplace(store, name + ".rec", config.width, config.ffn_hidden, config.width, Activation::gelu, rng);
  }
}

EdgeIndex self_edges(const PointCloud& cloud, const Csr& neighbours) {
  if (neighbours.rows() != cloud.size()) {
    throw std::invalid_argument("neighbourhoods cover " + std::to_string(neighbours.rows()) + " tokens, cloud has " +
                                std::to_string(cloud.size()));
  }
  EdgeIndex ix;
  const std::size_t E = neighbours.nnz();
  ix.query.reserve(E);
  ix.key.reserve(E);
  ix.interval.reserve(E);
  ix.modality_pair.reserve(E);
  ix.case_pair.reserve(E);
  const auto M = static_cast<std::uint32_t>(cloud.modalities);
  const auto C = static_cast<std::uint32_t>(cloud.cases);
  for (std::size_t i = 0; i < neighbours.rows(); ++i) {
    const auto members = neighbours.row(i);
    if (members.empty()) throw std::domain_error("token " + std::to_string(i) + " has an empty neighbourhood");
    for (auto j : members) {
      ix.query.push_back(static_cast<std::uint32_t>(i));
      ix.key.push_back(j);
      ix.interval.push_back(cloud.time[i] - cloud.time[j]);
      ix.modality_pair.push_back(cloud.modality[i] * M + cloud.modality[j]);
      ix.case_pair.push_back(cloud.case_index[i] * C + cloud.case_index[j]);
    }
  }
  return ix;
}

Var case_table(Tape& tape, const RelationParams& params, const PointCloud& cloud) {
  std::vector<CasePair> pairs;
  pairs.reserve(cloud.cases * cloud.cases);
  for (std::uint32_t a = 0; a < cloud.cases; ++a) {
    for (std::uint32_t b = 0; b < cloud.cases; ++b) pairs.push_back({a, b});
  }
  return case_relation(tape, params, cloud, pairs);
}

LrrlLayer::Output LrrlLayer::forward(Tape& tape, const PointCloud& in, const Csr& neighbours) const {
  const Var h = in.tokens;
  const Var x = config_.pre_norm ? norm1_.forward(tape, h) : h;
  const EdgeIndex edges = self_edges(in, neighbours);
  Var cases;
  if (config_.dims.has(Dim::case_)) cases = case_table(tape, relations_, in.with_tokens(x));
  const Var logits = relation_logits(tape, relations_, coupling_, x, x, edges, cases);
  Output out;
  out.alpha = ops::segment_softmax(logits, neighbours);
  out.aggregate = ops::attend(out.alpha, value_.forward(tape, x), neighbours);
  const Var z = h + out.aggregate;
  const Var y = z + ffn_.forward(tape, config_.pre_norm ? norm2_.forward(tape, z) : z);
  out.cloud = in.with_tokens(y);
  if (rec_) {
    out.reconstruction =
        rec_->forward(tape, config_.isolate_reconstruction ? tape.constant(out.aggregate.value()) : out.aggregate);
  }
  return out;
}

}  // namespace hp
