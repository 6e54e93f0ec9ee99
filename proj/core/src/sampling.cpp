#include "healthpoint/sampling.hpp"

#include <cmath>
#include <stdexcept>

namespace hp {

std::size_t AnchorGrid::count(std::size_t m) const {
  const double dt = interval.at(m);
  if (!(dt > 0.0)) throw std::invalid_argument("anchor interval must be positive");
  return static_cast<std::size_t>(std::floor(horizon / dt)) + 1;
}

std::vector<double> AnchorGrid::anchors(std::size_t m) const {
  const std::size_t n = count(m);
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = static_cast<double>(k) * interval[m];
  return out;
}

LrrslLayer::LrrslLayer(ParameterStore& store, const std::string& name, const LrrslConfig& config, Rng& rng)
    : config_(config),
      relations_(store, name + ".rel", DimSet{Dim::content, Dim::time}, config.width, config.modalities, rng),
      coupling_(store, name + ".couple", DimSet{Dim::content, Dim::time}, config.width, config.heads, config.rank,
                rng),
      value_(store, name + ".W_V", config.width, config.width, rng, false) {
  if (config.handled.empty()) throw std::invalid_argument(name + ": sampling layer handles no modality");
  queries_ = &store.create(name + ".q", rng.normal_tensor({config.handled.size(), config.width}, 1.0));
}

PointCloud LrrslLayer::forward(Tape& tape, const PointCloud& in, const AnchorGrid& grid, MissingPolicy policy) const {
  const std::size_t C = in.cases, M = in.modalities;
  if (grid.interval.size() != M) throw std::invalid_argument("anchor grid does not cover every modality");
  PointCloud out;
  out.cases = C;
  out.modalities = M;
  out.availability = in.availability;
  out.offsets.assign(C * M + 1, 0);

  // Output rows are produced in block order; sampled and placeholder rows are
  // computed separately and interleaved by a final gather.
  EdgeIndex edges;
  Csr csr;
  std::vector<std::uint32_t> placeholder_query;
  std::vector<std::uint8_t> is_sampled;
  std::vector<std::size_t> per_block(C * M, 0);
  for (std::size_t k = 0; k < config_.handled.size(); ++k) {
    const std::uint32_t m = config_.handled[k];
    if (m >= M) throw std::invalid_argument("sampling layer handles modality " + std::to_string(m));
    const auto anchors = grid.anchors(m);
    for (std::size_t c = 0; c < C; ++c) {
      const auto [b, e] = in.block(c, m);
      const bool sample = b < e && (policy == MissingPolicy::sample || in.observed(c, m));
      for (double ta : anchors) {
        if (sample) {
          for (std::size_t j = b; j < e; ++j) {
            edges.query.push_back(static_cast<std::uint32_t>(k));
            edges.key.push_back(static_cast<std::uint32_t>(j));
            edges.interval.push_back(ta - in.time[j]);
          }
          csr.offsets.push_back(edges.key.size());
        } else {
          placeholder_query.push_back(static_cast<std::uint32_t>(k));
        }
        is_sampled.push_back(sample ? 1 : 0);
        out.time.push_back(ta);
        out.modality.push_back(m);
        out.case_index.push_back(static_cast<std::uint32_t>(c));
      }
      per_block[out.block_id(c, m)] = anchors.size();
    }
  }
  csr.cols = edges.key;
  for (std::size_t b = 0; b < per_block.size(); ++b) out.offsets[b + 1] = out.offsets[b] + per_block[b];

  // Rows were emitted modality by modality in handled order, which is block order.
  const Var q = tape.parameter(*queries_);
  std::vector<Var> parts;
  const std::size_t sampled = csr.rows();
  if (sampled > 0) {
    const Var logits = relation_logits(tape, relations_, coupling_, q, in.tokens, edges);
    const Var alpha = ops::segment_softmax(logits, csr);
    parts.push_back(ops::attend(alpha, value_.forward(tape, in.tokens), csr));
  }
  if (!placeholder_query.empty()) parts.push_back(ops::gather_rows(q, placeholder_query));
  const Var stacked = ops::concat(parts, 0);
  std::vector<std::uint32_t> order(is_sampled.size());
  std::uint32_t next_sampled = 0, next_placeholder = static_cast<std::uint32_t>(sampled);
  for (std::size_t r = 0; r < is_sampled.size(); ++r) order[r] = is_sampled[r] ? next_sampled++ : next_placeholder++;
  out.tokens = ops::gather_rows(stacked, order);
  return out;
}

bool grid_align_check(const PointCloud& a, const PointCloud& b, std::size_t m) {
  if (m >= a.modalities || m >= b.modalities) return false;
  const std::vector<double>* reference = nullptr;
  std::vector<double> first;
  for (const PointCloud* cloud : {&a, &b}) {
    for (std::size_t c = 0; c < cloud->cases; ++c) {
      const auto [s, e] = cloud->block(c, m);
      if (s == e) return false;
      std::vector<double> ts(cloud->time.begin() + s, cloud->time.begin() + e);
      if (!reference) {
        first = std::move(ts);
        reference = &first;
      } else if (ts != *reference) {
        return false;
      }
    }
  }
  return reference != nullptr;
}

}  // namespace hp
