#include "healthpoint/pointcloud.hpp"

#include <stdexcept>

namespace hp {

Var PointCloud::slice(std::size_t c, std::size_t m) const {
  const auto [b, e] = block(c, m);
  return ops::slice(tokens, 0, b, e);
}

PointCloud PointCloud::with_tokens(Var new_tokens) const {
  if (new_tokens.value().ndim() != 2 || new_tokens.value().rows() != size()) {
    throw ShapeError("with_tokens: " + to_string(new_tokens.shape()) + " for a cloud of " +
                     std::to_string(size()) + " points");
  }
  PointCloud out = *this;
  out.tokens = new_tokens;
  return out;
}

PointCloud PointCloud::part(std::size_t m) const {
  PointCloud out;
  out.cases = cases;
  out.modalities = modalities;
  out.availability = availability;
  const std::size_t begin = offsets[block_id(0, m)];
  const std::size_t end = offsets[block_id(0, m) + cases];
  out.tokens = ops::slice(tokens, 0, begin, end);
  out.time.assign(time.begin() + begin, time.begin() + end);
  out.modality.assign(modality.begin() + begin, modality.begin() + end);
  out.case_index.assign(case_index.begin() + begin, case_index.begin() + end);
  out.offsets.assign(cases * modalities + 1, 0);
  for (std::size_t b = 0; b < cases * modalities; ++b) {
    const std::size_t mb = b / cases;
    std::size_t n = 0;
    if (mb == m) n = offsets[b + 1] - offsets[b];
    out.offsets[b + 1] = out.offsets[b] + n;
  }
  return out;
}

PointCloud PointCloud::merge(const std::vector<PointCloud>& parts) {
  if (parts.empty()) throw std::invalid_argument("merge of zero clouds");
  PointCloud out;
  out.cases = parts.front().cases;
  out.modalities = parts.front().modalities;
  out.availability = parts.front().availability;
  out.offsets.assign(out.cases * out.modalities + 1, 0);
  std::vector<Var> pieces;
  std::size_t next_block = 0;
  for (const auto& p : parts) {
    if (p.cases != out.cases || p.modalities != out.modalities) {
      throw std::invalid_argument("merge: clouds disagree on batch layout");
    }
    // Blocks of this part must not precede blocks already taken from earlier parts.
    for (std::size_t b = 0; b < p.cases * p.modalities; ++b) {
      if (p.offsets[b + 1] == p.offsets[b]) continue;
      if (b < next_block) throw std::invalid_argument("merge: parts overlap or are out of modality order");
    }
    for (std::size_t b = 0; b < p.cases * p.modalities; ++b) {
      const std::size_t n = p.offsets[b + 1] - p.offsets[b];
      if (n) next_block = b + 1;
    }
    pieces.push_back(p.tokens);
    out.time.insert(out.time.end(), p.time.begin(), p.time.end());
    out.modality.insert(out.modality.end(), p.modality.begin(), p.modality.end());
    out.case_index.insert(out.case_index.end(), p.case_index.begin(), p.case_index.end());
  }
  std::vector<std::size_t> counts(out.cases * out.modalities, 0);
  for (const auto& p : parts) {
    for (std::size_t b = 0; b < counts.size(); ++b) counts[b] += p.offsets[b + 1] - p.offsets[b];
  }
  for (std::size_t b = 0; b < counts.size(); ++b) out.offsets[b + 1] = out.offsets[b] + counts[b];
  out.tokens = ops::concat(pieces, 0);
  return out;
}

Csr PointCloud::blocks() const {
  Csr csr;
  csr.offsets = offsets;
  csr.cols.resize(size());
  for (std::size_t i = 0; i < size(); ++i) csr.cols[i] = static_cast<std::uint32_t>(i);
  return csr;
}

std::vector<std::uint8_t> PointCloud::token_mask() const {
  std::vector<std::uint8_t> mask(size());
  for (std::size_t i = 0; i < size(); ++i) mask[i] = observed(case_index[i], modality[i]) ? 1 : 0;
  return mask;
}

void PointCloud::validate() const {
  const std::size_t n = size();
  if (modality.size() != n || case_index.size() != n) throw std::logic_error("coordinate arrays differ in length");
  if (tokens.valid() && tokens.value().rows() != n) throw std::logic_error("token rows differ from coordinates");
  if (availability.size() != cases * modalities) throw std::logic_error("availability has the wrong size");
  if (offsets.size() != cases * modalities + 1 || offsets.front() != 0 || offsets.back() != n) {
    throw std::logic_error("block index does not cover the cloud");
  }
  for (std::size_t m = 0; m < modalities; ++m) {
    for (std::size_t c = 0; c < cases; ++c) {
      const auto [b, e] = block(c, m);
      if (b > e) throw std::logic_error("block offsets decrease");
      for (std::size_t i = b; i < e; ++i) {
        if (modality[i] != m || case_index[i] != c) throw std::logic_error("token filed under the wrong block");
        if (i > b && time[i] < time[i - 1]) throw std::logic_error("block not in time order");
      }
    }
  }
}

ModalityEncoder::ModalityEncoder(ParameterStore& store, const std::string& name,
                                 const std::vector<std::size_t>& feature_dims, std::size_t width, Activation act,
                                 Rng& rng) {
  for (std::size_t m = 0; m < feature_dims.size(); ++m) {
    mlps.emplace_back(store, name + "." + std::to_string(m), feature_dims[m], width, width, act, rng);
  }
}

PointCloud encode(Tape& tape, const EventBatch& batch, const ModalityEncoder& encoder) {
  const std::size_t M = batch.modalities();
  const std::size_t C = batch.size();
  if (encoder.modalities() != M) {
    throw ShapeError("encode: " + std::to_string(encoder.modalities()) + " encoders for " + std::to_string(M) +
                     " modalities");
  }
  PointCloud cloud;
  cloud.cases = C;
  cloud.modalities = M;
  cloud.availability.resize(C * M);
  cloud.offsets.assign(C * M + 1, 0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t m = 0; m < M; ++m) cloud.availability[c * M + m] = batch[c].availability[m];
  }
  std::vector<Var> parts;
  for (std::size_t m = 0; m < M; ++m) {
    const std::size_t in = encoder.mlps[m].first.in_features();
    std::vector<double> raw;
    std::size_t rows = 0;
    for (std::size_t c = 0; c < C; ++c) {
      for (const auto& e : batch[c].events) {
        if (e.modality != m) continue;
        if (e.content.size() != in) {
          throw ShapeError("encode: modality " + std::to_string(m) + " event of case " + std::to_string(e.case_id) +
                           " has content shape (" + std::to_string(e.content.size()) + ") but the encoder expects (" +
                           std::to_string(in) + ")");
        }
        raw.insert(raw.end(), e.content.begin(), e.content.end());
        cloud.time.push_back(e.timestamp);
        cloud.modality.push_back(static_cast<std::uint32_t>(m));
        cloud.case_index.push_back(static_cast<std::uint32_t>(c));
        ++rows;
      }
      const std::size_t b = m * C + c;
      cloud.offsets[b + 1] = cloud.time.size();
    }
    Var x = tape.constant(Tensor({rows, in}, std::move(raw)));
    parts.push_back(encoder.mlps[m].forward(tape, x));
  }
  cloud.tokens = ops::concat(parts, 0);
  return cloud;
}

}  // namespace hp
