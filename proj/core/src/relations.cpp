#include "healthpoint/relations.hpp"

#include <algorithm>
#include <stdexcept>

namespace hp {

RelationParams::RelationParams(ParameterStore& store, const std::string& name, DimSet dims_, std::size_t width_,
                               std::size_t modalities_, Rng& rng)
    : dims(dims_), width(width_), modalities(modalities_) {
  if (dims.has(Dim::content)) {
    query = Linear(store, name + ".W_Q", width, width, rng, false);
    key = Linear(store, name + ".W_K", width, width, rng, false);
  }
  if (dims.has(Dim::time)) time = Mlp(store, name + ".phi_t", 1, width, width, Activation::gelu, rng);
  if (dims.has(Dim::modality)) {
    affinity = &store.create(name + ".E_m", rng.normal_tensor({modalities * modalities, width}, 1.0));
  }
  if (dims.has(Dim::case_)) case_gru = BiGru(store, name + ".case_gru", width, width, width, rng);
}

Var content_relation(Tape& tape, const RelationParams& params, Var hi, Var hj) {
  return params.query.forward(tape, hi) - params.key.forward(tape, hj);
}

Var time_relation(Tape& tape, const RelationParams& params, std::span<const double> dt) {
  Var x = tape.constant(Tensor({dt.size(), 1}, std::vector<double>(dt.begin(), dt.end())));
  return params.time.forward(tape, x);
}

Var modality_relation(Tape& tape, const RelationParams& params,
                      std::span<const std::pair<std::uint32_t, std::uint32_t>> pairs) {
  if (!params.affinity) throw std::logic_error("modality relation is not active for this layer");
  std::vector<std::uint32_t> rows;
  rows.reserve(pairs.size());
  for (auto [a, b] : pairs) {
    if (a >= params.modalities || b >= params.modalities) {
      throw std::out_of_range("modality pair (" + std::to_string(a) + ", " + std::to_string(b) + ") with M=" +
                              std::to_string(params.modalities));
    }
    rows.push_back(a * static_cast<std::uint32_t>(params.modalities) + b);
  }
  return ops::gather_rows(tape.parameter(*params.affinity), rows);
}

Var case_relation(Tape& tape, const RelationParams& params, const PointCloud& cloud, std::span<const CasePair> pairs) {
  const std::size_t width = params.width;
  Var total = tape.constant(Tensor({pairs.size(), width}));
  std::vector<double> members(pairs.size(), 0.0);
  for (std::size_t m = 0; m < cloud.modalities; ++m) {
    std::vector<std::uint32_t> which;
    std::size_t length = 0;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto [a, b] = pairs[p];
      if (!cloud.observed(a, m) || !cloud.observed(b, m)) continue;
      const std::size_t la = cloud.block_size(a, m), lb = cloud.block_size(b, m);
      if (la != lb || la == 0 || (!which.empty() && la != length)) {
        throw std::invalid_argument("case_relation: modality " + std::to_string(m) +
                                    " sequences are not grid-aligned (lengths " + std::to_string(la) + " and " +
                                    std::to_string(lb) + ")");
      }
      length = la;
      which.push_back(static_cast<std::uint32_t>(p));
      members[p] += 1.0;
    }
    if (which.empty()) continue;
    std::vector<Var> steps;
    for (std::size_t s = 0; s < length; ++s) {
      std::vector<std::uint32_t> ra, rb;
      for (auto p : which) {
        ra.push_back(static_cast<std::uint32_t>(cloud.block(pairs[p].first, m).first + s));
        rb.push_back(static_cast<std::uint32_t>(cloud.block(pairs[p].second, m).first + s));
      }
      steps.push_back(ops::gather_rows(cloud.tokens, ra) - ops::gather_rows(cloud.tokens, rb));
    }
    const Var encoded = params.case_gru.forward(tape, steps);
    total = total + ops::scatter_add_rows(encoded, which, pairs.size());
  }
  std::vector<double> weights(pairs.size());
  for (std::size_t p = 0; p < pairs.size(); ++p) weights[p] = members[p] > 0 ? 1.0 / members[p] : 0.0;
  return ops::scale_rows(total, weights);
}

namespace {

struct Tables {
  Var coupled;
  Var unary;
};

Tables project(Tape& tape, const LowRankCoupling& c, Dim d, Var relation) {
  return {ops::head_project(relation, tape.parameter(c.q(d))), ops::head_project(relation, tape.parameter(c.w(d)))};
}

ops::RelationTerm term(const Tables& t, std::vector<std::uint32_t> index, double sign) {
  return ops::RelationTerm{t.coupled, t.unary, std::move(index), sign};
}

}  // namespace

Var relation_logits(Tape& tape, const RelationParams& params, const LowRankCoupling& coupling, Var query_x,
                    Var key_x, const EdgeIndex& edges, Var case_table) {
  const DimSet dims = coupling.dims();
  const std::size_t E = edges.size();
  std::vector<ops::RelationDim> rel;
  for (Dim d : dims.list()) {
    ops::RelationDim rd;
    switch (d) {
      case Dim::content: {
        const Tables q = project(tape, coupling, d, params.query.forward(tape, query_x));
        const Tables k = project(tape, coupling, d, params.key.forward(tape, key_x));
        rd.terms.push_back(term(q, edges.query, 1.0));
        rd.terms.push_back(term(k, edges.key, -1.0));
        break;
      }
      case Dim::time: {
        std::vector<double> distinct(edges.interval);
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        std::vector<std::uint32_t> index(E);
        for (std::size_t e = 0; e < E; ++e) {
          index[e] = static_cast<std::uint32_t>(
              std::lower_bound(distinct.begin(), distinct.end(), edges.interval[e]) - distinct.begin());
        }
        rd.terms.push_back(term(project(tape, coupling, d, time_relation(tape, params, distinct)), std::move(index), 1.0));
        break;
      }
      case Dim::modality: {
        if (!params.affinity) throw std::logic_error("modality relation parameters missing");
        rd.terms.push_back(term(project(tape, coupling, d, tape.parameter(*params.affinity)), edges.modality_pair, 1.0));
        break;
      }
      case Dim::case_: {
        if (!case_table.valid()) throw std::logic_error("case relation requested without a case table");
        rd.terms.push_back(term(project(tape, coupling, d, case_table), edges.case_pair, 1.0));
        break;
      }
    }
    rel.push_back(std::move(rd));
  }
  return ops::relational_logits(rel, tape.parameter(coupling.bias()), E, coupling.rank());
}

}  // namespace hp
