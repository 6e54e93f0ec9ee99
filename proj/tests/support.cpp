#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace hp::test {

ModelConfig tiny_model(std::uint64_t seed, std::size_t rank) {
  ModelConfig mc;
  mc.feature_dims = {3, 3};
  mc.width = 8;
  mc.heads = 2;
  mc.rank = rank;
  mc.ffn_multiplier = 2;
  mc.k_max = 4;
  mc.grid1 = AnchorGrid{{2.0, 4.0}, 12.0};
  mc.grid3 = AnchorGrid{{4.0, 6.0}, 12.0};
  mc.init_seed = seed;
  return mc;
}

EventBatch tiny_batch(std::uint64_t seed, std::size_t cases, double modality_missing, TaskKind task) {
  GenConfig g;
  g.feature_dims = {3, 3};
  g.horizon = 12.0;
  g.event_rate = {0.5, 0.4};
  g.modality_missing = modality_missing;
  g.task = task;
  g.seed = seed;
  return generate_split(g, cases, 0, false, 1);
}

EventBatch random_batch(Rng& rng, std::size_t max_cases, std::size_t max_events, std::size_t modalities) {
  const std::size_t C = 1 + rng.index(max_cases);
  const std::size_t E = C + rng.index(max_events - C + 1);
  std::map<std::tuple<std::int64_t, std::uint32_t, double>, ClinicalEvent> unique;
  for (std::size_t i = 0; i < E; ++i) {
    ClinicalEvent ev;
    ev.case_id = static_cast<std::int64_t>(i < C ? i : rng.index(C));
    ev.modality = static_cast<std::uint32_t>(rng.index(modalities));
    ev.timestamp = 0.5 * static_cast<double>(rng.index(25));
    ev.content = {rng.normal(), rng.normal()};
    unique[{ev.case_id, ev.modality, ev.timestamp}] = ev;
  }
  std::vector<ClinicalEvent> events;
  for (auto& [k, e] : unique) events.push_back(e);
  return make_batch(BatchSpec{modalities, 12.0}, std::move(events), {});
}

PointCloud cloud_with_tokens(Tape& tape, const EventBatch& batch, const Rows& tokens) {
  PointCloud p;
  p.cases = batch.size();
  p.modalities = batch.modalities();
  p.offsets.assign(p.cases * p.modalities + 1, 0);
  for (std::size_t c = 0; c < p.cases; ++c) {
    for (std::size_t m = 0; m < p.modalities; ++m) p.availability.push_back(batch[c].availability[m]);
  }
  for (std::size_t m = 0; m < p.modalities; ++m) {
    for (std::size_t c = 0; c < p.cases; ++c) {
      std::size_t count = 0;
      for (const auto& e : batch[c].events) {
        if (e.modality != m) continue;
        p.time.push_back(e.timestamp);
        p.modality.push_back(static_cast<std::uint32_t>(m));
        p.case_index.push_back(static_cast<std::uint32_t>(c));
        ++count;
      }
      const std::size_t b = m * p.cases + c;
      p.offsets[b + 1] = p.offsets[b] + count;
    }
  }
  if (tokens.size() != p.size()) throw std::invalid_argument("cloud_with_tokens: wrong token count");
  p.tokens = tape.constant(tensor_of(tokens));
  return p;
}

PointCloud random_cloud(Tape& tape, const EventBatch& batch, std::size_t width, Rng& rng) {
  Rows tokens(batch.event_count());
  for (auto& r : tokens) r = random_row(rng, width);
  return cloud_with_tokens(tape, batch, tokens);
}

Rows rows_of(const Tensor& t) {
  Rows out(t.rows(), Row(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) out[r][c] = t.at(r, c);
  }
  return out;
}

Tensor tensor_of(const Rows& rows) {
  const std::size_t n = rows.size(), d = n ? rows[0].size() : 0;
  Tensor t({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) t.at(r, c) = rows[r][c];
  }
  return t;
}

Row random_row(Rng& rng, std::size_t n, double stddev) {
  Row v(n);
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return v;
}

std::vector<std::uint32_t> brute_neighbours(const PointCloud& p, int level, std::size_t i,
                                            const NeighborhoodOptions& opt) {
  std::vector<std::uint32_t> out;
  const std::size_t n = p.size();
  if (level == 1) {
    std::vector<std::pair<double, std::uint32_t>> cand;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || p.case_index[j] != p.case_index[i] || p.modality[j] != p.modality[i]) continue;
      const double gap = std::abs(p.time[j] - p.time[i]);
      if (gap <= opt.delta) cand.emplace_back(gap, static_cast<std::uint32_t>(j));
    }
    std::sort(cand.begin(), cand.end());
    if (cand.size() > opt.k_max - 1) cand.resize(opt.k_max - 1);
    out.push_back(static_cast<std::uint32_t>(i));
    for (const auto& c : cand) out.push_back(c.second);
    std::sort(out.begin(), out.end());
    return out;
  }
  for (std::size_t j = 0; j < n; ++j) {
    const bool same_case = p.case_index[j] == p.case_index[i];
    const bool same_mod = p.modality[j] == p.modality[i];
    bool in = false;
    switch (level) {
      case 2: in = same_case && same_mod; break;
      case 3: in = j == i || (same_case && !same_mod); break;
      case 4: in = j == i || !same_case; break;
      case 5: in = same_case; break;
      default: throw std::invalid_argument("level must be 1..5");
    }
    if (in) out.push_back(static_cast<std::uint32_t>(j));
  }
  return out;
}

double dot(const Row& a, const Row& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Row linear_ref(const Linear& layer, const Row& x) {
  const Tensor& w = layer.weight->value;
  const std::size_t in = w.dim(0), out = w.dim(1);
  Row y(out, 0.0);
  for (std::size_t k = 0; k < out; ++k) {
    for (std::size_t i = 0; i < in; ++i) y[k] += x[i] * w.at(i, k);
    if (layer.bias) y[k] += layer.bias->value[k];
  }
  return y;
}

double gelu_ref(double x) {
  const double c = std::sqrt(2.0 / 3.14159265358979323846);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

Row mlp_ref(const Mlp& mlp, const Row& x) {
  Row h = linear_ref(mlp.first, x);
  for (auto& v : h) {
    switch (mlp.activation) {
      case Activation::identity: break;
      case Activation::relu: v = v > 0 ? v : 0.0; break;
      case Activation::tanh: v = std::tanh(v); break;
      case Activation::gelu: v = gelu_ref(v); break;
    }
  }
  return linear_ref(mlp.second, h);
}

Row layer_norm_ref(const LayerNorm& norm, const Row& x) {
  const double n = static_cast<double>(x.size());
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= n;
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= n;
  Row y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = (x[i] - mu) / std::sqrt(var + 1e-5) * norm.gain->value[i] + norm.bias->value[i];
  }
  return y;
}

Row logits_ref(const LowRankCoupling& coupling, const std::vector<std::pair<Dim, Row>>& relations) {
  const std::size_t H = coupling.heads(), R = coupling.rank(), hw = coupling.head_width();
  Row out(H, 0.0);
  for (std::size_t h = 0; h < H; ++h) {
    double coupled = 0.0;
    for (std::size_t g = 0; g < R; ++g) {
      double prod = 1.0;
      for (const auto& [d, r] : relations) {
        const Tensor& q = coupling.q(d).value;
        double s = 0.0;
        for (std::size_t e = 0; e < hw; ++e) s += q[(h * R + g) * hw + e] * r[h * hw + e];
        prod *= s;
      }
      coupled += prod;
    }
    double unary = 0.0;
    for (const auto& [d, r] : relations) {
      const Tensor& w = coupling.w(d).value;
      for (std::size_t e = 0; e < hw; ++e) unary += w[h * hw + e] * r[h * hw + e];
    }
    out[h] = coupled + unary + coupling.bias().value[h];
  }
  return out;
}

namespace {

// Weighted sum of per-head value chunks under softmax(logits) for each head.
Row attend_ref(const Rows& logits, const Rows& values, std::size_t heads, Rows* alpha_out) {
  const std::size_t k = logits.size(), d = values[0].size(), hw = d / heads;
  Row out(d, 0.0);
  Rows alpha(k, Row(heads));
  for (std::size_t h = 0; h < heads; ++h) {
    double mx = -INFINITY;
    for (const auto& l : logits) mx = std::max(mx, l[h]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logits[j][h] - mx);
    for (std::size_t j = 0; j < k; ++j) {
      alpha[j][h] = std::exp(logits[j][h] - mx) / z;
      for (std::size_t e = 0; e < hw; ++e) out[h * hw + e] += alpha[j][h] * values[j][h * hw + e];
    }
  }
  if (alpha_out) alpha_out->insert(alpha_out->end(), alpha.begin(), alpha.end());
  return out;
}

}  // namespace

Rows lrrl_ref(const LrrlLayer& layer, const PointCloud& cloud, const Rows& tokens, const Csr& neighbours,
              const Rows& case_rows, Rows* alpha_out) {
  const LrrlConfig& cfg = layer.config();
  const RelationParams& rel = layer.relations();
  const std::size_t n = tokens.size(), M = cloud.modalities, C = cloud.cases;
  Rows x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = cfg.pre_norm ? layer_norm_ref(layer.norm1(), tokens[i]) : tokens[i];
  Rows values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = linear_ref(layer.value(), x[i]);

  Rows out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rows logits, vals;
    for (auto j : neighbours.row(i)) {
      std::vector<std::pair<Dim, Row>> r;
      for (Dim d : cfg.dims.list()) {
        switch (d) {
          case Dim::content: {
            Row a = linear_ref(rel.query, x[i]);
            const Row b = linear_ref(rel.key, x[j]);
            for (std::size_t e = 0; e < a.size(); ++e) a[e] -= b[e];
            r.emplace_back(d, a);
            break;
          }
          case Dim::time: r.emplace_back(d, mlp_ref(rel.time, {cloud.time[i] - cloud.time[j]})); break;
          case Dim::modality: {
            const std::size_t row = cloud.modality[i] * M + cloud.modality[j];
            const Tensor& em = rel.affinity->value;
            r.emplace_back(d, Row(em.row(row).begin(), em.row(row).end()));
            break;
          }
          case Dim::case_: r.emplace_back(d, case_rows.at(cloud.case_index[i] * C + cloud.case_index[j])); break;
        }
      }
      logits.push_back(logits_ref(layer.coupling(), r));
      vals.push_back(values[j]);
    }
    const Row a = attend_ref(logits, vals, cfg.heads, alpha_out);
    Row z(tokens[i]);
    for (std::size_t e = 0; e < z.size(); ++e) z[e] += a[e];
    const Row f = mlp_ref(layer.ffn(), cfg.pre_norm ? layer_norm_ref(layer.norm2(), z) : z);
    for (std::size_t e = 0; e < z.size(); ++e) z[e] += f[e];
    out[i] = z;
  }
  return out;
}

Row lrrsl_anchor_ref(const LrrslLayer& layer, std::size_t handled_index, double anchor_time, const Rows& block_tokens,
                     const std::vector<double>& block_times) {
  const RelationParams& rel = layer.relations();
  const Tensor& qs = layer.anchor_queries().value;
  const Row q(qs.row(handled_index).begin(), qs.row(handled_index).end());
  const Row qq = linear_ref(rel.query, q);
  Rows logits, vals;
  for (std::size_t j = 0; j < block_tokens.size(); ++j) {
    Row rh = qq;
    const Row k = linear_ref(rel.key, block_tokens[j]);
    for (std::size_t e = 0; e < rh.size(); ++e) rh[e] -= k[e];
    const Row rt = mlp_ref(rel.time, {anchor_time - block_times[j]});
    logits.push_back(logits_ref(layer.coupling(), {{Dim::content, rh}, {Dim::time, rt}}));
    vals.push_back(linear_ref(layer.value(), block_tokens[j]));
  }
  return attend_ref(logits, vals, layer.config().heads, nullptr);
}

namespace {

double sigmoid_ref(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Row gru_step_ref(const GruCell& cell, const Row& x, const Row& h) {
  const Row gx = linear_ref(cell.input, x);
  const Row gh = linear_ref(cell.hidden, h);
  const std::size_t w = cell.width;
  Row out(w);
  for (std::size_t k = 0; k < w; ++k) {
    const double z = sigmoid_ref(gx[k] + gh[k]);
    const double r = sigmoid_ref(gx[w + k] + gh[w + k]);
    const double n = std::tanh(gx[2 * w + k] + r * gh[2 * w + k]);
    out[k] = (1.0 - z) * n + z * h[k];
  }
  return out;
}

}  // namespace

Row bigru_ref(const BiGru& gru, const Rows& steps) {
  Row hf(gru.forward_cell.width, 0.0), hb(gru.backward_cell.width, 0.0);
  for (const auto& x : steps) hf = gru_step_ref(gru.forward_cell, x, hf);
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) hb = gru_step_ref(gru.backward_cell, *it, hb);
  hf.insert(hf.end(), hb.begin(), hb.end());
  return linear_ref(gru.readout, hf);
}

double auroc_pairs(const std::vector<double>& scores, const std::vector<int>& labels) {
  double good = 0.0, total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      total += 1.0;
      if (scores[i] > scores[j]) good += 1.0;
      else if (scores[i] == scores[j]) good += 0.5;
    }
  }
  return good / total;
}

double auprc_thresholds(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::vector<double> thresholds(scores);
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double positives = 0.0;
  for (int l : labels) positives += l;
  double ap = 0.0, prev_recall = 0.0;
  for (double t : thresholds) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) (labels[i] ? tp : fp) += 1.0;
    }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return ap;
}

}  // namespace hp::test
