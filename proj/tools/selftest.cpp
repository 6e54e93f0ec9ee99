#include "selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "healthpoint/gradcheck.hpp"
#include "healthpoint/objectives.hpp"
#include "healthpoint/synthgen.hpp"

namespace hp::tools {

Fault parse_fault(const std::string& name) {
  if (name.empty() || name == "none") return Fault::none;
  if (name == "coupling") return Fault::coupling;
  if (name == "gradient") return Fault::gradient;
  if (name == "neighborhood") return Fault::neighborhood;
  if (name == "mask") return Fault::mask;
  if (name == "recovery") return Fault::recovery;
  throw std::invalid_argument("unknown fault '" + name + "'");
}

namespace {

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

// Small model and batch shared by the gradient and recovery checks.
ModelConfig tiny_model(std::uint64_t seed) {
  ModelConfig mc;
  mc.feature_dims = {3, 3};
  mc.width = 8;
  mc.heads = 2;
  mc.rank = 2;
  mc.ffn_multiplier = 2;
  mc.k_max = 4;
  mc.grid1 = AnchorGrid{{2.0, 4.0}, 12.0};
  mc.grid3 = AnchorGrid{{4.0, 6.0}, 12.0};
  mc.init_seed = seed;
  return mc;
}

EventBatch tiny_batch(std::uint64_t seed, std::size_t cases, double modality_missing) {
  GenConfig g;
  g.feature_dims = {3, 3};
  g.horizon = 12.0;
  g.event_rate = {0.5, 0.4};
  g.modality_missing = modality_missing;
  g.label_missing = 0.0;
  g.seed = seed;
  return generate_split(g, cases, 0, false, 1);
}

// Random events with coarse timestamps so that equal times and ties occur.
EventBatch random_batch(Rng& rng, std::size_t max_cases, std::size_t max_events) {
  const std::size_t C = 1 + rng.index(max_cases);
  const std::size_t E = C + rng.index(max_events - C + 1);
  std::vector<ClinicalEvent> events;
  for (std::size_t i = 0; i < E; ++i) {
    ClinicalEvent ev;
    ev.case_id = static_cast<std::int64_t>(i < C ? i : rng.index(C));
    ev.modality = static_cast<std::uint32_t>(rng.index(2));
    ev.timestamp = 0.5 * static_cast<double>(rng.index(25));
    ev.content = {rng.normal(), rng.normal()};
    events.push_back(std::move(ev));
  }
  return make_batch(BatchSpec{2, 12.0}, std::move(events), {});
}

// Neighbourhood by direct predicate scan.
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
    }
    if (in) out.push_back(static_cast<std::uint32_t>(j));
  }
  return out;
}

CheckResult check_coupling(Fault fault, std::uint64_t seed) {
  CheckResult r{"coupling matches full interaction tensor", true, "", 0.0};
  Rng rng(seed);
  std::size_t cases = 0;
  double worst = 0.0;
  for (std::size_t d = 1; d <= 4; ++d) {
    for (std::size_t rank = 1; rank <= 3; ++rank) {
      for (unsigned bits = 1; bits < 16; ++bits) {
        const DimSet dims = DimSet::from_bits(static_cast<std::uint8_t>(bits));
        for (int trial = 0; trial < 20; ++trial) {
          ParameterStore store;
          LowRankCoupling cp(store, "c", dims, d, 1, rank, rng);
          for (Dim k : dims.list()) {
            for (auto& v : cp.w(k).value.data()) v = rng.normal();
          }
          cp.bias().value[0] = rng.normal();
          RelationFeatures rel;
          for (Dim k : dims.list()) rel[k] = random_vector(rng, d);
          double fast = couple(rel, cp)[0];
          if (fault == Fault::coupling) fast += 1e-9;
          const double slow = full_tensor_oracle(rel, cp)[0];
          const double err = std::abs(fast - slow) / (1.0 + std::abs(slow));
          worst = std::max(worst, err);
          ++cases;
          if (err > 1e-12 && r.passed) {
            r.passed = false;
            std::ostringstream os;
            os << "d=" << d << " R=" << rank << " D=" << dims.letters() << " error " << err;
            r.detail = os.str();
          }
        }
      }
    }
  }
  if (r.passed) r.detail = std::to_string(cases) + " cases, worst scaled error " + std::to_string(worst);
  return r;
}

// Scalar square whose recorded derivative is deliberately wrong (3x instead of 2x).
Var wrong_square(Var x) {
  const double v = x.item();
  return x.tape().record(Tensor::scalar(v * v), {x}, [x](Tape& t, const Tensor& g) {
    t.grad(x)[0] += 3.0 * x.item() * g[0];
  });
}

CheckResult check_gradients(Fault fault, std::uint64_t seed) {
  CheckResult r{"total loss gradients match central differences", true, "", 0.0};
  // Detached values are not functions of the parameters as finite differences see them, so the
  // check differentiates the variant with a live reconstruction target and a connected REC input.
  ModelConfig mc = tiny_model(seed);
  mc.isolate_reconstruction = false;
  HierarchyModel model(mc);
  const EventBatch batch = tiny_batch(seed, 3, 0.5);
  LossConfig lc;
  lc.detach_target = false;
  const LossFn fn = [&](Tape& tape) {
    const LayerOutputs out = model.forward(tape, batch);
    Var total = compute_losses(tape, out, batch, model.heads(), lc).total;
    if (fault == Fault::gradient) total = total + ops::scale(wrong_square(total), 0.01);
    return total;
  };
  GradCheckOptions opt;
  opt.coords_per_param = 2;
  opt.seed = seed;
  const GradCheckReport rep = grad_check(fn, model.store().all(), opt);
  r.passed = rep.passed;
  std::ostringstream os;
  if (rep.passed) {
    os << rep.checked << " coordinates, worst relative error " << rep.max_rel_error;
  } else {
    const auto& f = rep.failures.front();
    os << rep.failures.size() << " failures, first " << f.parameter << "[" << f.index << "] analytic " << f.analytic
       << " numeric " << f.numeric;
  }
  r.detail = os.str();
  return r;
}

CheckResult check_neighbourhoods(Fault fault, std::uint64_t seed) {
  CheckResult r{"neighbourhoods equal predicate scan", true, "", 0.0};
  Rng rng(seed);
  ParameterStore store;
  Rng init(seed);
  ModalityEncoder enc(store, "enc", {2, 2}, 4, Activation::gelu, init);
  const NeighborhoodOptions opt{2.0, 4};
  std::size_t rows = 0;
  for (int trial = 0; trial < 100 && r.passed; ++trial) {
    const EventBatch batch = random_batch(rng, 8, 40);
    Tape tape;
    const PointCloud cloud = encode(tape, batch, enc);
    for (int level = 1; level <= 5 && r.passed; ++level) {
      Csr built = build_neighborhoods(cloud, level, opt);
      if (fault == Fault::neighborhood && trial == 0 && level == 2 && built.offsets[1] > 1) {
        built.cols.erase(built.cols.begin());
        for (std::size_t k = 1; k < built.offsets.size(); ++k) --built.offsets[k];
      }
      for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto want = brute_neighbours(cloud, level, i, opt);
        const auto got = built.row(i);
        ++rows;
        if (!std::equal(got.begin(), got.end(), want.begin(), want.end())) {
          r.passed = false;
          r.detail = "level " + std::to_string(level) + " token " + std::to_string(i) + " in trial " +
                     std::to_string(trial);
          break;
        }
      }
    }
  }
  if (r.passed) r.detail = std::to_string(rows) + " rows over 100 batches";
  return r;
}

CheckResult check_softmax_and_mask(Fault fault, std::uint64_t seed) {
  CheckResult r{"attention weights normalised and confined to neighbourhoods", true, "", 0.0};
  Rng rng(seed);
  // Segment softmax: nonnegative, sums to one, invariant to per-segment shifts.
  for (int trial = 0; trial < 50 && r.passed; ++trial) {
    Csr seg;
    const std::size_t rows = 1 + rng.index(6);
    for (std::size_t i = 0; i < rows; ++i) {
      const std::size_t len = 1 + rng.index(5);
      for (std::size_t k = 0; k < len; ++k) seg.cols.push_back(static_cast<std::uint32_t>(k));
      seg.offsets.push_back(seg.cols.size());
    }
    const std::size_t H = 3;
    Tensor logits = rng.normal_tensor({seg.nnz(), H}, 5.0);
    Tensor shifted = logits;
    for (std::size_t i = 0; i < rows; ++i) {
      const double c = rng.normal(0.0, 10.0);
      for (std::size_t e = seg.offsets[i]; e < seg.offsets[i + 1]; ++e)
        for (std::size_t h = 0; h < H; ++h) shifted[e * H + h] += c;
    }
    Tape tape;
    const Tensor a = ops::segment_softmax(tape.constant(logits), seg).value();
    const Tensor b = ops::segment_softmax(tape.constant(shifted), seg).value();
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t h = 0; h < H; ++h) {
        double total = 0.0;
        for (std::size_t e = seg.offsets[i]; e < seg.offsets[i + 1]; ++e) {
          total += a[e * H + h];
          if (a[e * H + h] < 0.0 || std::abs(a[e * H + h] - b[e * H + h]) > 1e-12) r.passed = false;
        }
        if (std::abs(total - 1.0) > 1e-12) r.passed = false;
      }
    }
    if (!r.passed) r.detail = "segment softmax trial " + std::to_string(trial);
  }
  if (!r.passed) return r;

  // Locality: perturbing tokens of one modality leaves the other modality's level-2 outputs unchanged.
  Rng init(seed + 1);
  ParameterStore store;
  LrrlConfig cfg;
  cfg.dims = level_spec(2).dims;
  cfg.width = 8;
  cfg.heads = 2;
  cfg.rank = 2;
  cfg.ffn_hidden = 16;
  LrrlLayer layer(store, "l2", cfg, init);
  ModalityEncoder enc(store, "enc", {3, 3}, 8, Activation::gelu, init);
  const EventBatch batch = tiny_batch(seed, 3, 0.0);
  Tape tape;
  const PointCloud cloud = encode(tape, batch, enc);
  const Csr nbrs = build_neighborhoods(cloud, fault == Fault::mask ? 5 : 2);
  const Tensor before = layer.forward(tape, cloud, nbrs).cloud.tokens.value();
  Tensor moved = cloud.tokens.value();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.modality[i] == 1)
      for (std::size_t k = 0; k < moved.cols(); ++k) moved.at(i, k) += 1.0;
  }
  const Tensor after = layer.forward(tape, cloud.with_tokens(tape.constant(moved)), nbrs).cloud.tokens.value();
  std::size_t checked = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.modality[i] != 0) continue;
    ++checked;
    for (std::size_t k = 0; k < before.cols(); ++k) {
      if (before.at(i, k) != after.at(i, k)) {
        r.passed = false;
        r.detail = "token " + std::to_string(i) + " changed after perturbing tokens outside its neighbourhood";
        return r;
      }
    }
  }
  r.detail = "50 softmax trials, " + std::to_string(checked) + " tokens unchanged under outside perturbation";
  return r;
}

CheckResult check_recovery(Fault fault, std::uint64_t seed) {
  CheckResult r{"recovery update keeps observed blocks and fills missing ones", true, "", 0.0};
  HierarchyModel model(tiny_model(seed));
  std::size_t missing = 0;
  EventBatch batch;
  // Make sure at least one block is missing.
  for (std::uint64_t s = seed; missing == 0; ++s) {
    batch = tiny_batch(s, 4, 0.6);
    for (const auto& c : batch.cases())
      for (auto a : c.availability) missing += a ? 0 : 1;
  }
  Tape tape;
  const LayerOutputs out = model.forward(tape, batch);
  PointCloud target = out.h4bar;
  if (fault == Fault::recovery) {
    for (auto& a : target.availability) a = a ? 0 : 1;
  }
  const Var once = recovery_update(target, out.hhat);
  const Var twice = recovery_update(target.with_tokens(once), out.hhat);
  const Tensor& h = out.h4bar.tokens.value();
  const Tensor& hat = out.hhat.value();
  const auto mask = out.h4bar.token_mask();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    for (std::size_t k = 0; k < h.cols(); ++k) {
      const double want = mask[i] ? h.at(i, k) : hat.at(i, k);
      if (once.value().at(i, k) != want || twice.value().at(i, k) != want) {
        r.passed = false;
        r.detail = std::string(mask[i] ? "observed" : "missing") + " token " + std::to_string(i) + " differs";
        return r;
      }
    }
  }
  r.detail = std::to_string(mask.size()) + " tokens, " + std::to_string(missing) + " missing blocks";
  return r;
}

}  // namespace

std::vector<CheckResult> run_selftest(Fault fault, std::uint64_t seed, std::ostream& log) {
  const std::vector<std::function<CheckResult()>> checks{
      [&] { return check_coupling(fault, seed); },
      [&] { return check_gradients(fault, seed); },
      [&] { return check_neighbourhoods(fault, seed); },
      [&] { return check_softmax_and_mask(fault, seed); },
      [&] { return check_recovery(fault, seed); },
  };
  std::vector<CheckResult> results;
  for (const auto& run : checks) {
    const auto t0 = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = run();
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ", " << r.seconds << " s)" << std::endl;
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace hp::tools
