#include "healthpoint/synthgen.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "healthpoint/rng.hpp"

namespace hp {

std::string task_name(TaskKind task) { return task == TaskKind::coupled ? "coupled" : "separable"; }

TaskKind parse_task(const std::string& name) {
  if (name == "separable") return TaskKind::separable;
  if (name == "coupled") return TaskKind::coupled;
  throw std::invalid_argument("unknown task '" + name + "' (expected separable or coupled)");
}

namespace {

constexpr double kBumpWidth = 4.0;
constexpr double kBumpHeight = 4.0;

void validate(const GenConfig& cfg) {
  auto rate = [](double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string(what) + " must lie in [0, 1]");
  };
  rate(cfg.modality_missing, "modality_missing");
  rate(cfg.label_missing, "label_missing");
  if (cfg.modalities == 0) throw std::invalid_argument("at least one modality is required");
  if (cfg.feature_dims.size() != cfg.modalities || cfg.event_rate.size() != cfg.modalities) {
    throw std::invalid_argument("feature_dims and event_rate need one entry per modality");
  }
  for (double r : cfg.event_rate) {
    if (!(r > 0.0)) throw std::invalid_argument("event rates must be positive");
  }
  if (cfg.task == TaskKind::coupled && cfg.modalities < 2) {
    throw std::invalid_argument("the coupled task needs at least two modalities");
  }
  if (!(cfg.horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
}

}  // namespace

std::array<double, kLatentDims> Trajectory::at(double t, double horizon) const {
  const double u = t / horizon;
  return {level + drift * u, amp1 * std::sin(freq1 * t + phase1) * std::exp(-damp1 * t),
          amp2 * std::cos(freq2 * t + phase2), level * std::cos(2.0 * std::numbers::pi * u)};
}

std::vector<Channel> observation_channels(const GenConfig& cfg) {
  std::vector<Channel> out;
  const double scale = 1.0 / std::sqrt(double(kLatentDims));
  for (std::size_t m = 0; m < cfg.modalities; ++m) {
    Rng rng(Rng::derive(cfg.seed, 1000 + m));
    const std::size_t F = cfg.feature_dims[m];
    Channel ch;
    ch.linear = rng.normal_tensor({F, kLatentDims}, scale);
    ch.nonlinear = rng.normal_tensor({F, kLatentDims}, scale);
    ch.transient_direction.resize(F);
    double norm = 0.0;
    for (auto& v : ch.transient_direction) {
      v = rng.normal();
      norm += v * v;
    }
    for (auto& v : ch.transient_direction) v /= std::sqrt(norm);
    out.push_back(std::move(ch));
  }
  return out;
}

double transient(const GenConfig& cfg, const LatentCase& lc, std::size_t m, double t) {
  if (cfg.task != TaskKind::coupled || m >= 2) return 0.0;
  const double gap = (t - lc.event_time) / kBumpWidth;
  return (m == 0 ? lc.sign0 : lc.sign1) * kBumpHeight * std::exp(-0.5 * gap * gap);
}

std::vector<double> baseline_content(const GenConfig& cfg, const Channel& ch, const LatentCase& lc, double t) {
  const auto zt = lc.z.at(t, cfg.horizon);
  std::vector<double> x(ch.linear.rows());
  for (std::size_t f = 0; f < x.size(); ++f) {
    double lin = 0.0, pre = 0.0;
    for (std::size_t k = 0; k < kLatentDims; ++k) {
      lin += ch.linear.at(f, k) * zt[k];
      pre += ch.nonlinear.at(f, k) * zt[k];
    }
    x[f] = lin + 0.5 * std::tanh(pre);
  }
  return x;
}

EventBatch generate_split(const GenConfig& cfg, std::size_t count, std::int64_t first_id, bool labels_hidden,
                          std::uint64_t stream, std::vector<LatentCase>* latent) {
  validate(cfg);
  const auto maps = observation_channels(cfg);
  const std::size_t M = cfg.modalities;
  std::vector<CaseRecord> cases;
  cases.reserve(count);
  if (latent) latent->clear();
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(Rng::derive(Rng::derive(cfg.seed, stream), i));
    const Trajectory z{rng.normal(), rng.normal(), rng.uniform(0.5, 1.5), rng.uniform(0.1, 0.5),
                 rng.uniform(0.0, 2.0 * std::numbers::pi), rng.uniform(0.0, 0.05), rng.uniform(0.3, 1.0),
                 rng.uniform(0.05, 0.2), rng.uniform(0.0, 2.0 * std::numbers::pi)};
    LatentCase lc;
    lc.case_id = first_id + static_cast<std::int64_t>(i);
    lc.z = z;
    lc.sign0 = rng.bernoulli(0.5) ? 1 : -1;
    lc.sign1 = rng.bernoulli(0.5) ? 1 : -1;
    lc.event_time = rng.uniform(0.15 * cfg.horizon, 0.85 * cfg.horizon);
    lc.label = cfg.task == TaskKind::separable ? (z.level + 0.5 * z.drift > 0.0 ? 1 : 0)
                                                : (lc.sign0 == lc.sign1 ? 1 : 0);

    std::vector<std::uint8_t> keep(M, 1);
    if (M > 1 && rng.bernoulli(cfg.modality_missing)) {
      // Drop a random nonempty proper subset: shuffle the modalities and drop the first k.
      const std::size_t drop = 1 + rng.index(M - 1);
      std::vector<std::size_t> order(M);
      for (std::size_t m = 0; m < M; ++m) order[m] = m;
      rng.shuffle(order);
      for (std::size_t k = 0; k < drop; ++k) keep[order[k]] = 0;
    }
    const bool label_hidden = labels_hidden && rng.bernoulli(cfg.label_missing);

    CaseRecord rec;
    rec.case_id = lc.case_id;
    rec.availability = keep;
    rec.label_observed = !label_hidden;
    rec.label = label_hidden ? 0 : lc.label;
    for (std::size_t m = 0; m < M; ++m) {
      // Arrival times are drawn for every modality so the stream does not depend on missingness.
      std::vector<double> times;
      for (double t = rng.exponential(cfg.event_rate[m]); t <= cfg.horizon; t += rng.exponential(cfg.event_rate[m])) {
        times.push_back(t);
      }
      if (times.empty()) times.push_back(rng.uniform(0.0, cfg.horizon));
      for (double t : times) {
        ClinicalEvent ev;
        ev.case_id = rec.case_id;
        ev.modality = static_cast<std::uint32_t>(m);
        ev.timestamp = t;
        ev.content = baseline_content(cfg, maps[m], lc, t);
        const double bump = transient(cfg, lc, m, t);
        for (std::size_t f = 0; f < ev.content.size(); ++f) {
          ev.content[f] += bump * maps[m].transient_direction[f] + rng.normal(0.0, cfg.noise);
        }
        if (keep[m]) rec.events.push_back(std::move(ev));
      }
    }
    cases.push_back(std::move(rec));
    if (latent) latent->push_back(lc);
  }
  return EventBatch(BatchSpec{M, cfg.horizon}, std::move(cases));
}

Dataset generate(const GenConfig& cfg) {
  Dataset d;
  const auto ntr = static_cast<std::int64_t>(cfg.train_cases);
  const auto nva = static_cast<std::int64_t>(cfg.val_cases);
  d.train = generate_split(cfg, cfg.train_cases, 0, true, 1, &d.train_latent);
  d.val = generate_split(cfg, cfg.val_cases, ntr, false, 2, &d.val_latent);
  d.test = generate_split(cfg, cfg.test_cases, ntr + nva, false, 3, &d.test_latent);
  return d;
}

}  // namespace hp
