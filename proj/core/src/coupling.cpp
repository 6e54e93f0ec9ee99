#include "healthpoint/coupling.hpp"

#include <chrono>
#include <cmath>

namespace hp {

DimSet DimSet::parse(const std::string& letters) {
  DimSet s;
  for (char ch : letters) {
    switch (ch) {
      case 'h': s.bits_ |= bit(Dim::content); break;
      case 't': s.bits_ |= bit(Dim::time); break;
      case 'm': s.bits_ |= bit(Dim::modality); break;
      case 'c': s.bits_ |= bit(Dim::case_); break;
      default: throw std::invalid_argument(std::string("unknown relation dimension '") + ch + "'");
    }
  }
  return s;
}

std::size_t DimSet::size() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < kDimCount; ++k) n += (bits_ >> k) & 1u;
  return n;
}

std::vector<Dim> DimSet::list() const {
  std::vector<Dim> out;
  for (std::size_t k = 0; k < kDimCount; ++k) {
    if ((bits_ >> k) & 1u) out.push_back(static_cast<Dim>(k));
  }
  return out;
}

std::string DimSet::letters() const {
  static constexpr char kLetters[] = "htmc";
  std::string s;
  for (Dim d : list()) s += kLetters[static_cast<std::size_t>(d)];
  return s;
}

std::string dim_name(Dim d) {
  switch (d) {
    case Dim::content: return "content";
    case Dim::time: return "time";
    case Dim::modality: return "modality";
    case Dim::case_: return "case";
  }
  return "?";
}

DimSet RelationFeatures::populated() const {
  std::uint8_t bits = 0;
  for (std::size_t k = 0; k < kDimCount; ++k) {
    if (r[k]) bits |= static_cast<std::uint8_t>(1u << k);
  }
  return DimSet::from_bits(bits);
}

LowRankCoupling::LowRankCoupling(ParameterStore& store, const std::string& name, DimSet dims, std::size_t width,
                                 std::size_t heads, std::size_t rank, Rng& rng)
    : dims_(dims), width_(width), heads_(heads), rank_(rank) {
  if (dims.empty()) throw std::invalid_argument(name + ": coupling needs at least one active dimension");
  if (heads == 0 || width % heads != 0) {
    throw std::invalid_argument(name + ": width " + std::to_string(width) + " is not divisible by " +
                                std::to_string(heads) + " heads");
  }
  const std::size_t dh = width / heads;
  for (Dim d : dims.list()) {
    const auto k = static_cast<std::size_t>(d);
    const std::string suffix = dim_name(d);
    q_[k] = &store.create(name + ".Q." + suffix, rng.normal_tensor({heads, rank, dh}, 1.0 / std::sqrt(double(width))));
    w_[k] = &store.create(name + ".w." + suffix, Tensor({heads, 1, dh}));
  }
  bias_ = &store.create(name + ".b", Tensor({heads}));
}

Parameter& LowRankCoupling::q(Dim d) const {
  Parameter* p = q_[static_cast<std::size_t>(d)];
  if (!p) throw CouplingError("coupling has no " + dim_name(d) + " dimension");
  return *p;
}

Parameter& LowRankCoupling::w(Dim d) const {
  Parameter* p = w_[static_cast<std::size_t>(d)];
  if (!p) throw CouplingError("coupling has no " + dim_name(d) + " dimension");
  return *p;
}

std::vector<Parameter*> LowRankCoupling::parameters() const {
  std::vector<Parameter*> out;
  for (Dim d : dims_.list()) {
    out.push_back(&q(d));
    out.push_back(&w(d));
  }
  out.push_back(bias_);
  return out;
}

namespace {

void check_features(const RelationFeatures& rel, const LowRankCoupling& c) {
  if (rel.populated() != c.dims()) {
    throw CouplingError("relation features populated on {" + rel.populated().letters() +
                        "} but the coupling is active on {" + c.dims().letters() + "}");
  }
  for (Dim d : c.dims().list()) {
    if (rel[d]->size() != c.width()) {
      throw CouplingError(dim_name(d) + " relation has " + std::to_string(rel[d]->size()) +
                          " entries, expected " + std::to_string(c.width()));
    }
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = a[0] * b[0];
  for (std::size_t e = 1; e < n; ++e) s += a[e] * b[e];
  return s;
}

// Unary terms plus bias for one head, shared by both evaluation paths.
double unary_terms(const RelationFeatures& rel, const LowRankCoupling& c, std::size_t h, OpCount* ops) {
  const std::size_t dh = c.head_width();
  double s = c.bias().value[h];
  for (Dim d : c.dims().list()) {
    s += dot(c.w(d).value.data().data() + h * dh, rel[d]->data() + h * dh, dh);
  }
  if (ops) ops->unary += c.dims().size() * (2 * dh - 1) + c.dims().size() + 1;
  return s;
}

}  // namespace

std::vector<double> couple(const RelationFeatures& rel, const LowRankCoupling& c, OpCount* ops) {
  check_features(rel, c);
  const std::size_t H = c.heads(), R = c.rank(), dh = c.head_width();
  const auto dims = c.dims().list();
  std::vector<double> out(H);
  for (std::size_t h = 0; h < H; ++h) {
    double coupled = 0.0;
    for (std::size_t g = 0; g < R; ++g) {
      double prod = 1.0;
      for (std::size_t k = 0; k < dims.size(); ++k) {
        const double* q = c.q(dims[k]).value.data().data() + (h * R + g) * dh;
        const double s = dot(q, rel[dims[k]]->data() + h * dh, dh);
        prod = k == 0 ? s : prod * s;
      }
      coupled = g == 0 ? prod : coupled + prod;
    }
    if (ops) {
      // R x |D| dot products, |D|-1 products per rank, R-1 rank sums.
      if (R > 0) ops->coupled += R * dims.size() * (2 * dh - 1) + R * (dims.size() - 1) + (R - 1);
    }
    out[h] = coupled + unary_terms(rel, c, h, ops);
  }
  return out;
}

namespace {

// Outer product of the given vectors, flattened with the first factor slowest.
std::vector<double> outer(const std::vector<const double*>& factors, std::size_t n, std::uint64_t* mults) {
  std::vector<double> v(factors[0], factors[0] + n);
  for (std::size_t k = 1; k < factors.size(); ++k) {
    std::vector<double> next(v.size() * n);
    for (std::size_t a = 0; a < v.size(); ++a) {
      for (std::size_t b = 0; b < n; ++b) next[a * n + b] = v[a] * factors[k][b];
    }
    if (mults) *mults += next.size();
    v = std::move(next);
  }
  return v;
}

}  // namespace

std::vector<double> full_tensor_oracle(const RelationFeatures& rel, const LowRankCoupling& c, OpCount* ops) {
  check_features(rel, c);
  const std::size_t H = c.heads(), R = c.rank(), dh = c.head_width();
  const auto dims = c.dims().list();
  if (dims.size() > kDimCount || dh > kOracleMaxHeadWidth) {
    throw CouplingError("full_tensor_oracle is limited to head width <= " + std::to_string(kOracleMaxHeadWidth) +
                        ", got " + std::to_string(dh));
  }
  std::size_t cells = 1;
  for (std::size_t k = 0; k < dims.size(); ++k) cells *= dh;
  std::vector<double> out(H);
  for (std::size_t h = 0; h < H; ++h) {
    std::uint64_t build = 0;
    std::vector<double> W(cells, 0.0);
    for (std::size_t g = 0; g < R; ++g) {
      std::vector<const double*> qs;
      for (Dim d : dims) qs.push_back(c.q(d).value.data().data() + (h * R + g) * dh);
      const auto term = outer(qs, dh, &build);
      for (std::size_t i = 0; i < cells; ++i) W[i] += term[i];
      build += cells;
    }
    std::uint64_t contract = 0;
    std::vector<const double*> rs;
    for (Dim d : dims) rs.push_back(rel[d]->data() + h * dh);
    const auto X = outer(rs, dh, &contract);
    double e = W[0] * X[0];
    for (std::size_t i = 1; i < cells; ++i) e += W[i] * X[i];
    contract += 2 * cells - 1;
    if (ops) {
      ops->materialize += build;
      ops->coupled += contract;
    }
    out[h] = e + unary_terms(rel, c, h, ops);
  }
  return out;
}

CouplingBench benchmark_coupling(std::size_t width, std::size_t rank, std::size_t dims, std::size_t pairs,
                                 std::uint64_t seed) {
  if (dims == 0 || dims > kDimCount) throw std::invalid_argument("benchmark_coupling: dims must be in 1..4");
  Rng rng(seed);
  ParameterStore store;
  DimSet set = DimSet::from_bits(static_cast<std::uint8_t>((1u << dims) - 1));
  LowRankCoupling coupling(store, "bench", set, width, 1, rank, rng);
  for (Dim d : set.list()) coupling.w(d).value = rng.normal_tensor({1, 1, width}, 1.0);
  coupling.bias().value[0] = rng.normal();

  std::vector<RelationFeatures> rels(pairs);
  for (auto& rel : rels) {
    for (Dim d : set.list()) {
      std::vector<double> v(width);
      for (auto& x : v) x = rng.normal();
      rel[d] = std::move(v);
    }
  }
  CouplingBench b;
  b.width = width;
  b.rank = rank;
  b.dims = dims;
  b.pairs = pairs;
  OpCount fast, slow;
  std::vector<double> a(pairs), o(pairs);
  using clock = std::chrono::steady_clock;
  auto t0 = clock::now();
  for (std::size_t p = 0; p < pairs; ++p) a[p] = couple(rels[p], coupling, &fast)[0];
  auto t1 = clock::now();
  for (std::size_t p = 0; p < pairs; ++p) o[p] = full_tensor_oracle(rels[p], coupling, &slow)[0];
  auto t2 = clock::now();
  for (std::size_t p = 0; p < pairs; ++p) b.max_abs_diff = std::max(b.max_abs_diff, std::abs(a[p] - o[p]));
  const double n = pairs ? static_cast<double>(pairs) : 1.0;
  b.coupled_ops_per_pair = static_cast<double>(fast.coupled) / n;
  b.unary_ops_per_pair = static_cast<double>(fast.unary) / n;
  b.oracle_ops_per_pair = static_cast<double>(slow.coupled) / n;
  b.oracle_materialize_ops = static_cast<double>(slow.materialize) / n;
  b.couple_seconds = std::chrono::duration<double>(t1 - t0).count();
  b.oracle_seconds = std::chrono::duration<double>(t2 - t1).count();
  return b;
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_line needs two or more points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LinearFit f;
  f.slope = sxx > 0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  double sse = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.slope * x[i] + f.intercept);
    sse += r * r;
  }
  f.r_squared = syy > 0 ? 1.0 - sse / syy : 1.0;
  return f;
}

}  // namespace hp
