// Per-pair cost of the low-rank coupling against the explicit interaction tensor,
// and of the fused per-edge logit kernel used by attention.

#include <benchmark/benchmark.h>

#include "healthpoint/coupling.hpp"
#include "healthpoint/ops.hpp"

namespace {

struct Fixture {
  hp::ParameterStore store;
  hp::LowRankCoupling coupling;
  hp::RelationFeatures rel;

  Fixture(std::size_t width, std::size_t rank, std::size_t dims) {
    hp::Rng rng(width * 100 + rank * 10 + dims);
    const auto set = hp::DimSet::from_bits(static_cast<std::uint8_t>((1u << dims) - 1));
    coupling = hp::LowRankCoupling(store, "b", set, width, 1, rank, rng);
    for (hp::Dim d : set.list()) {
      std::vector<double> v(width);
      for (auto& x : v) x = rng.normal();
      rel[d] = std::move(v);
    }
  }
};

void BM_Couple(benchmark::State& state) {
  Fixture f(state.range(0), state.range(1), state.range(2));
  for (auto _ : state) benchmark::DoNotOptimize(hp::couple(f.rel, f.coupling));
}

void BM_FullTensor(benchmark::State& state) {
  Fixture f(state.range(0), state.range(1), state.range(2));
  for (auto _ : state) benchmark::DoNotOptimize(hp::full_tensor_oracle(f.rel, f.coupling));
}

void sweep(benchmark::internal::Benchmark* b) {
  for (int d : {2, 4, 6})
    for (int r : {1, 8})
      for (int dims : {1, 2, 3, 4}) b->Args({d, r, dims});
}

BENCHMARK(BM_Couple)->Apply(sweep);
BENCHMARK(BM_FullTensor)->Apply(sweep);

// Forward plus backward of the fused logit kernel: args are edges, heads, rank, dims.
void BM_RelationalLogits(benchmark::State& state) {
  const std::size_t E = state.range(0), H = state.range(1), R = state.range(2), D = state.range(3);
  const std::size_t rows = 64;
  hp::Rng rng(1);
  hp::ParameterStore store;
  std::vector<hp::Parameter*> tables;
  for (std::size_t k = 0; k < D; ++k) {
    tables.push_back(&store.create("c" + std::to_string(k), rng.normal_tensor({rows, H, R}, 1.0)));
    tables.push_back(&store.create("u" + std::to_string(k), rng.normal_tensor({rows, H, 1}, 1.0)));
  }
  hp::Parameter& bias = store.create("b", hp::Tensor({H}));
  std::vector<std::uint32_t> index(E);
  for (auto& i : index) i = static_cast<std::uint32_t>(rng.index(rows));
  for (auto _ : state) {
    hp::Tape tape;
    std::vector<hp::ops::RelationDim> dims(D);
    for (std::size_t k = 0; k < D; ++k) {
      dims[k].terms.push_back({tape.parameter(*tables[2 * k]), tape.parameter(*tables[2 * k + 1]), index, 1.0});
    }
    const hp::Var logits = hp::ops::relational_logits(dims, tape.parameter(bias), E, R);
    tape.backward(hp::ops::sum(logits));
    benchmark::DoNotOptimize(logits.value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(E));
}

BENCHMARK(BM_RelationalLogits)->Args({20000, 8, 8, 2})->Args({20000, 8, 8, 4})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
