#include "doctest.h"
#include "healthpoint/gradcheck.hpp"
#include "healthpoint/sampling.hpp"
#include "support.hpp"

using namespace hp;
using test::Row;
using test::Rows;

namespace {

LrrslConfig config(std::size_t heads = 2, std::vector<std::uint32_t> handled = {0, 1}) {
  return LrrslConfig{4, heads, 3, 2, std::move(handled)};
}

void perturb(const LrrslLayer& layer, Rng& rng) {
  for (auto* p : layer.coupling().parameters()) {
    for (auto& v : p->value.data()) v += rng.normal(0.0, 0.3);
  }
}

}  // namespace

TEST_CASE("anchor grids") {
  const AnchorGrid g{{4.0, 5.0, 48.0}, 48.0};
  CHECK(g.count(0) == 13);
  CHECK(g.count(1) == 10);
  CHECK(g.count(2) == 2);
  const auto a = g.anchors(1);
  CHECK(a.front() == 0.0);
  CHECK(a.back() == 45.0);
  CHECK_THROWS_AS(AnchorGrid({{0.0}, 48.0}).count(0), std::invalid_argument);
}

TEST_CASE("a single input token is copied through W_V at every anchor") {
  Rng rng(1);
  ParameterStore store;
  const LrrslLayer layer(store, "s", config(2, {0}), rng);
  perturb(layer, rng);
  const EventBatch batch = make_batch(BatchSpec{2, 12.0}, {{{0.0}, 5.0, 0, 0}}, {});
  Tape tape;
  const PointCloud in = test::random_cloud(tape, batch, 4, rng);
  const AnchorGrid grid{{3.0, 3.0}, 12.0};
  const PointCloud out = layer.forward(tape, in, grid, MissingPolicy::placeholder);
  const Row v = test::linear_ref(layer.value(), test::rows_of(in.tokens.value())[0]);
  REQUIRE(out.size() == 5);
  for (std::size_t a = 0; a < 5; ++a) {
    for (std::size_t e = 0; e < 4; ++e) CHECK(out.tokens.value().at(a, e) == doctest::Approx(v[e]).epsilon(1e-14));
  }
}

TEST_CASE("a strongly time-penalising coupling picks the coincident token") {
  Rng rng(2);
  ParameterStore store;
  LrrslLayer layer(store, "s", config(1, {0}), rng);
  // phi_t(dt)[0] = gelu(dt) + gelu(-dt), close to |dt| away from zero; other outputs 0.
  const RelationParams& rel = layer.relations();
  rel.time.first.weight->value.fill(0.0);
  rel.time.first.bias->value.fill(0.0);
  rel.time.first.weight->value.at(0, 0) = 1.0;
  rel.time.first.weight->value.at(0, 1) = -1.0;
  rel.time.second.weight->value.fill(0.0);
  rel.time.second.bias->value.fill(0.0);
  rel.time.second.weight->value.at(0, 0) = 1.0;
  rel.time.second.weight->value.at(1, 0) = 1.0;
  for (Dim d : {Dim::content, Dim::time}) {
    layer.coupling().q(d).value.fill(0.0);
    layer.coupling().w(d).value.fill(0.0);
  }
  layer.coupling().w(Dim::time).value[0] = -10.0;

  const EventBatch batch = make_batch(BatchSpec{2, 48.0}, {{{0.0}, 0.0, 0, 0}, {{0.0}, 48.0, 0, 0}}, {});
  Tape tape;
  const PointCloud in = test::random_cloud(tape, batch, 4, rng);
  const Rows h = test::rows_of(in.tokens.value());
  const PointCloud out = layer.forward(tape, in, AnchorGrid{{48.0, 48.0}, 48.0}, MissingPolicy::placeholder);
  const Row first = test::linear_ref(layer.value(), h[0]);
  const Row last = test::linear_ref(layer.value(), h[1]);
  for (std::size_t e = 0; e < 4; ++e) {
    CHECK(out.tokens.value().at(0, e) == doctest::Approx(first[e]).epsilon(1e-12));
    CHECK(out.tokens.value().at(1, e) == doctest::Approx(last[e]).epsilon(1e-12));
  }
}

TEST_CASE("sampled clouds sit exactly on the grid and inside the value hull") {
  Rng rng(3);
  const AnchorGrid grid{{1.5, 4.0}, 12.0};
  for (int trial = 0; trial < 40; ++trial) {
    ParameterStore store;
    const LrrslLayer layer(store, "s", config(), rng);
    perturb(layer, rng);
    const EventBatch batch = test::random_batch(rng, 5, 30);
    Tape tape;
    const PointCloud in = test::random_cloud(tape, batch, 4, rng);
    const Rows h = test::rows_of(in.tokens.value());
    const PointCloud out = layer.forward(tape, in, grid, MissingPolicy::placeholder);
    CHECK_NOTHROW(out.validate());
    const Rows got = test::rows_of(out.tokens.value());
    const Tensor& q = layer.anchor_queries().value;
    for (std::size_t c = 0; c < batch.size(); ++c) {
      for (std::size_t m = 0; m < 2; ++m) {
        const auto anchors = grid.anchors(m);
        const auto [ob, oe] = out.block(c, m);
        REQUIRE(oe - ob == anchors.size());
        const auto [ib, ie] = in.block(c, m);
        Rows values;
        for (std::size_t j = ib; j < ie; ++j) values.push_back(test::linear_ref(layer.value(), h[j]));
        for (std::size_t a = 0; a < anchors.size(); ++a) {
          const std::size_t row = ob + a;
          CHECK(out.time[row] == anchors[a]);
          if (!in.observed(c, m)) {
            for (std::size_t e = 0; e < 4; ++e) CHECK(got[row][e] == q.at(m, e));
            continue;
          }
          const Rows block(h.begin() + static_cast<std::ptrdiff_t>(ib), h.begin() + static_cast<std::ptrdiff_t>(ie));
          const std::vector<double> times(in.time.begin() + static_cast<std::ptrdiff_t>(ib),
                                          in.time.begin() + static_cast<std::ptrdiff_t>(ie));
          const Row ref = test::lrrsl_anchor_ref(layer, m, anchors[a], block, times);
          for (std::size_t e = 0; e < 4; ++e) {
            CHECK(got[row][e] == doctest::Approx(ref[e]).epsilon(1e-12));
            double lo = values[0][e], hi = values[0][e];
            for (const auto& v : values) {
              lo = std::min(lo, v[e]);
              hi = std::max(hi, v[e]);
            }
            CHECK(got[row][e] >= lo - 1e-9);
            CHECK(got[row][e] <= hi + 1e-9);
          }
        }
      }
    }
  }
}

TEST_CASE("the sample policy attends over blocks of unobserved modalities") {
  Rng rng(4);
  ParameterStore store;
  const LrrslLayer layer(store, "s", config(), rng);
  const EventBatch batch = make_batch(BatchSpec{2, 12.0}, {{{0.0}, 1.0, 0, 0}, {{0.0}, 2.0, 0, 0}}, {});
  Tape tape;
  PointCloud in = test::random_cloud(tape, batch, 4, rng);
  // Mark the only block as unobserved while keeping its tokens.
  in.availability = {0, 0};
  const AnchorGrid grid{{6.0, 6.0}, 12.0};
  const PointCloud placeholder = layer.forward(tape, in, grid, MissingPolicy::placeholder);
  const PointCloud sampled = layer.forward(tape, in, grid, MissingPolicy::sample);
  const Tensor& q = layer.anchor_queries().value;
  const Rows h = test::rows_of(in.tokens.value());
  for (std::size_t a = 0; a < 3; ++a) {
    const Row ref = test::lrrsl_anchor_ref(layer, 0, 6.0 * a, h, {1.0, 2.0});
    for (std::size_t e = 0; e < 4; ++e) {
      CHECK(placeholder.tokens.value().at(a, e) == q.at(0, e));
      CHECK(sampled.tokens.value().at(a, e) == doctest::Approx(ref[e]).epsilon(1e-12));
    }
  }
  // The empty modality-1 block has nothing to sample and falls back to the placeholder.
  for (std::size_t a = 3; a < 6; ++a) {
    for (std::size_t e = 0; e < 4; ++e) CHECK(sampled.tokens.value().at(a, e) == q.at(1, e));
  }
}

TEST_CASE("a layer emits blocks only for the modalities it handles") {
  Rng rng(5);
  ParameterStore store;
  const LrrslLayer layer(store, "s", config(2, {1}), rng);
  const EventBatch batch = test::random_batch(rng, 4, 20);
  Tape tape;
  const PointCloud in = test::random_cloud(tape, batch, 4, rng);
  const PointCloud out = layer.forward(tape, in, AnchorGrid{{2.0, 3.0}, 12.0}, MissingPolicy::placeholder);
  for (std::size_t c = 0; c < batch.size(); ++c) {
    CHECK(out.block_size(c, 0) == 0);
    CHECK(out.block_size(c, 1) == 5);
  }
  CHECK_THROWS(layer.forward(tape, in, AnchorGrid{{2.0}, 12.0}, MissingPolicy::placeholder));
}

TEST_CASE("grid alignment check") {
  Rng rng(6);
  ParameterStore store;
  const LrrslLayer layer(store, "s", config(), rng);
  const AnchorGrid g1{{1.0, 4.0}, 12.0}, g2{{2.0, 4.0}, 12.0};
  for (int trial = 0; trial < 30; ++trial) {
    const EventBatch a = test::random_batch(rng, 5, 25), b = test::random_batch(rng, 5, 25);
    Tape tape;
    const PointCloud sa = layer.forward(tape, test::random_cloud(tape, a, 4, rng), g1, MissingPolicy::placeholder);
    const PointCloud sb = layer.forward(tape, test::random_cloud(tape, b, 4, rng), g1, MissingPolicy::placeholder);
    const PointCloud sc = layer.forward(tape, test::random_cloud(tape, b, 4, rng), g2, MissingPolicy::placeholder);
    CHECK(grid_align_check(sa, sb, 0));
    CHECK(grid_align_check(sa, sb, 1));
    CHECK_FALSE(grid_align_check(sa, sc, 0));
    CHECK(grid_align_check(sa, sc, 1));
  }
  Rng r2(7);
  const EventBatch raw = make_batch(BatchSpec{2, 12.0}, {{{0.0}, 1.0, 0, 0}, {{0.0}, 2.0, 0, 1}}, {});
  Tape tape;
  const PointCloud irregular = test::random_cloud(tape, raw, 4, r2);
  CHECK_FALSE(grid_align_check(irregular, irregular, 0));
}

TEST_CASE("sampling gradients pass the finite-difference check") {
  Rng rng(8);
  ParameterStore store;
  const LrrslLayer layer(store, "s", config(), rng);
  perturb(layer, rng);
  const EventBatch batch = test::random_batch(rng, 3, 12);
  Rows tokens(batch.event_count());
  for (auto& t : tokens) t = test::random_row(rng, 4);
  Parameter& x = store.create("x", test::tensor_of(tokens));
  Tensor weights;
  const LossFn loss = [&](Tape& tape) {
    PointCloud cloud = test::cloud_with_tokens(tape, batch, tokens);
    cloud.tokens = tape.parameter(x);
    const PointCloud out = layer.forward(tape, cloud, AnchorGrid{{2.5, 4.0}, 12.0}, MissingPolicy::placeholder);
    if (weights.empty()) weights = rng.normal_tensor(out.tokens.shape(), 1.0);
    return ops::sum(ops::tanh(out.tokens) * tape.constant(weights));
  };
  const auto rep = grad_check(loss, store.all());
  CHECK(rep.passed);
}
