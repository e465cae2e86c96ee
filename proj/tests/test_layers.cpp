#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mtabnet/layers.hpp"
#include "mtabnet/sparse.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mtabnet;

namespace {

using support::random_tensor;

template <class Make>
double worst_grad_error(Make make, const ScalarFn& fn, std::size_t count, std::span<Parameter* const> params = {}) {
  const auto sweep = support::grad_sweep(make, fn, count, params);
  EXPECT_EQ(sweep.accepted, count) << "too many draws rejected near kinks";
  return sweep.worst;
}

}  // namespace

TEST(BatchNorm, HandComputedColumn) {
  BatchNormState s(1);
  Tape t;
  const Var y = batch_norm(t.constant(Tensor::matrix(2, 1, {2, 4})), s, Mode::kTrain);
  const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y.value()[0], -expected, 1e-15);
  EXPECT_NEAR(y.value()[1], expected, 1e-15);
}

TEST(BatchNorm, ConstantColumnAndInferIdentity) {
  BatchNormState s(2);
  Tape t;
  const Var y = batch_norm(t.constant(Tensor::matrix(3, 2, {7, 1, 7, 2, 7, 3})), s, Mode::kTrain);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(y.value()(i, 0), 0.0);
  BatchNormState fresh(2, 0.9, 1e-300);
  const Tensor x = Tensor::matrix(2, 2, {0.3, -1.2, 5.0, 2.0});
  EXPECT_EQ(batch_norm(t.constant(x), fresh, Mode::kInfer).value(), x);
}

TEST(BatchNorm, BatchSizeErrors) {
  BatchNormState s(2);
  Tape t;
  EXPECT_THROW(batch_norm(t.constant(Tensor({1, 2})), s, Mode::kTrain), BatchSizeError);
  EXPECT_NO_THROW(batch_norm(t.constant(Tensor({1, 2})), s, Mode::kInfer));
  EXPECT_THROW(ghost_batch_norm(t.constant(Tensor({4, 2})), s, 1), BatchSizeError);
}

TEST(BatchNorm, TrainOutputIsStandardized) {
  Rng rng(4);
  BatchNormState s(3);
  s.scale.value = Tensor::vector({2.0, -1.0, 0.5});
  s.shift.value = Tensor::vector({1.0, 3.0, -2.0});
  Tape t;
  const Tensor x = random_tensor({50, 3}, rng, 4.0);
  const Tensor y = batch_norm(t.constant(x), s, Mode::kTrain).value();
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < 50; ++i) m += (y(i, j) - s.shift.value[j]) / s.scale.value[j];
    m /= 50;
    for (std::size_t i = 0; i < 50; ++i) {
      const double z = (y(i, j) - s.shift.value[j]) / s.scale.value[j] - m;
      v += z * z;
    }
    v /= 50;
    EXPECT_NEAR(m, 0.0, 1e-9);
    EXPECT_NEAR(v, 1.0, 1e-6);  // epsilon shifts the variance by about eps / var
  }
}

TEST(BatchNorm, RunningStatsMoveWithMomentum) {
  BatchNormState s(1);
  Tape t;
  batch_norm(t.constant(Tensor::matrix(2, 1, {2, 4})), s, Mode::kTrain);
  EXPECT_DOUBLE_EQ(s.running_mean[0], 0.1 * 3.0);
  EXPECT_DOUBLE_EQ(s.running_var[0], 0.9 + 0.1 * 1.0);
}

TEST(GhostBatchNorm, ChunkRule) {
  EXPECT_EQ(ghost_chunks(64, 32), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 32}, {32, 64}}));
  EXPECT_EQ(ghost_chunks(65, 32), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 32}, {32, 65}}));
  EXPECT_EQ(ghost_chunks(10, 32).size(), 1u);
}

TEST(GhostBatchNorm, LargeVirtualSizeMatchesPlainBatchNorm) {
  Rng rng(2);
  const Tensor x = random_tensor({10, 3}, rng);
  BatchNormState a(3), b(3);
  Tape t;
  EXPECT_EQ(ghost_batch_norm(t.constant(x), a, 32).value(), batch_norm(t.constant(x), b, Mode::kTrain).value());
  EXPECT_EQ(a.running_mean, b.running_mean);
}

TEST(GhostBatchNorm, ChunksAreNormalizedSeparately) {
  Rng rng(9);
  const Tensor x = random_tensor({6, 1}, rng);
  BatchNormState s(1);
  Tape t;
  const Tensor y = ghost_batch_norm(t.constant(x), s, 3).value();
  EXPECT_NEAR(y[0] + y[1] + y[2], 0.0, 1e-12);
  EXPECT_NEAR(y[3] + y[4] + y[5], 0.0, 1e-12);
}

TEST(Sparsemax, ClosedForms) {
  Tape t;
  EXPECT_EQ(sparsemax(t.constant(Tensor::vector({0, 0}))).value(), Tensor::vector({0.5, 0.5}));
  EXPECT_EQ(sparsemax(t.constant(Tensor::vector({2, 0}))).value(), Tensor::vector({1, 0}));
  const Tensor p = sparsemax(t.constant(Tensor::vector({1.2, 0.8}))).value();
  EXPECT_NEAR(p[0], 0.7, 1e-15);
  EXPECT_NEAR(p[1], 0.3, 1e-15);
}

TEST(Sparsemax, MatchesMichelotOracleAndShiftInvariance) {
  Rng rng(100);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 2 + rng.index(15);
    std::vector<double> z(d);
    for (double& v : z) v = rng.normal(0.0, 2.0);
    std::vector<double> p(d), shifted(d), zs(d);
    kernels::sparsemax(z, p);
    const double c = rng.uniform(-5, 5);
    for (std::size_t i = 0; i < d; ++i) zs[i] = z[i] + c;
    kernels::sparsemax(zs, shifted);
    const auto ref = oracle::simplex_projection(z);
    double total = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      EXPECT_NEAR(p[i], ref[i], 1e-12);
      EXPECT_NEAR(p[i], shifted[i], 1e-12);
      EXPECT_GE(p[i], 0.0);
      total += p[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Entmax15, ClosedFormsAndBisectionOracle) {
  Tape t;
  for (double c : {-3.0, 0.0, 7.5}) {
    const Tensor p = entmax15(t.constant(Tensor::vector({c, c, c}))).value();
    for (double v : p.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  }
  const Tensor big = entmax15(t.constant(Tensor::vector({50, 0}))).value();
  EXPECT_NEAR(big[0], 1.0, 1e-12);
  EXPECT_NEAR(big[1], 0.0, 1e-12);

  Rng rng(55);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 2 + rng.index(15);
    std::vector<double> z(d), p(d), sp(d), soft(d);
    for (double& v : z) v = rng.normal(0.0, 2.0);
    kernels::entmax15(z, p);
    kernels::sparsemax(z, sp);
    kernels::softmax(z, soft);
    const auto ref = oracle::entmax15_bisect(z);
    double total = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      EXPECT_NEAR(p[i], ref[i], 1e-9);
      total += p[i];
      if (sp[i] > 0.0) {
        EXPECT_GT(p[i], 0.0) << "sparsemax support not inside entmax support";
      }
      if (p[i] > 0.0) {
        EXPECT_GT(soft[i], 0.0);
      }
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(SparseActivation, ExcludedEntriesArePinnedToZero) {
  Tape t;
  const Tensor z = Tensor::matrix(2, 3, {5, 1, 0, 5, 1, 0});
  const std::vector<bool> allowed{false, true, true, true, true, true};
  const Tensor p = sparsemax(t.constant(z), allowed).value();
  EXPECT_EQ(p(0, 0), 0.0);
  EXPECT_NEAR(p(0, 1), 1.0, 1e-15);
  EXPECT_EQ(p(1, 0), 1.0);
  const std::vector<bool> none(6, false);
  EXPECT_EQ(entmax15(t.constant(z), none).value(), entmax15(t.constant(z)).value());
}

TEST(SparseActivation, GradChecks) {
  // Linear probes: sum(layer(z) * W) with W fixed, so every checked
  // coordinate is a derivative of the activation itself.
  Rng rng(77);
  const Tensor w = random_tensor({3, 6}, rng);
  auto make = [&] { return std::vector<Tensor>{random_tensor({3, 6}, rng, 1.5)}; };
  const double sp = worst_grad_error(
      make, [&](Tape& t, std::span<const Var> v) { return sum(mul(sparsemax(v[0]), t.constant(w))); }, 100);
  EXPECT_LT(sp, 1e-5);
  const double em = worst_grad_error(
      make, [&](Tape& t, std::span<const Var> v) { return sum(mul(entmax15(v[0]), t.constant(w))); }, 100);
  EXPECT_LT(em, 1e-5);
  const double sm = worst_grad_error(
      make, [&](Tape& t, std::span<const Var> v) { return sum(mul(softmax(v[0]), t.constant(w))); }, 100);
  EXPECT_LT(sm, 1e-5);
  // Composed with a sum of squares, as a loss would use it.
  const double sq = worst_grad_error(
      make, [&](Tape&, std::span<const Var> v) { return sum(square(sparsemax(v[0]))); }, 100);
  EXPECT_LT(sq, 1e-5);
}

TEST(Glu, GateLimits) {
  Tape t;
  const Tensor zero_gate = glu(t.constant(Tensor::matrix(1, 4, {2, -4, 0, 0}))).value();
  EXPECT_EQ(zero_gate, Tensor::matrix(1, 2, {1, -2}));
  const Tensor open = glu(t.constant(Tensor::matrix(1, 4, {2, -4, 800, 800}))).value();
  EXPECT_EQ(open, Tensor::matrix(1, 2, {2, -4}));
  EXPECT_THROW(glu(t.constant(Tensor({2, 3}))), DimensionError);
}

TEST(GluBlock, ShapesAndGradCheck) {
  Rng rng(6);
  GluBlock block(4, 3, rng);
  EXPECT_EQ(block.in_width(), 4u);
  EXPECT_EQ(block.out_width(), 3u);
  Tape t;
  EXPECT_THROW(block.forward(t.constant(Tensor({8, 5})), {}), DimensionError);
  std::vector<Parameter*> params{&block.fc.weight, &block.bn.scale, &block.bn.shift};
  const Tensor w = random_tensor({8, 3}, rng);
  const double err = worst_grad_error(
      [&] { return std::vector<Tensor>{random_tensor({8, 4}, rng)}; },
      [&](Tape& tape, std::span<const Var> v) {
        return sum(mul(block.forward(v[0], {Mode::kTrain, 4}), tape.constant(w)));
      },
      100, params);
  EXPECT_LT(err, 1e-5);
}

TEST(BatchNorm, GradCheckPlainAndGhost) {
  Rng rng(12);
  BatchNormState s(3);
  s.scale.value = Tensor::vector({1.5, 0.7, -0.4});
  std::vector<Parameter*> params{&s.scale, &s.shift};
  const Tensor w = random_tensor({7, 3}, rng);
  for (std::size_t v : {0u, 3u}) {
    const double err = worst_grad_error(
        [&] { return std::vector<Tensor>{random_tensor({7, 3}, rng)}; },
        [&](Tape& tape, std::span<const Var> x) {
          return sum(mul(batch_norm(x[0], s, Mode::kTrain, v), tape.constant(w)));
        },
        100, params);
    EXPECT_LT(err, 1e-5) << "virtual size " << v;
  }
}

TEST(Linear, GradCheck) {
  Rng rng(15);
  LinearParams lin(3, 2, true, rng);
  std::vector<Parameter*> params{&lin.weight, &lin.bias};
  const double err = worst_grad_error([&] { return std::vector<Tensor>{random_tensor({5, 3}, rng)}; },
                                      [&](Tape&, std::span<const Var> v) { return sum(square(lin.forward(v[0]))); },
                                      100, params);
  EXPECT_LT(err, 1e-6);
}

TEST(SelfAttention, SingleRowReturnsValues) {
  Rng rng(3);
  AttentionParams p(3, 2, rng);
  Tape t;
  const Tensor h = random_tensor({1, 3}, rng);
  const Tensor out = self_attention(t.constant(h), p).value();
  const Tensor v = matmul(h, p.wv.value);
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(out[c], v[c], 1e-15);
}

TEST(SelfAttention, ZeroQueryKeyGivesColumnMean) {
  Rng rng(3);
  AttentionParams p(3, 2, rng);
  p.wq.value.fill(0.0);
  p.wk.value.fill(0.0);
  Tape t;
  const Tensor h = random_tensor({4, 3}, rng);
  const Tensor out = self_attention(t.constant(h), p).value();
  const Tensor v = matmul(h, p.wv.value);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0.0;
    for (std::size_t i = 0; i < 4; ++i) m += v(i, c) / 4.0;
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out(i, c), m, 1e-14);
  }
}

TEST(SelfAttention, GroupsAreIndependent) {
  Rng rng(31);
  AttentionParams p(3, 2, rng);
  Tape t;
  const Tensor h = random_tensor({6, 3}, rng);
  const Tensor grouped = self_attention(t.constant(h), p, 3).value();
  Tensor first({3, 3});
  for (std::size_t i = 0; i < 9; ++i) first[i] = h[i];
  const Tensor alone = self_attention(t.constant(first), p).value();
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(grouped[i], alone[i]);
  EXPECT_THROW(self_attention(t.constant(h), p, 4), DimensionError);
  EXPECT_THROW(self_attention(t.constant(Tensor({2, 4})), p), DimensionError);
}

TEST(SelfAttention, GradCheck) {
  Rng rng(41);
  AttentionParams p(3, 2, rng);
  std::vector<Parameter*> params{&p.wq, &p.wk, &p.wv};
  const Tensor w = random_tensor({4, 2}, rng);
  for (std::size_t group : {0u, 2u}) {
    const double err = worst_grad_error(
        [&] { return std::vector<Tensor>{random_tensor({4, 3}, rng)}; },
        [&](Tape& tape, std::span<const Var> v) {
          return sum(mul(self_attention(v[0], p, group), tape.constant(w)));
        },
        100, params);
    EXPECT_LT(err, 1e-5);
  }
}

TEST(FeatureTokens, GradCheck) {
  Rng rng(43);
  const Tensor probe = random_tensor({3, 4}, rng);
  const double err = worst_grad_error(
      [&] {
        return std::vector<Tensor>{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng), random_tensor({4, 2}, rng),
                                   random_tensor({2}, rng), random_tensor({4}, rng)};
      },
      [&](Tape& t, std::span<const Var> v) {
        return sum(mul(token_logits(tokenize(v[0], v[1], v[2]), v[3], v[4], 4), t.constant(probe)));
      },
      100);
  EXPECT_LT(err, 1e-5);
}
