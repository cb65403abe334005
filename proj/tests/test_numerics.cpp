#include "relprompt/numerics.hpp"
#include "relprompt/rng.hpp"

#include <gtest/gtest.h>

#include <array>
#include <numeric>
#include <set>

using namespace relprompt;

TEST(LogSoftmax, SymmetricPair) {
  const std::vector<double> v{0.0, 0.0};
  const auto out = log_softmax(std::span<const double>(v));
  EXPECT_NEAR(out[0], -std::log(2.0), 1e-15);
  EXPECT_NEAR(out[1], -std::log(2.0), 1e-15);
}

TEST(LogSoftmax, LargeLogitDoesNotOverflow) {
  const std::vector<double> v{1000.0, 0.0};
  const auto out = log_softmax(std::span<const double>(v));
  EXPECT_NEAR(out[0], 0.0, 1e-12);
  EXPECT_NEAR(out[1], -1000.0, 1e-9);
  const std::vector<float> f{1000.0f, 0.0f};
  const auto fo = log_softmax(std::span<const float>(f));
  EXPECT_TRUE(std::isfinite(fo[0]));
  EXPECT_TRUE(std::isfinite(fo[1]));
}

TEST(LogSoftmax, MatchesExtendedPrecisionReference) {
  // tests/oracles/kernels.py (50-digit arithmetic)
  const std::vector<double> v{0.3, -1.7, 2.25, 0.0, 5.5, -0.125, 1.0};
  const std::array<double, 7> expected{-5.2618847114979366, -7.2618847114979366, -3.3118847114979366,
                                       -5.5618847114979366, -0.061884711497936626, -5.6868847114979366,
                                       -4.5618847114979366};
  const auto out = log_softmax(std::span<const double>(v));
  double mass = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_NEAR(out[i], expected[i], 1e-14);
    mass += std::exp(out[i]);
  }
  EXPECT_NEAR(mass, 1.0, 1e-9);
}

TEST(LogSoftmax, ShiftInvariance) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + rng.below(12));
    for (auto& x : v) x = 10.0 * rng.normal();
    const double c = 50.0 * (rng.uniform() - 0.5);
    std::vector<double> shifted = v;
    for (auto& x : shifted) x += c;
    const auto a = log_softmax(std::span<const double>(v));
    const auto b = log_softmax(std::span<const double>(shifted));
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
  }
}

TEST(LogSoftmax, RowsMatchVectorVersion) {
  Matrix<double> m(3, 5);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::sin(0.9 * static_cast<double>(i)) * 4.0;
  const auto rows = log_softmax_rows(m);
  for (Eigen::Index r = 0; r < 3; ++r) {
    const auto v = log_softmax(std::span<const double>(m.row(r).data(), 5));
    for (Eigen::Index c = 0; c < 5; ++c) EXPECT_NEAR(rows(r, c), v[static_cast<std::size_t>(c)], 1e-14);
  }
}

TEST(Adam, ZeroGradientLeavesParameterUnchanged) {
  Matrix<double> p = Matrix<double>::Constant(2, 3, 0.7);
  AdamState<double> state;
  adam_step(p, Matrix<double>(Matrix<double>::Zero(2, 3)), state, AdamHyper{0.1, 0.9, 0.999, 1e-8});
  EXPECT_TRUE(p.isApproxToConstant(0.7, 0.0));
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  Matrix<double> p(1, 3);
  p << 1.0, 1.0, 1.0;
  Matrix<double> g(1, 3);
  g << 3.0, -0.5, 100.0;
  AdamState<double> state;
  adam_step(p, g, state, AdamHyper{0.01, 0.9, 0.999, 1e-8});
  EXPECT_NEAR(p(0, 0), 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p(0, 1), 1.0 + 0.01, 1e-9);
  EXPECT_NEAR(p(0, 2), 1.0 - 0.01, 1e-9);
}

TEST(Adam, FiveStepScalarTrace) {
  // tests/oracles/kernels.py
  const std::array<double, 5> grads{0.5, -1.2, 0.3, 2.0, -0.7};
  const std::array<double, 5> expected{0.9900000002, 0.99429341478434107, 0.99608993528985958,
                                       0.99207008831111586, 0.99033416345015012};
  Matrix<double> p = Matrix<double>::Constant(1, 1, 1.0);
  AdamState<double> state;
  for (std::size_t t = 0; t < grads.size(); ++t) {
    adam_step(p, Matrix<double>(Matrix<double>::Constant(1, 1, grads[t])), state, AdamHyper{0.01, 0.9, 0.999, 1e-8});
    EXPECT_NEAR(p(0, 0), expected[t], 1e-13) << "step " << t + 1;
  }
}

// tests/oracles/pcg32.py; the first six values for (42, 54) are the
// reference implementation's published demo output.
TEST(Rng, GoldenStreams) {
  const std::array<std::uint32_t, 16> s42{0xa15c02b7u, 0x7b47f409u, 0xba1d3330u, 0x83d2f293u, 0xbfa4784bu, 0xcbed606eu,
                                          0xbfc6a3adu, 0x812fff6du, 0xe61f305au, 0xf9384b90u, 0x32db86feu, 0x1dc035f9u,
                                          0xed786826u, 0x3822441du, 0x2ba113d7u, 0x1c5b818bu};
  const std::array<std::uint32_t, 16> s7{0x50a0129bu, 0xdcee7ac9u, 0x826f933cu, 0xb5028a7du, 0xbccab907u, 0x6680ccd5u,
                                         0xe433c762u, 0x2baac197u, 0xfcea3385u, 0xcce1be65u, 0xd50ffe56u, 0xc1747759u,
                                         0x09afd6f5u, 0xc4bf340eu, 0x3d86f989u, 0xc92f3a1du};
  const std::array<std::uint32_t, 16> s0{0x0f5deba9u, 0x184296ddu, 0x357643f4u, 0xf8e84c31u, 0xaac1ca89u, 0x4555f003u,
                                         0x24d8217au, 0x3e18cb9cu, 0x537b339du, 0xe981425eu, 0x059ec9a4u, 0x359def9du,
                                         0xc64f57dfu, 0xab839e24u, 0x227ef53au, 0xcf4a4148u};
  Rng a(42, 54);
  Rng b(7);
  Rng c(0, 1);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(a.next_u32(), s42[i]) << i;
    EXPECT_EQ(b.next_u32(), s7[i]) << i;
    EXPECT_EQ(c.next_u32(), s0[i]) << i;
  }
}

TEST(Rng, BelowStaysInRangeAndCoversIt) {
  Rng rng(11);
  std::set<std::uint32_t> seen;
  for (int i = 0; i < 5000; ++i) {
    const auto v = rng.below(7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Rng, UniformInUnitInterval) {
  Rng rng(12);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 20000.0, 0.5, 0.01);
}

TEST(Rng, TruncatedNormalBounded) {
  Rng rng(13);
  for (int i = 0; i < 10000; ++i) EXPECT_LE(std::abs(rng.truncated_normal(0.02)), 0.04);
}

TEST(Rng, ForkIsIndependentAndDoesNotAdvance) {
  Rng parent(5);
  Rng copy(5);
  Rng f1 = parent.fork(1);
  Rng f1b = parent.fork(1);
  Rng f2 = parent.fork(2);
  EXPECT_EQ(parent.next_u32(), copy.next_u32());
  const auto x = f1.next_u32();
  EXPECT_EQ(x, f1b.next_u32());
  EXPECT_NE(x, f2.next_u32());
}

TEST(Rng, ShuffleIsPermutation) {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  Rng rng(9);
  rng.shuffle(std::span(v));
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
  EXPECT_FALSE(std::is_sorted(v.begin(), v.end()));
}

TEST(GradCheck, QuadraticHasExactGradient) {
  Matrix<double> w(2, 2);
  w << 0.5, -1.0, 2.0, 0.25;
  Matrix<double> grad = 2.0 * w;
  const auto loss = [&] { return w.squaredNorm(); };
  const std::array<GradCheckTarget, 1> targets{GradCheckTarget{"w", &w, &grad}};
  const auto report = grad_check(loss, targets, 1e-4, 1);
  ASSERT_EQ(report.tensors.size(), 1u);
  EXPECT_EQ(report.tensors[0].checked, 4u);
  EXPECT_LT(report.worst_error(), 1e-8);
  EXPECT_EQ(report.precision, "float64");
}

TEST(GradCheck, DetectsWrongGradient) {
  Matrix<double> w = Matrix<double>::Constant(1, 3, 1.5);
  Matrix<double> grad = 3.0 * w;  // true gradient is 2w
  const auto loss = [&] { return w.squaredNorm(); };
  const std::array<GradCheckTarget, 1> targets{GradCheckTarget{"w", &w, &grad}};
  const auto report = grad_check(loss, targets, 1e-4, 1);
  EXPECT_GT(report.worst_error(), 0.3);
  EXPECT_EQ(report.worst_tensor()->name, "w");
}

TEST(RelativeError, UsesFloor) {
  EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1e-10, 0.0), 1e-10 / 1e-8);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
}
