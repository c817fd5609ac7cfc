#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "bertil/gradcheck.hpp"
#include "bertil/interaction.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using bertil::InteractionHeadParams;
using bertil::InteractionLayerParams;
using bertil::Tape;
using bertil::Tensor;
using bertil::Var;

namespace {

template <class T>
InteractionHeadParams<T> random_head(std::size_t c, std::size_t d, std::mt19937_64& rng, double scale) {
  return {testutil::random_matrix<T>(c, d, rng, scale), testutil::random_matrix<T>(c, d, rng, scale),
          testutil::random_matrix<T>(c, d, rng, scale)};
}

template <class T>
InteractionLayerParams<T> random_layer(std::size_t c, std::size_t heads, std::mt19937_64& rng, double scale) {
  InteractionLayerParams<T> p;
  for (std::size_t h = 0; h < heads; ++h) p.heads.push_back(random_head<T>(c, c / heads, rng, scale));
  p.residual = testutil::random_matrix<T>(c, c, rng, scale);
  return p;
}

Tensor<double> permute_rows(const Tensor<double>& x, const std::vector<std::size_t>& perm) {
  Tensor<double> out(x.shape());
  for (std::size_t r = 0; r < perm.size(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(perm[r], c);
  return out;
}

}  // namespace

TEST(Attention, ZeroQueryGivesUniformRows) {
  std::mt19937_64 rng(1);
  const auto stack = testutil::random_matrix<double>(5, 768, rng);
  auto head = random_head<double>(768, 96, rng, 0.05);
  head.query.fill(0.0);
  const auto alpha = bertil::attention_weights(stack, head);
  for (double v : alpha.data()) EXPECT_EQ(v, 0.2);
}

TEST(Attention, IdenticalRowsGiveUniformRows) {
  std::mt19937_64 rng(2);
  const auto row = testutil::random_matrix<double>(1, 768, rng);
  auto stack = Tensor<double>::matrix(5, 768);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 768; ++c) stack(r, c) = row(0, c);
  const auto alpha = bertil::attention_weights(stack, random_head<double>(768, 96, rng, 0.05));
  for (double v : alpha.data()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Attention, MatchesLoopOracle) {
  std::mt19937_64 rng(3);
  const auto stack = testutil::random_matrix<double>(5, 768, rng);
  const auto head = random_head<double>(768, 96, rng, 0.05);
  const auto alpha = bertil::attention_weights(stack, head);
  const auto want = oracle::attention(oracle::to_mat(stack), oracle::to_mat(head.query), oracle::to_mat(head.key));
  for (std::size_t m = 0; m < 5; ++m)
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(alpha(m, k), want[m][k], 1e-6);
}

TEST(Attention, RowsSumToOne) {
  std::mt19937_64 rng(4);
  for (double scale : {0.01, 0.1, 1.0}) {
    const auto stack = testutil::random_matrix<double>(5, 64, rng);
    const auto alpha = bertil::attention_weights(stack, random_head<double>(64, 8, rng, scale));
    for (std::size_t m = 0; m < 5; ++m) {
      double s = 0.0;
      for (double v : alpha.row(m)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Attention, ScalingScoresSharpensRows) {
  // Scaling both query and key by sqrt(c) multiplies every score by c, so the
  // largest weight in each row cannot decrease.
  std::mt19937_64 rng(5);
  const auto stack = testutil::random_matrix<double>(5, 32, rng);
  const auto head = random_head<double>(32, 8, rng, 0.3);
  double prev[5] = {0, 0, 0, 0, 0};
  for (double c : {1.0, 2.0, 4.0}) {
    auto scaled = head;
    for (auto& v : scaled.query.data()) v *= std::sqrt(c);
    for (auto& v : scaled.key.data()) v *= std::sqrt(c);
    const auto alpha = bertil::attention_weights(stack, scaled);
    for (std::size_t m = 0; m < 5; ++m) {
      const auto row = alpha.row(m);
      const double mx = *std::max_element(row.begin(), row.end());
      EXPECT_GE(mx, prev[m] - 1e-12);
      prev[m] = mx;
    }
  }
}

TEST(ApplyHead, UniformWeightsWithSelectorAverageLayers) {
  std::mt19937_64 rng(6);
  const auto stack = testutil::random_matrix<double>(5, 768, rng);
  InteractionHeadParams<double> head{Tensor<double>::matrix(768, 96), Tensor<double>::matrix(768, 96),
                                     Tensor<double>::matrix(768, 96)};
  for (std::size_t j = 0; j < 96; ++j) head.value(j, j) = 1.0;
  const auto out = bertil::apply_head(stack, head, Tensor<double>::matrix(5, 5, 0.2));
  for (std::size_t m = 0; m < 5; ++m)
    for (std::size_t j = 0; j < 96; ++j) {
      double mean = 0.0;
      for (std::size_t k = 0; k < 5; ++k) mean += stack(k, j);
      EXPECT_NEAR(out(m, j), mean / 5.0, 1e-12);
    }
}

TEST(ApplyHead, OneHotWeightsSelectOwnLayer) {
  std::mt19937_64 rng(7);
  const auto stack = testutil::random_matrix<double>(5, 48, rng);
  const auto head = random_head<double>(48, 12, rng, 0.2);
  const auto out = bertil::apply_head(stack, head, Tensor<double>::identity(5));
  const auto want = oracle::matmul(oracle::to_mat(stack), oracle::to_mat(head.value));
  for (std::size_t m = 0; m < 5; ++m)
    for (std::size_t j = 0; j < 12; ++j) EXPECT_NEAR(out(m, j), want[m][j], 1e-12);
}

TEST(ApplyHead, MatchesLoopOracle) {
  std::mt19937_64 rng(8);
  const auto stack = testutil::random_matrix<double>(5, 768, rng);
  const auto head = random_head<double>(768, 96, rng, 0.05);
  const auto alpha = bertil::attention_weights(stack, head);
  const auto out = bertil::apply_head(stack, head, alpha);
  const auto want = oracle::head_output(oracle::to_mat(stack), oracle::to_mat(head.value), oracle::to_mat(alpha));
  for (std::size_t m = 0; m < 5; ++m)
    for (std::size_t j = 0; j < 96; ++j) EXPECT_NEAR(out(m, j), want[m][j], 1e-6);
}

TEST(Refine, ZeroHeadsAndIdentityResidualGiveRelu) {
  std::mt19937_64 rng(9);
  const auto stack = testutil::random_matrix<double>(5, 64, rng);
  InteractionLayerParams<double> p;
  for (int h = 0; h < 8; ++h)
    p.heads.push_back({Tensor<double>::matrix(64, 8), Tensor<double>::matrix(64, 8), Tensor<double>::matrix(64, 8)});
  p.residual = Tensor<double>::identity(64);
  const auto out = bertil::refine_stack(stack, p);
  for (std::size_t i = 0; i < stack.size(); ++i) EXPECT_EQ(out[i], std::max(0.0, stack[i]));
}

TEST(Refine, OutputIsNonNegative) {
  std::mt19937_64 rng(10);
  const auto out = bertil::refine_stack(testutil::random_matrix<float>(5, 64, rng), random_layer<float>(64, 8, rng, 0.2));
  for (float v : out.data()) EXPECT_GE(v, 0.0f);
}

TEST(Refine, MatchesStraightLineOracleAtFullWidth) {
  std::mt19937_64 rng(11);
  const auto stack = testutil::random_matrix<double>(5, 768, rng);
  const auto layer = random_layer<double>(768, 8, rng, 0.04);
  const auto out = bertil::refine_stack(stack, layer);
  const auto want = oracle::refine(oracle::to_mat(stack), layer);
  double worst = 0.0;
  for (std::size_t m = 0; m < 5; ++m)
    for (std::size_t c = 0; c < 768; ++c) worst = std::max(worst, std::abs(out(m, c) - want[m][c]));
  EXPECT_LT(worst, 1e-5);
}

TEST(Refine, FloatMatchesOracle) {
  std::mt19937_64 rng(12);
  const auto stack = testutil::random_matrix<float>(5, 768, rng);
  const auto layer = random_layer<float>(768, 8, rng, 0.04);
  const auto out = bertil::refine_stack(stack, layer);
  const auto want = oracle::refine(oracle::to_mat(stack), layer);
  double worst = 0.0;
  for (std::size_t m = 0; m < 5; ++m)
    for (std::size_t c = 0; c < 768; ++c) worst = std::max(worst, std::abs(out(m, c) - want[m][c]));
  EXPECT_LT(worst, 1e-4);
}

TEST(Refine, PermutationEquivariance) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const auto stack = testutil::random_matrix<double>(5, 32, rng);
    const auto layer = random_layer<double>(32, 4, rng, 0.3);
    std::vector<std::size_t> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto a = permute_rows(bertil::refine_stack(stack, layer), perm);
    const auto b = bertil::refine_stack(permute_rows(stack, perm), layer);
    EXPECT_LT(bertil::max_abs_diff(a, b), 1e-12);
  }
}

TEST(Refine, HeadWidthMismatchThrows) {
  std::mt19937_64 rng(14);
  auto layer = random_layer<double>(32, 4, rng, 0.3);
  layer.heads.pop_back();
  EXPECT_THROW(bertil::refine_stack(testutil::random_matrix<double>(5, 32, rng), layer), bertil::DimensionError);
}

TEST(Refine, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(15);
  auto layer = random_layer<double>(8, 2, rng, 0.5);
  auto stack = testutil::random_matrix<double>(5, 8, rng);
  const auto w = testutil::random_matrix<double>(40, 1, rng);
  std::vector<Tensor<double>*> params{&stack};
  for (auto& h : layer.heads) {
    params.push_back(&h.query);
    params.push_back(&h.key);
    params.push_back(&h.value);
  }
  params.push_back(&layer.residual);
  const auto r = bertil::check_gradients(
      [&](Tape<double>& t, std::span<const Var<double>> p) {
        bertil::BoundInteractionLayer<double> b;
        for (std::size_t h = 0; h < 2; ++h) b.heads.push_back({p[1 + 3 * h], p[2 + 3 * h], p[3 + 3 * h]});
        b.residual = p[7];
        const auto out = bertil::refine_stack(p[0], b);
        return bertil::ops::matmul(bertil::ops::reshape(out, {1, 40}), t.constant(w));
      },
      params);
  EXPECT_LT(r.max_relative_error, 1e-6);
}
