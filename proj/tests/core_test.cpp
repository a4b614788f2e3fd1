#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <functional>
#include <vector>

#include "telescopic/core/errors.hpp"
#include "telescopic/core/gradcheck.hpp"
#include "telescopic/core/ops.hpp"
#include "telescopic/core/serialize.hpp"
#include "grad_suite.hpp"
#include "test_util.hpp"

namespace telescopic {
namespace {

using testing::GradCase;
using testing::kGradSeeds;
using testing::kGradTol;
using testing::primitive_grad_cases;
using testing::primitive_grad_error;
using testing::probe;
using testing::random_tensor;

// ---- forward oracles ----

TEST(Ops, MatmulMatchesTripleLoop) {
  RngStream rng(3);
  const std::size_t m = 5, k = 7, n = 4;
  Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
  Tensor c = ops::matmul(a, b);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += double(a[i * k + p]) * double(b[p * n + j]);
      EXPECT_NEAR(c[i * n + j], s, 1e-12);
    }
}

TEST(Ops, BmmTransposeMatchesLoop) {
  RngStream rng(4);
  const std::size_t g = 3, m = 4, k = 5, n = 2;
  Tensor a = random_tensor({g, m, k}, rng), b = random_tensor({g, n, k}, rng);
  Tensor c = ops::bmm(a, b, true);
  ASSERT_EQ(c.shape(), (Shape{g, m, n}));
  for (std::size_t q = 0; q < g; ++q)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t p = 0; p < k; ++p) s += double(a[(q * m + i) * k + p]) * double(b[(q * n + j) * k + p]);
        EXPECT_NEAR(c[(q * m + i) * n + j], s, 1e-12);
      }
}

TEST(Ops, Conv2dMatchesDirectSum) {
  RngStream rng(5);
  const std::size_t b = 2, ci = 3, co = 2, h = 5, w = 6;
  Tensor x = random_tensor({b, ci, h, w}, rng), k = random_tensor({co, ci, 3, 3}, rng), bias = random_tensor({co}, rng);
  Tensor y = ops::conv2d(x, k, &bias, ops::Padding::kSame);
  ASSERT_EQ(y.shape(), (Shape{b, co, h, w}));
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          double s = bias[o];
          for (std::size_t i = 0; i < ci; ++i)
            for (int dr = -1; dr <= 1; ++dr)
              for (int dc = -1; dc <= 1; ++dc) {
                const long rr = long(r) + dr, cc = long(c) + dc;
                if (rr < 0 || cc < 0 || rr >= long(h) || cc >= long(w)) continue;
                s += double(x[((n * ci + i) * h + rr) * w + cc]) * double(k[((o * ci + i) * 3 + dr + 1) * 3 + dc + 1]);
              }
          EXPECT_NEAR(y[((n * co + o) * h + r) * w + c], s, 1e-12);
        }
  Tensor valid = ops::conv2d(x, k, nullptr, ops::Padding::kNone);
  EXPECT_EQ(valid.shape(), (Shape{b, co, h - 2, w - 2}));
}

TEST(Ops, SoftmaxRowsSumToOneAndResistOverflow) {
  Tensor x({2, 3}, std::vector<Real>{1000, 1001, 1002, -5, 0, 5});
  Tensor y = ops::softmax(x);
  for (std::size_t r = 0; r < 2; ++r) EXPECT_NEAR(y[r * 3] + y[r * 3 + 1] + y[r * 3 + 2], 1.0, 1e-12);
  const double e1 = std::exp(-1.0), e2 = std::exp(-2.0);
  EXPECT_NEAR(y[2], 1.0 / (1.0 + e1 + e2), 1e-12);
}

TEST(Ops, LayerNormHasZeroMeanUnitVariance) {
  RngStream rng(6);
  Tensor x = random_tensor({3, 16}, rng, -4, 9);
  Tensor y = ops::layer_norm(x, Tensor::ones({16}), Tensor::zeros({16}));
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 16; ++c) m += y[r * 16 + c];
    m /= 16;
    for (std::size_t c = 0; c < 16; ++c) v += (y[r * 16 + c] - m) * (y[r * 16 + c] - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 16, 1.0, 1e-4);
  }
}

TEST(Ops, SiluAndSigmoidClosedForm) {
  Tensor x({3}, std::vector<Real>{-2, 0, 3});
  Tensor s = ops::sigmoid(x), u = ops::silu(x);
  for (std::size_t i = 0; i < 3; ++i) {
    const double sig = 1.0 / (1.0 + std::exp(-double(x[i])));
    EXPECT_NEAR(s[i], sig, 1e-15);
    EXPECT_NEAR(u[i], double(x[i]) * sig, 1e-15);
  }
}

TEST(Ops, PatchifyRoundTrips) {
  RngStream rng(7);
  Tensor x = random_tensor({2, 1, 8, 8}, rng);
  Tensor t = ops::patchify(x, 4);
  EXPECT_EQ(t.shape(), (Shape{8, 16}));
  // Second patch of the first image starts at column 4 of row 0.
  EXPECT_EQ(t[16], x[4]);
  Tensor back = ops::unpatchify(t, 2, 1, 8, 8, 4);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(back[i], x[i]);
}

TEST(Ops, DropoutEvalIsIdentityAndTrainScalesSurvivors) {
  RngStream rng(8);
  Tensor x = random_tensor({1000}, rng, 1, 2);
  RngStream d(9);
  Tensor e = ops::dropout(x, 0.25, false, d);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(e[i], x[i]);
  Tensor t = ops::dropout(x, 0.25, true, d);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (t[i] == 0) {
      ++zeros;
      continue;
    }
    EXPECT_NEAR(t[i], x[i] / 0.75, 1e-12);
  }
  EXPECT_GT(zeros, 180u);
  EXPECT_LT(zeros, 320u);
}

TEST(Ops, BatchNormEvalUsesRunningStats) {
  RngStream rng(10);
  Tensor x = random_tensor({4, 2, 3, 3}, rng);
  auto stats = ops::BatchNormStats::fresh(2);
  stats.running_mean.mutable_data()[1] = 0.5;
  stats.running_var.mutable_data()[1] = 4.0;
  Tensor y = ops::batch_norm(x, Tensor::ones({2}), Tensor::zeros({2}), stats, false);
  const std::size_t i = (0 * 2 + 1) * 9 + 4;
  EXPECT_NEAR(y[i], (x[i] - 0.5) / std::sqrt(4.0 + ops::kBatchNormEps), 1e-12);
}

TEST(Ops, ShapeErrorsAreReported) {
  EXPECT_THROW(ops::matmul(Tensor({2, 3}), Tensor({4, 2})), DimensionError);
  EXPECT_THROW(ops::add(Tensor({2}), Tensor({3})), DimensionError);
}

TEST(Tensor, NonFiniteResultsThrow) {
  Tensor x({2}, std::vector<Real>{1, std::numeric_limits<Real>::infinity()});
  EXPECT_THROW(ops::scale(x, 2), NumericError);
}

TEST(Tensor, BackwardAccumulatesThroughSharedInputs) {
  Tensor x({1}, std::vector<Real>{3});
  x.set_requires_grad(true);
  Tensor y = ops::sum(ops::mul(x, x));
  backward(y);
  EXPECT_NEAR(x.grad()[0], 6.0, 1e-15);
}

TEST(Rng, StreamsAreReproducibleAndIndependent) {
  RngStream a(42), b(42);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  RngStream p(42);
  RngStream c1 = p.split("x"), c2 = p.split("y");
  EXPECT_NE(c1.next_u64(), c2.next_u64());
  EXPECT_EQ(p.counter(), 0u);
}

TEST(Serialize, TensorDirRoundTripsAndDetectsCorruption) {
  const auto dir = testing::temp_dir("tensor_dir");
  RngStream rng(11);
  std::vector<io::NamedTensor> entries{{"a.w", random_tensor({3, 4}, rng)}, {"b", random_tensor({5}, rng)}};
  io::save_tensor_dir(dir, entries, {{"note", "x"}});
  io::TensorDir back = io::load_tensor_dir(dir);
  ASSERT_EQ(back.entries.size(), 2u);
  EXPECT_EQ(back.manifest.at("note"), "x");
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(back.entries[0].tensor[i], entries[0].tensor[i]);

  // Flip one payload byte.
  const auto file = dir / back.manifest.at("entries")[1].at("file").get<std::string>();
  std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(-1, std::ios::end);
  char c;
  f.get(c);
  f.seekp(-1, std::ios::end);
  f.put(static_cast<char>(c ^ 0x10));
  f.close();
  EXPECT_THROW(io::load_tensor_dir(dir), CorruptionError);
}

// ---- finite-difference suite ----

class PrimitiveGrad : public ::testing::TestWithParam<GradCase> {};

TEST_P(PrimitiveGrad, MatchesCentralDifferences) {
  const GradCase& c = GetParam();
  for (int seed = 0; seed < kGradSeeds; ++seed)
    EXPECT_LT(primitive_grad_error(c, seed), kGradTol) << c.name << " seed " << seed;
}

INSTANTIATE_TEST_SUITE_P(
    Ops, PrimitiveGrad, ::testing::ValuesIn(primitive_grad_cases()),
    [](const ::testing::TestParamInfo<GradCase>& info) { return std::string(info.param.name); });

}  // namespace
}  // namespace telescopic
