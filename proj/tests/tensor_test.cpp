#include "vlamd/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "testutil.hpp"
#include "vlamd/rng.hpp"

using vlamd::Tensor;
using T = Tensor<double>;

namespace {

T rand_t(vlamd::Shape shape, std::mt19937_64& rng, bool rg = true) {
  return T::uniform(std::move(shape), rng, -1.0, 1.0, rg);
}

TEST(Matmul, IdentityTimesColumn) {
  auto a = T::from({1, 0, 0, 1}, {2, 2});
  auto b = T::from({3, 4}, {2, 1});
  auto c = vlamd::matmul(a, b);
  EXPECT_EQ(c.shape(), (vlamd::Shape{2, 1}));
  EXPECT_DOUBLE_EQ(c.data()[0], 3);
  EXPECT_DOUBLE_EQ(c.data()[1], 4);
}

TEST(Matmul, ShapeAlgebra) {
  auto rng = vlamd::make_rng(1);
  auto a = rand_t({2, 3}, rng);
  auto b = rand_t({3, 4}, rng);
  EXPECT_EQ(vlamd::matmul(a, b).shape(), (vlamd::Shape{2, 4}));
}

TEST(Matmul, MatchesTripleLoopOracle) {
  auto rng = vlamd::make_rng(2);
  auto a = rand_t({4, 4}, rng);
  auto b = rand_t({4, 4}, rng);
  auto c = vlamd::matmul(a, b);
  auto ref = testutil::matmul_naive(a.data(), b.data(), 4, 4, 4);
  for (size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(c.data()[i], ref[i], 1e-12);
}

TEST(Matmul, MismatchNamesBothShapes) {
  auto rng = vlamd::make_rng(3);
  auto a = rand_t({2, 3}, rng);
  auto b = rand_t({4, 2}, rng);
  try {
    vlamd::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const vlamd::ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  auto rng = vlamd::make_rng(4);
  auto a = rand_t({3, 2}, rng);
  auto b = rand_t({2, 4}, rng);
  auto loss = [&] { return vlamd::mean(vlamd::tanh(vlamd::matmul(a, b))); };
  auto r = testutil::check_gradients(loss, {{"a", a}, {"b", b}});
  EXPECT_TRUE(r.ok) << r.leaf << "[" << r.coord << "] analytic=" << r.analytic << " fd=" << r.numeric;
}

TEST(MatvecOps, MatchLoopsAndGradients) {
  auto rng = vlamd::make_rng(5);
  auto a = rand_t({3, 4}, rng);
  auto x = rand_t({4}, rng);
  auto y = vlamd::matvec(a, x);
  for (int i = 0; i < 3; ++i) {
    double s = 0;
    for (int j = 0; j < 4; ++j) s += a.data()[i * 4 + j] * x.data()[j];
    EXPECT_NEAR(y.data()[i], s, 1e-12);
  }
  auto xt = rand_t({3}, rng);
  auto z = vlamd::tmatvec(a, xt);
  for (int j = 0; j < 4; ++j) {
    double s = 0;
    for (int i = 0; i < 3; ++i) s += a.data()[i * 4 + j] * xt.data()[i];
    EXPECT_NEAR(z.data()[j], s, 1e-12);
  }
  auto loss = [&] {
    auto u = vlamd::matvec(a, x);
    auto w = vlamd::tmatvec(a, xt);
    return vlamd::add(vlamd::mean(vlamd::sigmoid(u)), vlamd::mean(vlamd::tanh(w)));
  };
  auto r = testutil::check_gradients(loss, {{"a", a}, {"x", x}, {"xt", xt}});
  EXPECT_TRUE(r.ok) << r.leaf << "[" << r.coord << "] analytic=" << r.analytic << " fd=" << r.numeric;
}

TEST(Conv, OnesKernelHandUnrolled) {
  auto x = T::full({1, 4, 4}, 1.0);
  auto w = T::full({1, 1, 3, 3}, 1.0);
  auto b = T::zeros({1});
  auto y = vlamd::conv2d_stride2(x, w, b);
  ASSERT_EQ(y.shape(), (vlamd::Shape{1, 2, 2}));
  // hand unrolled: padded 3x3 windows centered at (0,0),(0,2),(2,0),(2,2)
  EXPECT_DOUBLE_EQ(y.data()[0], 4);
  EXPECT_DOUBLE_EQ(y.data()[1], 6);
  EXPECT_DOUBLE_EQ(y.data()[2], 6);
  EXPECT_DOUBLE_EQ(y.data()[3], 9);
}

TEST(Conv, ZeroInputBroadcastsBias) {
  auto rng = vlamd::make_rng(6);
  auto x = T::zeros({2, 6, 8});
  auto w = rand_t({3, 2, 3, 3}, rng, false);
  auto b = T::from({0.5, -1.0, 2.0}, {3});
  auto y = vlamd::conv2d_stride2(x, w, b);
  ASSERT_EQ(y.shape(), (vlamd::Shape{3, 3, 4}));
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(y.data()[o * 12 + i], b.data()[o]);
}

TEST(Conv, TwoStackedBlocksQuarterResolution) {
  auto rng = vlamd::make_rng(7);
  auto x = rand_t({3, 32, 100}, rng, false);
  auto w1 = rand_t({4, 3, 3, 3}, rng, false);
  auto b1 = T::zeros({4});
  auto w2 = rand_t({8, 4, 3, 3}, rng, false);
  auto b2 = T::zeros({8});
  auto y = vlamd::conv2d_stride2(vlamd::conv2d_stride2(x, w1, b1), w2, b2);
  EXPECT_EQ(y.shape(), (vlamd::Shape{8, 8, 25}));
}

TEST(Conv, MatchesIndependentReference) {
  auto rng = vlamd::make_rng(8);
  auto x = rand_t({2, 5, 7}, rng);
  auto w = rand_t({3, 2, 3, 3}, rng);
  auto b = rand_t({3}, rng);
  auto y = vlamd::conv2d_stride2(x, w, b);
  auto ref = testutil::conv3x3s2_naive(x.data(), 2, 5, 7, w.data(), 3, b.data());
  ASSERT_EQ(y.data().size(), ref.size());
  for (size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
}

TEST(Conv, RejectsTinyInput) {
  auto x = T::zeros({1, 1, 5});
  auto w = T::zeros({1, 1, 3, 3});
  auto b = T::zeros({1});
  EXPECT_THROW(vlamd::conv2d_stride2(x, w, b), vlamd::ShapeError);
}

TEST(Conv, GradientMatchesFiniteDifferences) {
  auto rng = vlamd::make_rng(9);
  auto x = rand_t({2, 4, 6}, rng);
  auto w = rand_t({2, 2, 3, 3}, rng);
  auto b = rand_t({2}, rng);
  auto loss = [&] { return vlamd::mean(vlamd::tanh(vlamd::conv2d_stride2(x, w, b))); };
  auto r = testutil::check_gradients(loss, {{"x", x}, {"w", w}, {"b", b}});
  EXPECT_TRUE(r.ok) << r.leaf << "[" << r.coord << "] analytic=" << r.analytic << " fd=" << r.numeric;
}

TEST(Softmax, UniformOnEqualInputs) {
  auto x = T::zeros({3});
  auto s = vlamd::softmax(x, 0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(s.data()[i], 1.0 / 3.0, 1e-12);
}

TEST(Softmax, RowsSumToOneAndNonNegative) {
  auto rng = vlamd::make_rng(10);
  for (int rep = 0; rep < 20; ++rep) {
    auto x = T::uniform({4, 6}, rng, -5.0, 5.0, false);
    auto s = vlamd::softmax(x, 1);
    for (int i = 0; i < 4; ++i) {
      double sum = 0;
      for (int j = 0; j < 6; ++j) {
        EXPECT_GE(s.data()[i * 6 + j], 0.0);
        sum += s.data()[i * 6 + j];
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, MatchesNaiveReference) {
  auto rng = vlamd::make_rng(11);
  auto x = T::uniform({5}, rng, -3.0, 3.0, false);
  auto s = vlamd::softmax(x, 0);
  auto ref = testutil::softmax_naive(x.data());
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(s.data()[i], ref[i], 1e-12);
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  auto rng = vlamd::make_rng(12);
  auto x = rand_t({3, 5}, rng);
  auto c = rand_t({3, 5}, rng, false);
  auto loss = [&] { return vlamd::mean(vlamd::mul(vlamd::softmax(x, 1), c)); };
  auto r = testutil::check_gradients(loss, {{"x", x}}, 1e-6);
  EXPECT_TRUE(r.ok) << r.leaf << "[" << r.coord << "] analytic=" << r.analytic << " fd=" << r.numeric;
}

TEST(Softmax, AxisOutOfRange) {
  auto x = T::zeros({3, 4});
  EXPECT_THROW(vlamd::softmax(x, 2), vlamd::AxisError);
  EXPECT_THROW(vlamd::softmax(x, -1), vlamd::AxisError);
}

TEST(Elementwise, SigmoidOfZeroIsHalf) {
  auto s = vlamd::sigmoid(T::zeros({1}));
  EXPECT_DOUBLE_EQ(s.item(), 0.5);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  auto rng = vlamd::make_rng(13);
  auto x = rand_t({7}, rng);
  auto y = rand_t({7}, rng);
  auto loss = [&] {
    auto a = vlamd::mul(vlamd::sigmoid(x), vlamd::tanh(y));
    auto b = vlamd::relu(vlamd::sub(x, y));
    auto c = vlamd::scale(vlamd::neg(vlamd::add(a, b)), 0.7);
    return vlamd::sum(c);
  };
  auto r = testutil::check_gradients(loss, {{"x", x}, {"y", y}});
  EXPECT_TRUE(r.ok) << r.leaf << "[" << r.coord << "] analytic=" << r.analytic << " fd=" << r.numeric;
}

TEST(Elementwise, RowvecBroadcastGradients) {
  auto rng = vlamd::make_rng(14);
  auto m = rand_t({3, 4}, rng);
  auto v = rand_t({4}, rng);
  auto g = rand_t({4}, rng);
  auto loss = [&] { return vlamd::mean(vlamd::tanh(vlamd::mul_rowvec(vlamd::add_rowvec(m, v), g))); };
  auto r = testutil::check_gradients(loss, {{"m", m}, {"v", v}, {"g", g}});
  EXPECT_TRUE(r.ok) << r.leaf << "[" << r.coord << "] analytic=" << r.analytic << " fd=" << r.numeric;
}

TEST(LayerNorm, NormalizesAlongAxis) {
  auto rng = vlamd::make_rng(15);
  auto x = T::uniform({4, 6}, rng, -4.0, 9.0, false);
  auto y = vlamd::layer_norm(x, 1);
  for (int i = 0; i < 4; ++i) {
    double mean = 0, var = 0;
    for (int j = 0; j < 6; ++j) mean += y.data()[i * 6 + j];
    mean /= 6;
    for (int j = 0; j < 6; ++j) var += (y.data()[i * 6 + j] - mean) * (y.data()[i * 6 + j] - mean);
    var /= 6;
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  auto rng = vlamd::make_rng(16);
  auto x = rand_t({2, 5}, rng);
  auto c = rand_t({2, 5}, rng, false);
  auto loss = [&] { return vlamd::mean(vlamd::mul(vlamd::layer_norm(x, 1), c)); };
  auto r = testutil::check_gradients(loss, {{"x", x}});
  EXPECT_TRUE(r.ok) << r.leaf << "[" << r.coord << "] analytic=" << r.analytic << " fd=" << r.numeric;
}

TEST(ShapeOps, ValuesAndGradients) {
  auto rng = vlamd::make_rng(17);
  auto x = rand_t({2, 3, 4}, rng);
  auto tr = vlamd::transpose(x, 0, 2);
  EXPECT_EQ(tr.shape(), (vlamd::Shape{4, 3, 2}));
  // spot-check the permuted layout
  EXPECT_DOUBLE_EQ(tr.data()[0], x.data()[0]);
  EXPECT_DOUBLE_EQ(tr.data()[1], x.data()[12]);

  auto sl = vlamd::slice(x, 1, 1, 2);
  EXPECT_EQ(sl.shape(), (vlamd::Shape{2, 2, 4}));
  EXPECT_DOUBLE_EQ(sl.data()[0], x.data()[4]);

  auto y = rand_t({2, 1, 4}, rng);
  auto cc = vlamd::concat<double>({x, y}, 1);
  EXPECT_EQ(cc.shape(), (vlamd::Shape{2, 4, 4}));

  EXPECT_THROW(vlamd::slice(x, 1, 2, 3), vlamd::ShapeError);
  EXPECT_THROW(vlamd::concat<double>({x, rand_t({2, 1, 5}, rng)}, 1), vlamd::ShapeError);

  auto loss = [&] {
    auto t1 = vlamd::transpose(x, 0, 2);
    auto t2 = vlamd::reshape(vlamd::slice(t1, 0, 0, 2), {2, 6});
    auto t3 = vlamd::concat<double>({t2, vlamd::reshape(y, {2, 4})}, 1);
    return vlamd::mean(vlamd::tanh(t3));
  };
  auto r = testutil::check_gradients(loss, {{"x", x}, {"y", y}});
  EXPECT_TRUE(r.ok) << r.leaf << "[" << r.coord << "] analytic=" << r.analytic << " fd=" << r.numeric;
}

TEST(Embedding, LookupAndScatterGradient) {
  auto rng = vlamd::make_rng(18);
  auto table = rand_t({5, 3}, rng);
  std::vector<int> ids{2, 0, 2};
  auto e = vlamd::embedding_lookup(table, ids);
  EXPECT_EQ(e.shape(), (vlamd::Shape{3, 3}));
  for (int j = 0; j < 3; ++j) {
    EXPECT_DOUBLE_EQ(e.data()[0 * 3 + j], table.data()[2 * 3 + j]);
    EXPECT_DOUBLE_EQ(e.data()[1 * 3 + j], table.data()[0 * 3 + j]);
  }
  EXPECT_THROW(vlamd::embedding_lookup(table, std::vector<int>{5}), vlamd::VocabError);

  auto c = rand_t({3, 3}, rng, false);
  auto loss = [&] { return vlamd::mean(vlamd::mul(vlamd::embedding_lookup(table, ids), c)); };
  auto r = testutil::check_gradients(loss, {{"table", table}});
  EXPECT_TRUE(r.ok) << r.leaf << "[" << r.coord << "] analytic=" << r.analytic << " fd=" << r.numeric;
}

TEST(TakeRowAndStack, RoundTrip) {
  auto rng = vlamd::make_rng(19);
  auto m = rand_t({4, 3}, rng);
  std::vector<T> rows;
  for (int i = 0; i < 4; ++i) rows.push_back(vlamd::take_row(m, i));
  auto back = vlamd::stack_rows(rows);
  EXPECT_EQ(back.shape(), m.shape());
  for (size_t i = 0; i < m.data().size(); ++i) EXPECT_DOUBLE_EQ(back.data()[i], m.data()[i]);
}

TEST(CrossEntropy, OneHotCorrectIsZero) {
  auto p = T::from({0, 1, 0, 0, 0, 1}, {2, 3});
  EXPECT_NEAR(vlamd::cross_entropy(p, {1, 2}).item(), 0.0, 1e-9);
}

TEST(CrossEntropy, UniformIsLogV) {
  int v = 7;
  auto p = T::full({3, v}, 1.0 / v);
  EXPECT_NEAR(vlamd::cross_entropy(p, {0, 3, 6}).item(), std::log(static_cast<double>(v)), 1e-9);
}

TEST(CrossEntropy, MatchesScalarLoopOracle) {
  auto rng = vlamd::make_rng(20);
  auto logits = rand_t({4, 5}, rng, false);
  auto p = vlamd::softmax(logits, 1);
  std::vector<int> targets{3, 0, 1, 4};
  EXPECT_NEAR(vlamd::cross_entropy(p, targets).item(),
              testutil::cross_entropy_naive(p.data(), 4, 5, targets), 1e-12);
}

TEST(CrossEntropy, RejectsOutOfVocabTarget) {
  auto p = T::full({2, 3}, 1.0 / 3);
  EXPECT_THROW(vlamd::cross_entropy(p, {0, 3}), vlamd::VocabError);
  EXPECT_THROW(vlamd::cross_entropy(p, {0}), vlamd::AlignmentError);
}

TEST(CrossEntropy, GradientThroughSoftmax) {
  auto rng = vlamd::make_rng(21);
  auto logits = rand_t({3, 4}, rng);
  std::vector<int> targets{1, 3, 0};
  auto loss = [&] { return vlamd::cross_entropy(vlamd::softmax(logits, 1), targets); };
  auto r = testutil::check_gradients(loss, {{"logits", logits}});
  EXPECT_TRUE(r.ok) << r.leaf << "[" << r.coord << "] analytic=" << r.analytic << " fd=" << r.numeric;
}

TEST(KlDiv, SelfIsZero) {
  auto rng = vlamd::make_rng(22);
  auto p = vlamd::softmax(rand_t({3, 4}, rng, false), 1);
  EXPECT_NEAR(vlamd::kl_div(p, p).item(), 0.0, 1e-12);
}

TEST(KlDiv, PointMassAgainstUniformPairIsLogTwo) {
  auto p = T::from({1, 0}, {1, 2});
  auto q = T::from({0.5, 0.5}, {1, 2});
  EXPECT_NEAR(vlamd::kl_div(p, q).item(), std::log(2.0), 1e-12);
}

TEST(KlDiv, MatchesScalarLoopOracle) {
  auto rng = vlamd::make_rng(23);
  auto p = vlamd::softmax(rand_t({3, 5}, rng, false), 1);
  auto q = vlamd::softmax(rand_t({3, 5}, rng, false), 1);
  EXPECT_NEAR(vlamd::kl_div(p, q).item(), testutil::kl_naive(p.data(), q.data(), 3, 5), 1e-12);
}

TEST(KlDiv, RejectsShapeMismatch) {
  auto p = T::full({2, 3}, 1.0 / 3);
  auto q = T::full({3, 2}, 0.5);
  EXPECT_THROW(vlamd::kl_div(p, q), vlamd::ShapeError);
}

TEST(KlDiv, GradientWrtBothOperands) {
  auto rng = vlamd::make_rng(24);
  auto lp = rand_t({2, 4}, rng);
  auto lq = rand_t({2, 4}, rng);
  auto loss = [&] { return vlamd::kl_div(vlamd::softmax(lp, 1), vlamd::softmax(lq, 1)); };
  auto r = testutil::check_gradients(loss, {{"lp", lp}, {"lq", lq}});
  EXPECT_TRUE(r.ok) << r.leaf << "[" << r.coord << "] analytic=" << r.analytic << " fd=" << r.numeric;
}

TEST(StopGradient, BlocksFlowExactly) {
  auto rng = vlamd::make_rng(25);
  auto x = rand_t({4}, rng);
  auto loss = vlamd::sum(vlamd::stop_gradient(x));
  loss.backward();
  ASSERT_TRUE(x.grad().empty() || x.grad().size() == 4);
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);  // bitwise zero
}

TEST(StopGradient, FrozenFactorProductRule) {
  auto rng = vlamd::make_rng(26);
  auto x = rand_t({4}, rng);
  x.zero_grad();
  auto loss = vlamd::sum(vlamd::mul(x, vlamd::stop_gradient(x)));
  loss.backward();
  ASSERT_EQ(x.grad().size(), 4u);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], x.data()[i]);  // x, not 2x
}

TEST(Backward, RequiresScalar) {
  auto rng = vlamd::make_rng(27);
  auto x = rand_t({2, 2}, rng);
  EXPECT_THROW(x.backward(), vlamd::RankError);
}

TEST(Backward, DiamondReuseSumsBothPaths) {
  auto rng = vlamd::make_rng(28);
  auto x = rand_t({3}, rng);
  auto loss = [&] {
    auto a = vlamd::sigmoid(x);
    auto b = vlamd::tanh(x);
    return vlamd::sum(vlamd::mul(a, b));  // x consumed twice
  };
  auto r = testutil::check_gradients(loss, {{"x", x}});
  EXPECT_TRUE(r.ok) << r.leaf << "[" << r.coord << "] analytic=" << r.analytic << " fd=" << r.numeric;
}

TEST(Backward, RepeatedCallsAccumulate) {
  auto x = T::from({2.0}, {1}, true);
  auto loss = vlamd::mul(x, x);
  loss.backward();
  ASSERT_EQ(x.grad().size(), 1u);
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
  x.zero_grad();
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
}

TEST(NoGrad, SuppressesGraphRecording) {
  auto rng = vlamd::make_rng(29);
  auto x = rand_t({3}, rng);
  vlamd::NoGradScope ng;
  auto y = vlamd::sigmoid(x);
  EXPECT_FALSE(y.requires_grad());
}

}  // namespace
