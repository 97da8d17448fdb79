#include "kbqg/gradcheck.hpp"
#include "kbqg/numdiff.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace kbqg::nd;
using Mat = Matrix<double>;

namespace {

Mat random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Weighted sum with fixed random weights turns any output into a scalar loss
// whose gradient exercises every output coordinate.
Var<double> probe(Tape<double>& t, const Var<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = t.constant(random_matrix(rng, y.rows(), y.cols()));
  return sum(mul(y, w));
}

}  // namespace

TEST(Matmul, IdentityAndHandCase) {
  Tape<double> t;
  auto i2 = t.constant(Mat::Identity(2, 2));
  EXPECT_TRUE(matmul(i2, i2).value().isApprox(Mat::Identity(2, 2)));

  Mat a(2, 2);
  a << 1, 2, 3, 4;
  Mat b(2, 1);
  b << 1, 1;
  auto c = matmul(t.constant(a), t.constant(b));
  EXPECT_EQ(c.value()(0, 0), 3);
  EXPECT_EQ(c.value()(1, 0), 7);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape<double> t;
  auto a = t.constant(Mat::Zero(2, 3));
  auto b = t.constant(Mat::Zero(2, 3));
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  Parameter<double> a("a", random_matrix(rng, 3, 4));
  Parameter<double> b("b", random_matrix(rng, 4, 2));
  auto res = grad_check<double>(
      [&](Tape<double>& t) { return probe(t, matmul(t.param(a), t.param(b)), 11); }, {&a, &b}, 1e-5);
  EXPECT_LT(res.max_rel_error, 1e-4);
  EXPECT_EQ(res.coordinates, 20u);
}

TEST(Softmax, UniformAndStable) {
  Tape<double> t;
  auto y = softmax_rows(t.constant(Mat::Zero(1, 3)));
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(y.value()(0, c), 1.0 / 3.0, 1e-15);

  Mat big(1, 2);
  big << 1000, 0;
  auto z = softmax_rows(t.constant(big));
  EXPECT_NEAR(z.value()(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(z.value()(0, 1), 0.0, 1e-12);
  EXPECT_TRUE(z.value().allFinite());
}

TEST(Softmax, NaNInputIsNumericError) {
  Tape<double> t;
  Mat m(1, 2);
  m << 0, std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(softmax_rows(t.constant(m)), NumericError);
}

TEST(Softmax, RowsSumToOneProperty) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> dim(1, 12);
  for (int trial = 0; trial < 200; ++trial) {
    Tape<double> t(false);
    auto y = softmax_rows(t.constant(random_matrix(rng, dim(rng), dim(rng), 20.0)));
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      EXPECT_NEAR(y.value().row(r).sum(), 1.0, 1e-9);
      EXPECT_GE(y.value().row(r).minCoeff(), 0.0);
    }
  }
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  Parameter<double> a("a", random_matrix(rng, 1, 6));
  auto res = grad_check<double>([&](Tape<double>& t) { return probe(t, softmax_rows(t.param(a)), 2); }, {&a}, 1e-5);
  EXPECT_LT(res.max_rel_error, 1e-4);

  Parameter<double> m("m", random_matrix(rng, 4, 4));
  auto causal = causal_mask(4);
  auto res2 = grad_check<double>(
      [&](Tape<double>& t) { return probe(t, masked_softmax_rows(t.param(m), causal), 3); }, {&m}, 1e-5);
  EXPECT_LT(res2.max_rel_error, 1e-4);
}

TEST(LayerNorm, ZeroVarianceAndHandCase) {
  Tape<double> t;
  auto gain = t.constant(Mat::Ones(1, 3));
  auto bias = t.constant(Mat::Zero(1, 3));
  auto y = layer_norm(t.constant(Mat::Constant(1, 3, 5.0)), gain, bias);
  EXPECT_TRUE(y.value().isZero(0.0));

  Mat x(1, 2);
  x << 1, 3;
  auto y2 = layer_norm(t.constant(x), t.constant(Mat::Ones(1, 2)), t.constant(Mat::Zero(1, 2)));
  // mean 2, variance 1: (x - 2) / sqrt(1 + 1e-5)
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y2.value()(0, 0), -expect, 1e-15);
  EXPECT_NEAR(y2.value()(0, 1), expect, 1e-15);
}

TEST(LayerNorm, MomentsProperty) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    Tape<double> t(false);
    auto x = random_matrix(rng, 3, 8, 3.0);
    auto y = layer_norm(t.constant(x), t.constant(Mat::Ones(1, 8)), t.constant(Mat::Zero(1, 8)));
    for (Eigen::Index r = 0; r < 3; ++r) {
      const double var_in = (x.row(r).array() - x.row(r).mean()).square().mean();
      if (var_in <= 1e-6) continue;
      const auto row = y.value().row(r);
      EXPECT_NEAR(row.mean(), 0.0, 1e-7);
      EXPECT_NEAR((row.array() - row.mean()).square().mean(), var_in / (var_in + kLayerNormEps), 1e-12);
    }
  }
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  Parameter<double> x("x", random_matrix(rng, 3, 5));
  Parameter<double> g("g", random_matrix(rng, 1, 5));
  Parameter<double> b("b", random_matrix(rng, 1, 5));
  auto res = grad_check<double>(
      [&](Tape<double>& t) { return probe(t, layer_norm(t.param(x), t.param(g), t.param(b)), 4); }, {&x, &g, &b}, 1e-5);
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(Pointwise, ForwardValues) {
  Tape<double> t;
  Mat x(1, 2);
  x << -1, 2;
  auto r = relu(t.constant(x));
  EXPECT_EQ(r.value()(0, 0), 0.0);
  EXPECT_EQ(r.value()(0, 1), 2.0);
  EXPECT_EQ(sigmoid(t.constant(Mat::Zero(1, 1))).value()(0, 0), 0.5);
}

TEST(Pointwise, GatherScatterAddsOccurrenceCounts) {
  Parameter<double> table("emb", Mat::Zero(4, 2));
  Tape<double> t;
  std::vector<int> ids{2, 0, 2};
  auto loss = sum(gather_rows(t, table, std::span<const int>(ids)));
  t.backward(loss);
  EXPECT_EQ(table.grad(0, 0), 1.0);
  EXPECT_EQ(table.grad(1, 0), 0.0);
  EXPECT_EQ(table.grad(2, 1), 2.0);
  EXPECT_EQ(table.grad(3, 1), 0.0);
}

TEST(Pointwise, GatherOutOfBoundsNamesId) {
  Parameter<double> table("emb", Mat::Zero(4, 2));
  Tape<double> t;
  std::vector<int> ids{7};
  try {
    gather_rows(t, table, std::span<const int>(ids));
    FAIL();
  } catch (const IndexError& e) {
    EXPECT_NE(std::string(e.what()).find("7"), std::string::npos);
  }
}

// Every differentiable primitive on small random shapes.
TEST(Pointwise, AllPrimitivesGradCheck) {
  std::mt19937_64 rng(21);
  Parameter<double> a("a", random_matrix(rng, 3, 4));
  Parameter<double> b("b", random_matrix(rng, 3, 4));
  Parameter<double> row("row", random_matrix(rng, 1, 4));
  Parameter<double> col("col", random_matrix(rng, 3, 1));
  Parameter<double> table("table", random_matrix(rng, 5, 4));
  Mat keep = Mat::Ones(3, 4);
  keep(1, 2) = 0.0;
  keep(0, 0) = 2.0;
  std::vector<int> ids{4, 1, 4};
  std::vector<int> groups{0, 1, 0, 2};
  std::vector<int> targets{3, 0, 3, 1};

  std::vector<std::pair<const char*, LossFn<double>>> cases = {
      {"add", [&](Tape<double>& t) { return probe(t, t.param(a) + t.param(b), 1); }},
      {"sub", [&](Tape<double>& t) { return probe(t, t.param(a) - t.param(b), 1); }},
      {"mul", [&](Tape<double>& t) { return probe(t, mul(t.param(a), t.param(b)), 1); }},
      {"scale", [&](Tape<double>& t) { return probe(t, scale(t.param(a), 0.3), 1); }},
      {"one_minus", [&](Tape<double>& t) { return probe(t, one_minus(t.param(a)), 1); }},
      {"add_row", [&](Tape<double>& t) { return probe(t, add_row(t.param(a), t.param(row)), 1); }},
      {"scale_rows", [&](Tape<double>& t) { return probe(t, scale_rows(t.param(a), t.param(col)), 1); }},
      {"tanh", [&](Tape<double>& t) { return probe(t, tanh(t.param(a)), 1); }},
      {"sigmoid", [&](Tape<double>& t) { return probe(t, sigmoid(t.param(a)), 1); }},
      {"relu", [&](Tape<double>& t) { return probe(t, relu(t.param(a)), 1); }},
      {"mask_mul", [&](Tape<double>& t) { return probe(t, mask_mul(t.param(a), keep), 1); }},
      {"matmul_nt", [&](Tape<double>& t) { return probe(t, matmul_nt(t.param(a), t.param(b)), 1); }},
      {"concat_cols", [&](Tape<double>& t) { return probe(t, concat_cols({t.param(a), t.param(col)}), 1); }},
      {"concat_rows", [&](Tape<double>& t) { return probe(t, concat_rows({t.param(a), t.param(row)}), 1); }},
      {"slice_cols", [&](Tape<double>& t) { return probe(t, slice_cols(t.param(a), 1, 2), 1); }},
      {"slice_rows", [&](Tape<double>& t) { return probe(t, slice_rows(t.param(a), 1, 2), 1); }},
      {"gather", [&](Tape<double>& t) { return probe(t, gather_rows(t, table, std::span<const int>(ids)), 1); }},
      {"scatter_cols",
       [&](Tape<double>& t) { return probe(t, scatter_cols(t.param(a), std::span<const int>(targets), 5), 1); }},
      {"group_max",
       [&](Tape<double>& t) { return probe(t, group_max_cols(t.param(a), std::span<const int>(groups), 3), 1); }},
      {"normalize_rows",
       [&](Tape<double>& t) { return probe(t, normalize_rows(softmax_rows(t.param(a))), 1); }},
      {"neg_log_prob", [&](Tape<double>& t) { return neg_log_prob(softmax_rows(t.param(a)), 2, 1); }},
  };
  std::vector<Parameter<double>*> all{&a, &b, &row, &col, &table};
  for (auto& [name, f] : cases) {
    auto res = grad_check<double>(f, all, 1e-5);
    EXPECT_LT(res.max_rel_error, 1e-4) << name << " worst at " << res.worst_param;
  }
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape<double> t;
  auto x = t.constant(Mat::Zero(2, 2));
  EXPECT_THROW(t.backward(x), ContractError);
}

TEST(Backward, UnreachableParametersKeepZeroGrad) {
  Parameter<double> used("used", Mat::Ones(1, 2));
  Parameter<double> unused("unused", Mat::Ones(1, 2));
  Tape<double> t;
  auto u = t.param(unused);
  (void)u;
  t.backward(sum(t.param(used)));
  EXPECT_TRUE(unused.grad.isZero(0.0));
  EXPECT_EQ(used.grad(0, 1), 1.0);
}

TEST(Backward, AdditiveOverLosses) {
  std::mt19937_64 rng(17);
  Parameter<double> p("p", random_matrix(rng, 2, 3));
  auto f1 = [&](Tape<double>& t) { return sum(tanh(t.param(p))); };
  auto f2 = [&](Tape<double>& t) { return sum(mul(t.param(p), t.param(p))); };

  Tape<double> t1;
  t1.backward(f1(t1));
  Tape<double> t2;
  t2.backward(f2(t2));
  Mat separate = p.grad;

  p.zero_grad();
  Tape<double> t3;
  std::vector<Var<double>> both{f1(t3), f2(t3)};
  t3.backward(add_scalars(std::span<const Var<double>>(both)));
  EXPECT_TRUE(p.grad.isApprox(separate, 1e-14));
}

TEST(GradCheck, ClosedFormSquare) {
  std::mt19937_64 rng(19);
  Parameter<double> p("theta", random_matrix(rng, 2, 3));
  auto res = grad_check<double>([&](Tape<double>& t) { return sum(mul(t.param(p), t.param(p))); }, {&p}, 1e-5);
  EXPECT_LT(res.max_rel_error, 1e-7);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) EXPECT_DOUBLE_EQ(p.grad.data()[i], 2 * p.value.data()[i]);
}

TEST(GradCheck, ConstantFunctionHasZeroGradients) {
  Parameter<double> p("theta", Mat::Ones(2, 2));
  auto res = grad_check<double>([&](Tape<double>& t) { return t.constant(Mat::Constant(1, 1, 4.0)); }, {&p}, 1e-5);
  EXPECT_EQ(res.max_rel_error, 0.0);
  EXPECT_TRUE(p.grad.isZero(0.0));
}

TEST(Precision, FloatInstantiationComputesSoftmax) {
  Tape<float> t;
  auto y = softmax_rows(t.constant(Matrix<float>::Zero(2, 4)));
  EXPECT_NEAR(y.value().sum(), 2.0f, 1e-6f);
  Parameter<float> p("p", Matrix<float>::Ones(1, 3));
  Tape<float> t2;
  t2.backward(sum(tanh(t2.param(p))));
  EXPECT_NEAR(p.grad(0, 0), 1.0f - std::tanh(1.0f) * std::tanh(1.0f), 1e-6f);
}
