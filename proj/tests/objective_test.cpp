#include "kbqg/decoder.hpp"
#include "kbqg/objective.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace kbqg;
using namespace kbqg::testing;

namespace {

Mat random_dist(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  for (Eigen::Index r = 0; r < rows; ++r) m.row(r) /= m.row(r).sum();
  return m;
}

std::vector<Mat> param_grads(ModelParams& p) {
  std::vector<Mat> g;
  p.store().for_each([&](const Param& x) { g.push_back(x.grad); });
  return g;
}

// Gradients of one loss (selected by `which`) on the tiny case.
std::vector<Mat> grads_of(ModelParams& p, const EncodedExample& ex, double lambda, int which) {
  p.store().zero_grad();
  Tape t;
  auto out = teacher_forced(t, p, ex);
  auto n = example_loss(t, out.dist, ex.target, ex.answer_ids, lambda);
  t.backward(which == 0 ? n.ques : which == 1 ? n.ans.value : n.total);
  return param_grads(p);
}

}  // namespace

TEST(QuestionLoss, CertainGoldIsZero) {
  Tape t;
  Mat d = Mat::Zero(3, 4);
  d(0, 1) = d(1, 3) = d(2, 0) = 1.0;
  const std::vector<int> gold{1, 3, 0};
  EXPECT_EQ(question_loss(t.constant(d), std::span<const int>(gold)).value()(0, 0), 0.0);
}

TEST(QuestionLoss, UniformIsLogN) {
  Tape t;
  const std::vector<int> gold{2, 0, 6, 6};
  auto v = question_loss(t.constant(Mat::Constant(4, 7, 1.0 / 7.0)), std::span<const int>(gold)).value()(0, 0);
  EXPECT_NEAR(v, std::log(7.0), 1e-15);
}

TEST(QuestionLoss, HandCaseAndFloor) {
  Tape t;
  Mat d(3, 3);
  d << 0.5, 0.25, 0.25,  //
      0.1, 0.8, 0.1,     //
      0.0, 0.3, 0.7;
  const std::vector<int> gold{0, 1, 2};
  const double hand = -(std::log(0.5) + std::log(0.8) + std::log(0.7)) / 3.0;
  EXPECT_NEAR(question_loss(t.constant(d), std::span<const int>(gold)).value()(0, 0), hand, 1e-15);
  // A zero-probability gold token is floored, not infinite.
  const std::vector<int> zero{0, 0, 0};
  const double v = question_loss(t.constant(d), std::span<const int>(zero)).value()(0, 0);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, -(std::log(0.5) + std::log(0.1) + std::log(1e-12)) / 3.0, 1e-12);
  const std::vector<int> short_gold{0, 1};
  EXPECT_THROW(question_loss(t.constant(d), std::span<const int>(short_gold)), nd::DimensionError);
}

TEST(QuestionLoss, NonNegativeOnRandomDistributions) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    Tape t;
    const std::vector<int> gold{0, 3, 5, 1};
    EXPECT_GT(question_loss(t.constant(random_dist(rng, 4, 6)), std::span<const int>(gold)).value()(0, 0), 0.0);
  }
}

TEST(AnswerLoss, FourPairEnumeration) {
  // Columns 0 and 1 are a_1 and a_2; column 2 absorbs the rest.
  Mat d(2, 3);
  d << 0.1, 0.25, 0.65,  //
      0.5, 0.2, 0.3;
  const std::vector<int> answers{0, 1};
  Tape t;
  auto a = answer_loss(t, t.constant(d), answers);
  EXPECT_NEAR(a.value.value()(0, 0), -std::log(0.5), 1e-15);
  ASSERT_TRUE(a.argmin.has_value());
  EXPECT_EQ(*a.argmin, (AnswerPair{0, 1}));
}

TEST(AnswerLoss, EmptySetAndCertainWord) {
  Tape t;
  Mat d = Mat::Constant(2, 3, 1.0 / 3.0);
  auto e = answer_loss(t, t.constant(d), std::span<const int>{});
  EXPECT_EQ(e.value.value()(0, 0), 0.0);
  EXPECT_FALSE(e.argmin.has_value());
  d.row(1) << 0, 1, 0;
  const std::vector<int> answers{2, 1};
  auto c = answer_loss(t, t.constant(d), answers);
  EXPECT_EQ(c.value.value()(0, 0), 0.0);
  EXPECT_EQ(*c.argmin, (AnswerPair{1, 1}));
}

TEST(AnswerLoss, MinOrderCommutesAndMatchesBruteForce) {
  std::mt19937_64 rng(2);
  const std::vector<int> answers{1, 4, 2};
  for (int trial = 0; trial < 200; ++trial) {
    const Mat d = random_dist(rng, 5, 6);
    double by_word = std::numeric_limits<double>::infinity(), by_step = by_word;
    for (int a : answers) {
      double inner = std::numeric_limits<double>::infinity();
      for (Eigen::Index s = 0; s < 5; ++s) inner = std::min(inner, -std::log(d(s, a)));
      by_word = std::min(by_word, inner);
    }
    for (Eigen::Index s = 0; s < 5; ++s) {
      double inner = std::numeric_limits<double>::infinity();
      for (int a : answers) inner = std::min(inner, -std::log(d(s, a)));
      by_step = std::min(by_step, inner);
    }
    Tape t;
    auto got = answer_loss(t, t.constant(d), answers);
    EXPECT_EQ(by_word, by_step);
    EXPECT_NEAR(got.value.value()(0, 0), by_word, 1e-15);
    EXPECT_NEAR(-std::log(d(got.argmin->step, got.argmin->word)), by_word, 1e-15);
  }
}

TEST(AnswerLoss, MonotoneInSelectedProbability) {
  Mat d(2, 3);
  d << 0.2, 0.3, 0.5,  //
      0.6, 0.1, 0.3;
  const std::vector<int> answers{0, 1};
  double prev = std::numeric_limits<double>::infinity();
  for (double p : {0.6, 0.65, 0.7, 0.8, 0.95}) {
    d.row(1) << p, 0.1, 0.9 - p;
    Tape t;
    auto a = answer_loss(t, t.constant(d), answers);
    EXPECT_EQ(*a.argmin, (AnswerPair{0, 1}));
    EXPECT_LE(a.value.value()(0, 0), prev);
    prev = a.value.value()(0, 0);
  }
}

TEST(AnswerLoss, GradientOnlyThroughSelectedTerm) {
  Mat d(2, 3);
  d << 0.1, 0.25, 0.65,  //
      0.5, 0.2, 0.3;
  Tape t;
  auto dv = t.constant(d);
  const std::vector<int> answers{0, 1};
  auto a = answer_loss(t, dv, answers);
  t.backward(a.value);
  Mat expect = Mat::Zero(2, 3);
  expect(1, 0) = -1.0 / 0.5;
  EXPECT_TRUE(dv.grad().isApprox(expect, 1e-15));
}

TEST(AnswerLossSoft, ApproachesHardMin) {
  Mat d(2, 3);
  d << 0.1, 0.25, 0.65,  //
      0.5, 0.2, 0.3;
  const std::vector<int> answers{0, 1};
  Tape t;
  EXPECT_NEAR(answer_loss_soft(t, t.constant(d), answers, 1e-3).value()(0, 0), -std::log(0.5), 1e-6);
  EXPECT_LT(answer_loss_soft(t, t.constant(d), answers, 1.0).value()(0, 0), -std::log(0.5));
  EXPECT_THROW(answer_loss_soft(t, t.constant(d), answers, 0.0), nd::ContractError);
}

TEST(TotalLoss, Arithmetic) {
  Tape t;
  auto q = t.constant(Mat::Constant(1, 1, 2.0));
  auto a = t.constant(Mat::Constant(1, 1, 1.0));
  EXPECT_EQ(total_loss(q, a, 0.5).value()(0, 0), 2.5);
  EXPECT_EQ(total_loss(q, a, 0.0).value()(0, 0), 2.0);
}

TEST(TotalLoss, BreakdownInvariant) {
  auto tc = tiny_case();
  ModelParams p(tiny_config(), tc.vocab.size(), tc.kb.kb_vocab.size(), 3);
  Tape t;
  auto out = teacher_forced(t, p, tc.encoded);
  auto b = example_loss(t, out.dist, tc.encoded.target, tc.encoded.answer_ids, 0.2).breakdown();
  EXPECT_NEAR(b.total_loss, b.ques_loss + 0.2 * b.ans_loss, 1e-12);
  EXPECT_GE(b.ans_loss, 0.0);
  ASSERT_TRUE(b.argmin_pair.has_value());
}

TEST(TotalLoss, GradientIsLinearInLambda) {
  auto tc = tiny_case();
  ASSERT_FALSE(tc.encoded.answer_ids.empty());
  ModelParams p(tiny_config(), tc.vocab.size(), tc.kb.kb_vocab.size(), 4);
  const double lambda = 0.5;
  auto gq = grads_of(p, tc.encoded, lambda, 0);
  auto ga = grads_of(p, tc.encoded, lambda, 1);
  auto gt = grads_of(p, tc.encoded, lambda, 2);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const Mat expect = gq[i] + lambda * ga[i];
    EXPECT_LE((gt[i] - expect).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, expect.cwiseAbs().maxCoeff())) << i;
  }
}

TEST(TotalLoss, LambdaZeroGradientBitIdentical) {
  auto tc = tiny_case();
  ModelParams p(tiny_config(), tc.vocab.size(), tc.kb.kb_vocab.size(), 5);
  auto gq = grads_of(p, tc.encoded, 0.0, 0);
  auto gt = grads_of(p, tc.encoded, 0.0, 2);
  ASSERT_EQ(gq.size(), gt.size());
  for (std::size_t i = 0; i < gq.size(); ++i) EXPECT_EQ(gq[i], gt[i]) << i;
}
