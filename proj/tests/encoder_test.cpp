#include "kbqg/encoder.hpp"
#include "kbqg/gradcheck.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace kbqg;
using namespace kbqg::testing;

namespace {

constexpr double kGradTol = 1e-4;

ModelParams tiny_params(std::uint64_t seed = 3) { return ModelParams(tiny_config(), 12, 5, seed); }

}  // namespace

TEST(Attention, SingleTokenWeightIsOne) {
  auto params = tiny_params();
  Tape t;
  std::vector<Mat> w;
  std::mt19937_64 rng(1);
  auto x = t.constant(random_matrix<double>(rng, 1, 8));
  multi_head_attention(t, params, "enc.0.self_", x, x, 2, nullptr, &w);
  ASSERT_EQ(w.size(), 2u);
  for (const auto& a : w) EXPECT_EQ(a(0, 0), 1.0);
}

TEST(EncodeContext, ShapeAndEmptyInput) {
  auto params = tiny_params();
  Tape t;
  const std::vector<int> ids{5, 6, 7};
  auto c = encode_context(t, params, ids, Segment::Subject);
  EXPECT_EQ(c.rows(), 3);
  EXPECT_EQ(c.cols(), 8);
  EXPECT_THROW(encode_context(t, params, std::span<const int>{}, Segment::Subject), nd::ContractError);
}

TEST(EncodeContext, PermutationEquivariant) {
  auto params = tiny_params();
  Tape t;
  const std::vector<int> a{5, 6, 7, 8}, b{8, 5, 7, 6};
  const Mat ca = encode_context(t, params, a, Segment::Predicate).value();
  const Mat cb = encode_context(t, params, b, Segment::Predicate).value();
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto j = std::find(a.begin(), a.end(), b[i]) - a.begin();
    EXPECT_LT((cb.row(static_cast<Eigen::Index>(i)) - ca.row(j)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(EncodeContext, OrderOfContextsIrrelevant) {
  auto params = tiny_params();
  const std::vector<int> s{5, 6}, o{7, 8, 9};
  Tape t1, t2;
  const Mat s1 = encode_context(t1, params, s, Segment::Subject).value();
  const Mat o1 = encode_context(t1, params, o, Segment::Object).value();
  const Mat o2 = encode_context(t2, params, o, Segment::Object).value();
  const Mat s2 = encode_context(t2, params, s, Segment::Subject).value();
  EXPECT_EQ(s1, s2);
  EXPECT_EQ(o1, o2);
}

TEST(EncodeContext, SegmentWiring) {
  auto params = tiny_params();
  const std::vector<int> ids{5, 6, 7};
  auto encode = [&](Segment s) {
    Tape t;
    return Mat(encode_context(t, params, ids, s).value());
  };
  EXPECT_FALSE(encode(Segment::Subject).isApprox(encode(Segment::Predicate)));
  params["segment_emb"].value.setZero();
  EXPECT_EQ(encode(Segment::Subject), encode(Segment::Predicate));
}

TEST(AttentiveVector, TrivialCases) {
  Tape t;
  Mat c1(1, 2);
  c1 << 0.3, -0.7;
  Mat e(1, 2);
  e << 2.0, 1.0;
  EXPECT_EQ(attentive_vector(t.constant(e), t.constant(c1)).value(), c1);

  Mat same(3, 2);
  same << 0.3, -0.7, 0.3, -0.7, 0.3, -0.7;
  EXPECT_TRUE(attentive_vector(t.constant(e), t.constant(same)).value().isApprox(c1, 1e-15));
}

TEST(AttentiveVector, TwoRowHandCase) {
  Tape t;
  Mat c(2, 2);
  c << 1, 0, 0, 1;
  Mat e(1, 2);
  e << 1, 0;
  // logits [1/sqrt 2, 0]
  const double w0 = 1.0 / (1.0 + std::exp(-1.0 / std::sqrt(2.0)));
  auto v = attentive_vector(t.constant(e), t.constant(c)).value();
  EXPECT_NEAR(v(0, 0), w0, 1e-15);
  EXPECT_NEAR(v(0, 1), 1.0 - w0, 1e-15);
}

TEST(GatedFuse, ZeroGateWeightsGiveHalfMix) {
  std::mt19937_64 rng(4);
  nd::Parameter<double> wf("wf", random_matrix<double>(rng, 4, 8)), wg("wg", Mat::Zero(4, 8));
  Tape t;
  auto c = t.constant(random_matrix<double>(rng, 1, 4));
  auto e = t.constant(random_matrix<double>(rng, 1, 4, 0.5));
  auto h = gated_fuse(t, c, e, wf, wg).value();
  Mat ce(1, 8);
  ce << c.value(), e.value();
  const Mat f = (ce * wf.value.transpose()).array().tanh().matrix();
  EXPECT_TRUE(h.isApprox(0.5 * f + 0.5 * e.value(), 1e-14));
}

TEST(GatedFuse, ConvexCombinationBounds) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.999, 0.999);
  for (int trial = 0; trial < 200; ++trial) {
    // Moderate scales keep tanh away from rounding to exactly +-1.
    nd::Parameter<double> wf("wf", random_matrix<double>(rng, 6, 12, 0.5)), wg("wg", random_matrix<double>(rng, 6, 12, 2.0));
    Tape t;
    Mat ev(1, 6);
    for (Eigen::Index i = 0; i < 6; ++i) ev(0, i) = u(rng);
    auto c = t.constant(random_matrix<double>(rng, 1, 6, 1.0));
    auto e = t.constant(ev);
    auto h = gated_fuse(t, c, e, wf, wg).value();
    Mat ce(1, 12);
    ce << c.value(), ev;
    const Mat f = (ce * wf.value.transpose()).array().tanh().matrix();
    for (Eigen::Index i = 0; i < 6; ++i) {
      EXPECT_GT(h(0, i), -1.0);
      EXPECT_LT(h(0, i), 1.0);
      EXPECT_GE(h(0, i), std::min(f(0, i), ev(0, i)) - 1e-15);
      EXPECT_LE(h(0, i), std::max(f(0, i), ev(0, i)) + 1e-15);
    }
  }
}

TEST(GatedFuse, GradientCheck) {
  std::mt19937_64 rng(6);
  nd::Parameter<double> wf("wf", random_matrix<double>(rng, 4, 8)), wg("wg", random_matrix<double>(rng, 4, 8));
  nd::Parameter<double> c("c", random_matrix<double>(rng, 1, 4)), e("e", random_matrix<double>(rng, 1, 4));
  auto r = nd::grad_check<double>(
      [&](Tape& t) { return probe(t, gated_fuse(t, t.param(c), t.param(e), wf, wg), 9); }, {&wf, &wg, &c, &e}, 1e-5);
  EXPECT_LT(r.max_rel_error, kGradTol) << r.worst_param;
}

TEST(AugmentFact, RowsAndFusionSwitch) {
  auto tc = tiny_case();
  ModelParams params(tiny_config(), tc.vocab.size(), tc.kb.kb_vocab.size(), 7);
  Tape t;
  auto out = augment_fact(t, params, tc.encoded);
  EXPECT_EQ(out.fact.rows(), 3);
  EXPECT_EQ(out.fact.cols(), 8);
  for (int s = 0; s < 3; ++s)
    EXPECT_EQ(out.contexts[static_cast<std::size_t>(s)].rows(),
              static_cast<Eigen::Index>(tc.encoded.context_ids[static_cast<std::size_t>(s)].size()));
  EXPECT_EQ(out.kb_rows.value().row(0), params["kb_emb"].value.row(tc.encoded.fact.subject));
  EXPECT_NE(out.fact.value(), out.kb_rows.value());

  auto cfg = tiny_config();
  cfg.fusion = false;
  ModelParams off(cfg, tc.vocab.size(), tc.kb.kb_vocab.size(), 7);
  Tape t2;
  auto raw = augment_fact(t2, off, tc.encoded);
  EXPECT_EQ(raw.fact.value(), raw.kb_rows.value());
}

TEST(AugmentFact, FullPathGradientCheck) {
  auto tc = tiny_case();
  BasicModelParams<CheckScalar> params(tiny_config(), tc.vocab.size(), tc.kb.kb_vocab.size(), 8);
  std::vector<nd::Parameter<CheckScalar>*> used;
  for (auto* p : all_params(params))
    if (p->name.rfind("dec.", 0) != 0 && p->name.rfind("out.", 0) != 0) used.push_back(p);
  auto r = nd::grad_check<CheckScalar>(
      [&](nd::Tape<CheckScalar>& t) { return probe(t, augment_fact(t, params, tc.encoded).fact, 10); }, used, 1e-5);
  EXPECT_GT(r.coordinates, 500u);
  EXPECT_LT(r.max_rel_error, kGradTol) << r.worst_param << "[" << r.worst_index << "]";
}
