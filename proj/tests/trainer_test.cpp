#include "kbqg/checkpoint.hpp"
#include "kbqg/synth.hpp"
#include "kbqg/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace kbqg;

namespace {

Dataset small_dataset(std::size_t n_train) {
  SynthOptions o;
  o.seed = 7;
  o.n_entities = 80;
  o.n_predicates = 10;
  o.n_facts = 200;
  Dataset d = to_dataset(synth_corpus(o));
  d.train.resize(std::min(n_train, d.train.size()));
  d.valid.resize(std::min<std::size_t>(5, d.valid.size()));
  return d;
}

TrainConfig small_config() {
  TrainConfig c;
  c.d = 16;
  c.layers = 1;
  c.batch = 4;
  c.min_count = 1;
  c.max_len = 12;
  return c;
}

}  // namespace

TEST(RmsProp, ZeroGradientLeavesParameters) {
  ParamStore s;
  auto& p = s.add("w", Mat::Constant(2, 3, 0.7));
  RmsProp opt;
  opt.step(s, 0.1);
  EXPECT_EQ(p.value, Mat::Constant(2, 3, 0.7));
}

TEST(RmsProp, FirstStepClosedForm) {
  ParamStore s;
  auto& p = s.add("w", Mat::Constant(1, 2, 1.0));
  p.grad << 1.0, -4.0;
  RmsProp opt;
  opt.step(s, 0.01);
  // v = 0.1 g^2, so the step is lr g / (sqrt(0.1) |g| + eps).
  EXPECT_NEAR(p.value(0, 0), 1.0 - 0.01 / (std::sqrt(0.1) + RmsProp::kEps), 1e-15);
  EXPECT_NEAR(p.value(0, 1), 1.0 + 0.01 * 4.0 / (std::sqrt(0.1) * 4.0 + RmsProp::kEps), 1e-15);
  EXPECT_EQ(p.grad, Mat::Zero(1, 2));
  EXPECT_NEAR(opt.accumulators().at("w")(0, 1), 1.6, 1e-15);
}

TEST(RmsProp, FrozenParameterSkipped) {
  ParamStore s;
  auto& p = s.add("w", Mat::Constant(1, 1, 2.0));
  p.frozen = true;
  p.grad(0, 0) = 3.0;
  RmsProp opt;
  opt.step(s, 0.5);
  EXPECT_EQ(p.value(0, 0), 2.0);
  EXPECT_EQ(p.grad(0, 0), 0.0);
}

TEST(RmsProp, QuadraticBowlConverges) {
  ParamStore s;
  auto& p = s.add("w", (Mat(1, 3) << 1.0, -0.5, 0.8).finished());
  const Mat a = (Mat(1, 3) << 1.0, 10.0, 0.1).finished();
  RmsProp opt;
  TrainConfig c;
  c.lr = 0.1;
  c.decay = 0.97;
  int steps = 0;
  while (steps < 500 && p.value.cwiseAbs().maxCoeff() >= 1e-6) {
    p.grad = a.cwiseProduct(p.value);
    opt.step(s, learning_rate(c, steps));
    ++steps;
  }
  EXPECT_LT(p.value.cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE(steps, 500);
}

TEST(ClipGradients, RescalesToMaxNorm) {
  ParamStore s;
  auto& a = s.add("a", Mat::Zero(1, 1));
  auto& b = s.add("b", Mat::Zero(1, 1));
  a.grad(0, 0) = 3.0;
  b.grad(0, 0) = 4.0;
  EXPECT_EQ(clip_gradients(s, 10.0), 5.0);
  EXPECT_EQ(a.grad(0, 0), 3.0);
  EXPECT_EQ(clip_gradients(s, 1.0), 5.0);
  EXPECT_NEAR(a.grad(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(b.grad(0, 0), 0.8, 1e-15);
}

TEST(LearningRate, ExponentialDecay) {
  TrainConfig c;
  c.lr = 0.002;
  c.decay = 0.9;
  EXPECT_EQ(learning_rate(c, 0), 0.002);
  for (int n : {1, 5, 30}) EXPECT_NEAR(learning_rate(c, n), 0.002 * std::pow(0.9, n), 1e-18) << n;
}

TEST(Config, ParseAndCanonicalText) {
  std::istringstream in("# tiny run\nlr = 0.01\nepochs=3  # short\ntranse=on\nablation=no_ctx_copy\n");
  const auto c = parse_config(in);
  EXPECT_EQ(c.lr, 0.01);
  EXPECT_EQ(c.epochs, 3);
  EXPECT_TRUE(c.transe);
  EXPECT_EQ(c.ablation, Ablation::NoCtxCopy);
  EXPECT_FALSE(c.model().ctx_copy);
  std::istringstream again(config_text(c));
  const auto r = parse_config(again);
  EXPECT_EQ(config_text(r), config_text(c));
  EXPECT_EQ(config_hash(r), config_hash(c));
  EXPECT_NE(config_hash(c), config_hash(TrainConfig{}));
}

TEST(Config, Errors) {
  TrainConfig c;
  EXPECT_THROW(set_config_value(c, "learning_rate", "0.1"), ConfigError);
  EXPECT_THROW(set_config_value(c, "epochs", "3.5"), ConfigError);
  EXPECT_THROW(set_config_value(c, "transe", "maybe"), ConfigError);
  EXPECT_THROW(parse_ablation("no_everything"), ConfigError);
  std::istringstream missing_eq("lr 0.1\n");
  EXPECT_THROW(parse_config(missing_eq), ConfigError);
  std::istringstream bad_heads("d=10\nheads=4\n");
  EXPECT_THROW(parse_config(bad_heads), ConfigError);
  EXPECT_THROW(set_config_value(c, "profile", "huge"), ConfigError);
  set_config_value(c, "profile", "large");
  EXPECT_EQ(c.d, 200);
  c.ablation = Ablation::NoAnswerLoss;
  EXPECT_EQ(c.effective_lambda(), 0.0);
}

TEST(Trainer, DeterministicLosses) {
  const auto data = small_dataset(12);
  auto cfg = small_config();
  const auto prep = prepare(data, cfg);
  const auto facts = all_facts(data);
  Trainer a(cfg, prep, facts), b(cfg, prep, facts);
  for (int e = 0; e < 3; ++e) EXPECT_EQ(a.train_epoch(), b.train_epoch()) << e;
  EXPECT_EQ(snapshot(a.params().store()), snapshot(b.params().store()));
  cfg.seed = 2;
  Trainer c(cfg, prep, facts);
  Trainer d(small_config(), prep, facts);
  EXPECT_NE(c.train_epoch(), d.train_epoch());
}

TEST(Trainer, CheckpointResumesTrajectory) {
  const auto data = small_dataset(12);
  const auto cfg = small_config();
  const auto prep = prepare(data, cfg);
  const auto facts = all_facts(data);
  Trainer a(cfg, prep, facts);
  a.train_epoch();
  a.train_epoch();
  std::stringstream buf;
  write_checkpoint(make_checkpoint(a, prep.vocab, a.optimizer(), a.rng()), buf);
  const auto ck = read_checkpoint(buf);
  EXPECT_EQ(ck.epoch, 2);
  EXPECT_EQ(ck.config_hash, config_hash(cfg));
  EXPECT_EQ(ck.vocab.size(), prep.vocab.size());

  Trainer b(cfg, prep, facts);
  resume(b, ck);
  EXPECT_EQ(b.epochs_done(), 2);
  for (int e = 0; e < 2; ++e) EXPECT_EQ(a.train_epoch(), b.train_epoch()) << e;
  EXPECT_EQ(snapshot(a.params().store()), snapshot(b.params().store()));
}

TEST(Trainer, RunRestoresBestValidationSnapshot) {
  const auto data = small_dataset(12);
  auto cfg = small_config();
  cfg.epochs = 4;
  const auto prep = prepare(data, cfg);
  Trainer t(cfg, prep, all_facts(data));
  std::ostringstream log;
  const auto logs = t.run(&log);
  ASSERT_EQ(logs.size(), 4u);
  EXPECT_GE(t.best_epoch(), 1);
  EXPECT_EQ(t.best_bleu4(), logs[static_cast<std::size_t>(t.best_epoch() - 1)].valid_bleu4);
  for (const auto& l : logs) EXPECT_LE(l.valid_bleu4, t.best_bleu4());
  EXPECT_EQ(t.split_bleu4(prep.valid), t.best_bleu4());
  EXPECT_NE(log.str().find("\t"), std::string::npos);
}

TEST(Trainer, TenExamplesOverfit) {
  const auto data = small_dataset(10);
  auto cfg = small_config();
  cfg.d = 32;
  cfg.dropout = 0.0;
  cfg.batch = 10;
  cfg.lr = 0.005;
  cfg.decay = 1.0;
  const auto prep = prepare(data, cfg);
  ASSERT_EQ(prep.train.encoded.size(), 10u);
  Trainer t(cfg, prep, all_facts(data));
  const double first = t.train_epoch();
  double last = first;
  for (int e = 1; e < 300 && last > 0.1 * first; ++e) last = t.train_epoch();
  EXPECT_LE(last, 0.1 * first) << "first " << first;
}

TEST(ModelGradcheck, ProbeExample) {
  TrainConfig c;
  c.d = 8;
  c.layers = 1;
  const auto r = model_gradcheck(c, 30, 3, 16);
  EXPECT_GT(r.coordinates, 200u);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param;
}
