#include "kbqg/trainer.hpp"

#include "kbqg/kbembed.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace kbqg {

void RmsProp::step(ParamStore& params, double lr) {
  params.for_each([&](Param& p) {
    if (p.frozen) {
      p.zero_grad();
      return;
    }
    auto it = v_.find(p.name);
    if (it == v_.end()) it = v_.emplace(p.name, Mat::Zero(p.value.rows(), p.value.cols())).first;
    Mat& v = it->second;
    v = kRho * v + (1.0 - kRho) * p.grad.cwiseAbs2();
    p.value.array() -= lr * p.grad.array() / (v.array().sqrt() + kEps);
    p.zero_grad();
  });
}

double clip_gradients(ParamStore& params, double max_norm) {
  double sq = 0.0;
  params.for_each([&](const Param& p) {
    if (!p.frozen) sq += p.grad.squaredNorm();
  });
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    params.for_each([&](Param& p) { p.grad *= s; });
  }
  return norm;
}

double learning_rate(const TrainConfig& cfg, int epochs_done) {
  double lr = cfg.lr;
  for (int i = 0; i < epochs_done; ++i) lr *= cfg.decay;
  return lr;
}

const PreparedSplit& Prepared::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

namespace {

PreparedSplit prepare_split(const std::vector<RawFact>& raws, const KnowledgeBase& kb, const PrepareOptions& opts) {
  PreparedSplit s;
  s.examples = prepare_all(raws, kb, opts);
  for (const auto& r : raws) s.references.push_back(tokenize(r.question));
  return s;
}

void encode_split(PreparedSplit& s, const Vocab& vocab) {
  s.encoded.clear();
  s.encoded.reserve(s.examples.size());
  for (const auto& ex : s.examples) s.encoded.push_back(encode_example(ex, vocab));
}

// Keeps the training stream independent of the initialization stream.
constexpr std::uint64_t kShuffleStream = 0x5851f42d4c957f2dULL;

}  // namespace

Prepared prepare(const Dataset& data, const TrainConfig& cfg) {
  Prepared p;
  p.kb = &data.kb;
  const auto opts = cfg.prepare();
  p.train = prepare_split(data.train, data.kb, opts);
  p.valid = prepare_split(data.valid, data.kb, opts);
  p.test = prepare_split(data.test, data.kb, opts);
  std::vector<Tokens> questions;
  for (const auto& ex : p.train.examples) questions.push_back(ex.question);
  p.vocab = build_word_vocab(questions, cfg.min_count);
  encode_split(p.train, p.vocab);
  encode_split(p.valid, p.vocab);
  encode_split(p.test, p.vocab);
  return p;
}

std::vector<Fact> all_facts(const Dataset& data) {
  std::vector<Fact> out;
  for (const auto* split : {&data.train, &data.valid, &data.test, &data.background})
    for (const auto& r : *split) out.push_back(resolve_fact(r, data.kb));
  return out;
}

Tokens realize_tokens(const Tokens& tokens, const Tokens& subject_name) {
  Tokens out;
  for (const auto& t : tokens) {
    if (t == kSubjToken)
      out.insert(out.end(), subject_name.begin(), subject_name.end());
    else
      out.push_back(t);
  }
  return out;
}

std::vector<Generation> generate(ModelParams& params, const Prepared& data, const PreparedSplit& split, int max_len,
                                 int beam) {
  std::vector<Generation> out;
  out.reserve(split.encoded.size());
  for (std::size_t i = 0; i < split.encoded.size(); ++i) {
    const auto& ex = split.encoded[i];
    Decoded d = beam <= 1 ? greedy_decode(params, ex, max_len) : beam_decode(params, ex, max_len, beam);
    out.push_back({ex.fact, realize_tokens(decoded_tokens(d, ex, data.vocab), split.examples[i].subject_name),
                   std::move(d.modes)});
  }
  return out;
}

EvalReport evaluate_generations(const std::vector<Generation>& gens, const PreparedSplit& split) {
  if (gens.size() != split.examples.size()) throw std::invalid_argument("evaluate: generation count mismatch");
  std::vector<Tokens> cands, answers;
  for (std::size_t i = 0; i < gens.size(); ++i) {
    cands.push_back(gens[i].tokens);
    answers.push_back(split.examples[i].answer_words);
  }
  return evaluate(cands, split.references, answers);
}

Snapshot snapshot(const ParamStore& params) {
  Snapshot s;
  params.for_each([&](const Param& p) { s.emplace(p.name, p.value); });
  return s;
}

void restore(ParamStore& params, const Snapshot& s) {
  for (const auto& [name, v] : s) params.at(name).value = v;
}

// ---------------------------------------------------------------- trainer

Trainer::Trainer(const TrainConfig& cfg, const Prepared& data, const std::vector<Fact>& kb_facts)
    : cfg_(cfg),
      data_(data),
      params_(cfg.model(), data.vocab.size(), data.kb->kb_vocab.size(), cfg.seed),
      rng_(cfg.seed ^ kShuffleStream) {
  cfg_.validate();
  if (!cfg_.word_vectors.empty()) load_word_vectors(cfg_.word_vectors, data.vocab, params_["word_emb"].value);
  if (cfg_.transe) {
    TransEOptions o;
    o.d = cfg_.d;
    o.margin = cfg_.transe_margin;
    o.lr = cfg_.transe_lr;
    o.epochs = cfg_.transe_epochs;
    o.seed = cfg_.seed;
    const int k = data.kb->kb_vocab.size();
    const int n_entities = static_cast<int>(data.kb->entities.size());
    params_.set_kb_table(pretrain_transe(kb_facts, k, n_entities, o).embedding.table, cfg_.freeze_kb);
  } else {
    params_["kb_emb"].frozen = cfg_.freeze_kb;
  }
}

double Trainer::accumulate_batch(std::span<const std::size_t> examples) {
  if (examples.empty()) return 0.0;
  const double lambda = cfg_.effective_lambda();
  const double inv = 1.0 / static_cast<double>(examples.size());
  const Dropout dropout{cfg_.dropout, &rng_};
  double sum = 0.0;
  for (std::size_t i : examples) {
    const auto& ex = data_.train.encoded[i];
    Tape tape;
    StepOutputs s = teacher_forced(tape, params_, ex, dropout);
    Var total;
    if (cfg_.softmin_tau > 0.0) {
      Var ques = question_loss(s.dist, ex.target);
      total = total_loss(ques, answer_loss_soft(tape, s.dist, ex.answer_ids, cfg_.softmin_tau), lambda);
    } else {
      total = example_loss(tape, s.dist, ex.target, ex.answer_ids, lambda).total;
    }
    sum += total.value()(0, 0);
    tape.backward(nd::scale(total, inv));
  }
  return sum * inv;
}

double Trainer::train_epoch() {
  const auto n = data_.train.encoded.size();
  if (n == 0) throw nd::ContractError("train: empty training split");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[static_cast<std::size_t>(rng_() % (i + 1))]);

  const double lr = learning_rate(cfg_, epoch_);
  const auto b = static_cast<std::size_t>(cfg_.batch);
  double total = 0.0;
  for (std::size_t start = 0; start < n; start += b) {
    const std::size_t len = std::min(b, n - start);
    const double loss = accumulate_batch(std::span<const std::size_t>(order.data() + start, len));
    if (!std::isfinite(loss)) {
      diverged_ = true;
      params_.store().zero_grad();
      return loss;
    }
    total += loss * static_cast<double>(len);
    clip_gradients(params_.store(), cfg_.clip);
    opt_.step(params_.store(), lr);
  }
  ++epoch_;
  return total / static_cast<double>(n);
}

double Trainer::split_bleu4(const PreparedSplit& split) {
  const auto gens = generate(params_, data_, split, cfg_.max_len, cfg_.beam);
  std::vector<Tokens> cands;
  for (const auto& g : gens) cands.push_back(g.tokens);
  return bleu4(cands, split.references);
}

std::vector<EpochLog> Trainer::run(std::ostream* log) {
  std::vector<EpochLog> logs;
  Snapshot best = snapshot(params_.store());
  const bool have_valid = !data_.valid.encoded.empty();
  int since_best = 0;
  while (epoch_ < cfg_.epochs) {
    EpochLog e;
    e.loss = train_epoch();
    if (diverged_) {
      if (log) *log << "diverged\t" << epoch_ + 1 << '\n';
      break;
    }
    e.epoch = epoch_;
    const bool last = epoch_ == cfg_.epochs;
    if (epoch_ % cfg_.eval_every == 0 || last) {
      e.validated = true;
      e.valid_bleu4 = have_valid ? split_bleu4(data_.valid) : 0.0;
      if (e.valid_bleu4 > best_bleu_ || !have_valid) {
        best_bleu_ = e.valid_bleu4;
        best_epoch_ = epoch_;
        best = snapshot(params_.store());
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    if (log) {
      *log << e.epoch << '\t' << std::setprecision(17) << e.loss << '\t';
      if (e.validated)
        *log << e.valid_bleu4;
      else
        *log << "-";
      *log << '\n';
    }
    logs.push_back(e);
    if (cfg_.patience > 0 && since_best >= cfg_.patience) break;
  }
  restore(params_.store(), best);
  return logs;
}

// ---------------------------------------------------------------- grid

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<GridCell> parse_grid(const std::string& spec, const TrainConfig& base) {
  std::vector<double> lambdas{base.lambda};
  std::vector<bool> transe{base.transe};
  std::vector<std::uint64_t> seeds{base.seed};
  std::vector<Ablation> ablations{base.ablation};
  for (const auto& part : split_on(spec, ';')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw ConfigError("grid: expected key=values in '" + part + "'");
    const std::string key = part.substr(0, eq);
    const auto values = split_on(part.substr(eq + 1), ',');
    if (values.empty()) throw ConfigError("grid: no values for " + key);
    TrainConfig scratch = base;
    if (key == "lambda") {
      lambdas.clear();
      for (const auto& v : values) {
        set_config_value(scratch, "lambda", v);
        lambdas.push_back(scratch.lambda);
      }
    } else if (key == "transe") {
      transe.clear();
      for (const auto& v : values) {
        set_config_value(scratch, "transe", v);
        transe.push_back(scratch.transe);
      }
    } else if (key == "seed") {
      seeds.clear();
      for (const auto& v : values) {
        set_config_value(scratch, "seed", v);
        seeds.push_back(scratch.seed);
      }
    } else if (key == "ablation") {
      ablations.clear();
      for (const auto& v : values) ablations.push_back(parse_ablation(v));
    } else {
      throw ConfigError("grid: unknown key '" + key + "'");
    }
  }
  std::vector<GridCell> cells;
  for (auto a : ablations)
    for (double l : lambdas)
      for (bool t : transe)
        for (auto s : seeds) cells.push_back({l, t, s, a});
  return cells;
}

GridResult run_cell(const TrainConfig& base, const GridCell& cell, const Dataset& data) {
  TrainConfig cfg = base;
  cfg.lambda = cell.lambda;
  cfg.transe = cell.transe;
  cfg.seed = cell.seed;
  cfg.ablation = cell.ablation;
  cfg.validate();
  const Prepared p = prepare(data, cfg);
  Trainer t(cfg, p, all_facts(data));
  t.run();
  GridResult r;
  r.cell = cell;
  r.valid_bleu4 = std::max(0.0, t.best_bleu4());
  r.test = evaluate_generations(generate(t.params(), p, p.test, cfg.max_len, cfg.beam), p.test);
  return r;
}

void write_grid_report(const std::vector<GridResult>& results, std::ostream& out) {
  auto row = [&](const std::string& abl, const std::string& lam, const std::string& tr, const std::string& seed,
                 double vb, double tb, double rl, double me, double cov) {
    out << std::left << std::setw(16) << abl << std::setw(8) << lam << std::setw(7) << tr << std::setw(7) << seed
        << std::right << std::fixed << std::setprecision(2) << std::setw(9) << vb << std::setw(9) << tb
        << std::setw(9) << rl << std::setw(9) << me << std::setw(9) << cov << '\n';
    out.unsetf(std::ios::fixed);
  };
  out << std::left << std::setw(16) << "ablation" << std::setw(8) << "lambda" << std::setw(7) << "transe"
      << std::setw(7) << "seed" << std::right << std::setw(9) << "v.bleu4" << std::setw(9) << "bleu4" << std::setw(9)
      << "rouge_l" << std::setw(9) << "meteor" << std::setw(9) << "ans.cov" << '\n';
  out << std::string(83, '-') << '\n';
  auto lam_str = [](double l) {
    std::ostringstream s;
    s << l;
    return s.str();
  };
  for (const auto& r : results)
    row(to_string(r.cell.ablation), lam_str(r.cell.lambda), r.cell.transe ? "on" : "off",
        std::to_string(r.cell.seed), r.valid_bleu4, r.test.bleu4, r.test.rouge_l, r.test.meteor,
        r.test.answer_coverage);

  // Medians over seeds for every (ablation, lambda, transe) group.
  std::vector<std::pair<std::tuple<int, double, bool>, std::vector<const GridResult*>>> groups;
  for (const auto& r : results) {
    auto key = std::make_tuple(static_cast<int>(r.cell.ablation), r.cell.lambda, r.cell.transe);
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == key; });
    if (it == groups.end()) {
      groups.push_back({key, {}});
      it = groups.end() - 1;
    }
    it->second.push_back(&r);
  }
  bool any_multi = std::any_of(groups.begin(), groups.end(), [](const auto& g) { return g.second.size() > 1; });
  if (any_multi) {
    out << std::string(83, '-') << '\n';
    for (const auto& [key, rs] : groups) {
      auto med = [&](auto f) {
        std::vector<double> v;
        for (const auto* r : rs) v.push_back(f(*r));
        return median(v);
      };
      row(to_string(rs.front()->cell.ablation), lam_str(rs.front()->cell.lambda),
          rs.front()->cell.transe ? "on" : "off", "median", med([](const GridResult& r) { return r.valid_bleu4; }),
          med([](const GridResult& r) { return r.test.bleu4; }), med([](const GridResult& r) { return r.test.rouge_l; }),
          med([](const GridResult& r) { return r.test.meteor; }),
          med([](const GridResult& r) { return r.test.answer_coverage; }));
    }
  }
  out << '\n' << std::setprecision(17);
  for (const auto& r : results) {
    std::ostringstream cell;
    cell << "ablation=" << to_string(r.cell.ablation) << ",lambda=" << r.cell.lambda
         << ",transe=" << (r.cell.transe ? "on" : "off") << ",seed=" << r.cell.seed;
    out << cell.str() << "\tvalid_bleu4\t" << r.valid_bleu4 << '\n';
    out << cell.str() << "\tbleu4\t" << r.test.bleu4 << '\n';
    out << cell.str() << "\trouge_l\t" << r.test.rouge_l << '\n';
    out << cell.str() << "\tmeteor\t" << r.test.meteor << '\n';
    out << cell.str() << "\tanswer_coverage\t" << r.test.answer_coverage << '\n';
  }
}

}  // namespace kbqg

namespace kbqg {

EncodedExample probe_example(int vocab_size, int context_len, std::uint64_t seed) {
  if (vocab_size < kNumSpecial + 4 || context_len < 2)
    throw nd::ContractError("probe_example: need at least 4 ordinary words and 2 context tokens");
  std::mt19937_64 rng(seed);
  auto word = [&] { return kNumSpecial + static_cast<int>(rng() % static_cast<std::uint64_t>(vocab_size - kNumSpecial)); };

  EncodedExample ex;
  ex.vocab_size = vocab_size;
  ex.fact = {0, kProbeKbSize - 2, 3};
  ex.oov = {"<probe-oov>"};
  const int oov_ext = vocab_size;
  std::map<int, int> group_of;
  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < context_len; ++i) {
      int ext = word();
      if (s == 1 && i == 1) ext = ex.copy.group_ext.front();  // repeated token
      if (s == 2 && i == context_len - 1) ext = oov_ext;
      ex.context_ids[static_cast<std::size_t>(s)].push_back(ex.input_id(ext));
      ex.copy.input_ids.push_back(ex.input_id(ext));
      ex.copy.segments.push_back(static_cast<Segment>(s));
      auto [it, fresh] = group_of.emplace(ext, ex.copy.n_groups());
      if (fresh) ex.copy.group_ext.push_back(ext);
      ex.copy.group.push_back(it->second);
    }
  }
  ex.target = {word(), kSubj, oov_ext, word(), kEos};
  ex.decoder_input = {kBos};
  for (std::size_t i = 0; i + 1 < ex.target.size(); ++i) ex.decoder_input.push_back(ex.input_id(ex.target[i]));
  ex.answer_ids = {word(), word()};
  return ex;
}

nd::GradCheckResult model_gradcheck(const TrainConfig& cfg, int vocab_size, int context_len,
                                    std::size_t max_coords_per_param, double eps) {
  const EncodedExample ex = probe_example(vocab_size, context_len, cfg.seed);
  TrainConfig c = cfg;
  c.dropout = 0.0;
  BasicModelParams<CheckScalar> params(c.model(), vocab_size, kProbeKbSize, cfg.seed);
  const double lambda = c.effective_lambda();
  nd::LossFn<CheckScalar> f = [&](nd::Tape<CheckScalar>& tape) {
    auto s = teacher_forced(tape, params, ex);
    return example_loss(tape, s.dist, ex.target, ex.answer_ids, lambda).total;
  };
  std::vector<nd::Parameter<CheckScalar>*> ps;
  params.store().for_each([&](nd::Parameter<CheckScalar>& p) { ps.push_back(&p); });
  return nd::grad_check<CheckScalar>(f, ps, eps, max_coords_per_param);
}

}  // namespace kbqg
