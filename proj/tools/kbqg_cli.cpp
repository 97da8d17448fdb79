// kbqg: synthetic corpus, KB pretraining, training, generation, evaluation,
// gradient checking and ablation sweeps.
//
// Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.

#include "kbqg/checkpoint.hpp"
#include "kbqg/kbembed.hpp"
#include "kbqg/synth.hpp"
#include "kbqg/trainer.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace fs = std::filesystem;
using namespace kbqg;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key=value configuration file");
  cmd->add_option("--set", c.sets, "configuration override key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "random seed");
}

TrainConfig resolve_config(const Common& c) {
  TrainConfig cfg = c.config.empty() ? TrainConfig{} : load_config(c.config);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

std::ofstream open_out(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw IngestError("cannot write " + file.string());
  return out;
}

std::string fact_ids(const Fact& f, const KnowledgeBase& kb) {
  return kb.kb_vocab.token(f.subject) + " " + kb.kb_vocab.token(f.predicate) + " " + kb.kb_vocab.token(f.object);
}

// ---------------------------------------------------------------- commands

struct SynthArgs {
  SynthOptions opts;
  std::string out_dir;
};

int cmd_synth(const SynthArgs& a) {
  const auto corpus = synth_corpus(a.opts);
  write_corpus(corpus, a.out_dir);
  std::cout << "entities\t" << corpus.entities.size() << "\npredicates\t" << corpus.predicates.size() << "\ntrain\t"
            << corpus.train.size() << "\nvalid\t" << corpus.valid.size() << "\ntest\t" << corpus.test.size() << '\n';
  return 0;
}

struct PretrainArgs {
  Common common;
  std::string facts;
  std::string out;
};

int cmd_pretrain(const PretrainArgs& a) {
  const TrainConfig cfg = resolve_config(a.common);
  const Dataset data = load_dataset(a.facts);
  TransEOptions o;
  o.d = cfg.d;
  o.margin = cfg.transe_margin;
  o.lr = cfg.transe_lr;
  o.epochs = cfg.transe_epochs;
  o.seed = cfg.seed;
  const auto res = pretrain_transe(all_facts(data), data.kb.kb_vocab.size(),
                                   static_cast<int>(data.kb.entities.size()), o);
  auto out = open_out(a.out);
  save_kb(res.embedding, out);
  std::cout << std::setprecision(17);
  for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) std::cout << e + 1 << '\t' << res.epoch_loss[e] << '\n';
  return 0;
}

struct TrainArgs {
  Common common;
  std::string data_dir;
  std::string out_dir;
  std::optional<double> lambda;
  std::optional<std::string> transe;
  std::optional<int> epochs;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg = resolve_config(a.common);
  if (a.lambda) cfg.lambda = *a.lambda;
  if (a.transe) set_config_value(cfg, "transe", *a.transe);
  if (a.epochs) cfg.epochs = *a.epochs;
  cfg.validate();
  const Dataset data = load_dataset(a.data_dir);
  const Prepared p = prepare(data, cfg);
  Trainer t(cfg, p, all_facts(data));
  fs::create_directories(a.out_dir);
  auto log = open_out(fs::path(a.out_dir) / "epochs.log");
  t.run(&log);
  save_checkpoint(make_checkpoint(t, p.vocab, t.optimizer(), t.rng()), fs::path(a.out_dir) / "model.ckpt");
  std::cout << "best_epoch\t" << t.best_epoch() << "\nvalid_bleu4\t" << std::setprecision(17)
            << std::max(0.0, t.best_bleu4()) << '\n';
  return t.diverged() ? 1 : 0;
}

struct LoadedModel {
  Checkpoint ckpt;
  Dataset data;
  Prepared prepared;
  std::unique_ptr<ModelParams> params;
};

// Prepares the dataset under the checkpoint's configuration but with the
// checkpoint's vocabulary, so ids line up with the stored tensors.
std::unique_ptr<LoadedModel> load_model(const fs::path& checkpoint, const fs::path& data_dir) {
  auto m = std::make_unique<LoadedModel>();
  m->ckpt = load_checkpoint(checkpoint);
  m->data = load_dataset(data_dir);
  m->prepared = prepare(m->data, m->ckpt.config);
  m->prepared.vocab = m->ckpt.vocab;
  for (auto* s : {&m->prepared.train, &m->prepared.valid, &m->prepared.test}) {
    s->encoded.clear();
    for (const auto& ex : s->examples) s->encoded.push_back(encode_example(ex, m->prepared.vocab));
  }
  m->params = std::make_unique<ModelParams>(m->ckpt.config.model(), m->ckpt.vocab.size(),
                                            m->data.kb.kb_vocab.size(), m->ckpt.config.seed);
  apply_tensors(m->ckpt, m->params->store());
  return m;
}

struct GenerateArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string split = "test";
  std::string out;
  int beam = 0;
};

int cmd_generate(const GenerateArgs& a) {
  auto m = load_model(a.checkpoint, a.data_dir);
  const auto& split = m->prepared.split(a.split);
  const int beam = a.beam > 0 ? a.beam : m->ckpt.config.beam;
  const auto gens = generate(*m->params, m->prepared, split, m->ckpt.config.max_len, beam);
  auto out = open_out(a.out);
  for (const auto& g : gens) out << fact_ids(g.fact, m->data.kb) << '\t' << join(g.tokens) << '\t' << g.modes << '\n';
  std::cout << "generated\t" << gens.size() << '\n';
  return 0;
}

struct EvalArgs {
  std::string generations;
  std::string data_dir;
  std::string split = "test";
  std::string out;
  std::size_t sample = 100;
  std::uint64_t seed = 1;
};

int cmd_eval(const EvalArgs& a) {
  const Dataset data = load_dataset(a.data_dir);
  const auto& raws = data.split(a.split);
  std::ifstream in(a.generations);
  if (!in) throw IngestError("cannot open " + a.generations);
  std::vector<Tokens> cands, refs, answers;
  std::vector<AnnotationRow> rows;
  std::string line;
  std::size_t i = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw IngestError(a.generations + ":" + std::to_string(i + 1) + ": expected 3 columns");
    if (i >= raws.size()) throw IngestError("more generations than examples in split " + a.split);
    const Fact f = resolve_fact(raws[i], data.kb);
    if (line.substr(0, t1) != fact_ids(f, data.kb))
      throw IngestError(a.generations + ":" + std::to_string(i + 1) + ": fact does not match split order");
    const std::string question = line.substr(t1 + 1, t2 - t1 - 1);
    const ContextSet ctx = build_context_set(f, data.kb);
    cands.push_back(tokenize(question));
    refs.push_back(tokenize(raws[i].question));
    answers.push_back(dedup(ctx.object));
    rows.push_back({raws[i].subject, raws[i].predicate, raws[i].object, join(ctx.predicate), question});
    ++i;
  }
  if (i != raws.size()) throw IngestError("generation count " + std::to_string(i) + " != split size " +
                                          std::to_string(raws.size()));
  const EvalReport r = evaluate(cands, refs, answers);
  fs::create_directories(a.out);
  {
    auto out = open_out(fs::path(a.out) / "report.txt");
    write_report_table(r, out);
  }
  {
    auto out = open_out(fs::path(a.out) / "metrics.tsv");
    write_report_lines(r, out);
  }
  {
    auto out = open_out(fs::path(a.out) / "examples.tsv");
    out << "candidate\treference\tcovered\tmatched_answer\n";
    for (const auto& rec : r.records)
      out << rec.candidate << '\t' << rec.reference << '\t' << (rec.covered ? 1 : 0) << '\t' << rec.matched_answer << '\n';
  }
  {
    auto out = open_out(fs::path(a.out) / "annotation_sample.tsv");
    export_annotation_sample(rows, a.sample, a.seed, out);
  }
  write_report_table(r, std::cout);
  return 0;
}

struct GradcheckArgs {
  Common common;
  int vocab = 30;
  int context = 3;
  std::size_t max_coords = 64;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const TrainConfig cfg = resolve_config(a.common);
  const auto r = model_gradcheck(cfg, a.vocab, a.context, a.max_coords);
  std::cout << std::setprecision(6) << "max_rel_error\t" << r.max_rel_error << "\nworst\t" << r.worst_param << '['
            << r.worst_index << "]\ncoordinates\t" << r.coordinates << '\n';
  return r.max_rel_error < 1e-4 ? 0 : 1;
}

struct AblateArgs {
  Common common;
  std::string grid = "lambda=0,0.05,0.2,0.5,1.0;transe=on,off";
  std::string data_dir;
  std::string out;
};

int cmd_ablate(const AblateArgs& a) {
  const TrainConfig base = resolve_config(a.common);
  const auto cells = parse_grid(a.grid, base);
  const Dataset data = a.data_dir.empty() ? to_dataset(synth_corpus(SynthOptions{})) : load_dataset(a.data_dir);
  std::vector<GridResult> results;
  for (const auto& c : cells) results.push_back(run_cell(base, c, data));
  write_grid_report(results, std::cout);
  if (!a.out.empty()) {
    auto out = open_out(a.out);
    write_grid_report(results, out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Question generation over knowledge-base facts"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "write a synthetic corpus");
  s->add_option("--seed", synth.opts.seed);
  s->add_option("--entities", synth.opts.n_entities)->check(CLI::PositiveNumber);
  s->add_option("--predicates", synth.opts.n_predicates)->check(CLI::PositiveNumber);
  s->add_option("--facts", synth.opts.n_facts)->check(CLI::PositiveNumber);
  s->add_option("--out-dir", synth.out_dir)->required();

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain-kb", "TransE pretraining of the KB table");
  add_common(p, pre.common);
  p->add_option("--facts", pre.facts, "corpus directory")->required();
  p->add_option("--out", pre.out)->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train a question generator");
  add_common(t, train.common);
  t->add_option("--data-dir", train.data_dir)->required();
  t->add_option("--out-dir", train.out_dir)->required();
  t->add_option("--lambda", train.lambda);
  t->add_option("--transe", train.transe)->check(CLI::IsMember({"on", "off"}));
  t->add_option("--epochs", train.epochs);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "decode questions for a split");
  g->add_option("--checkpoint", gen.checkpoint)->required();
  g->add_option("--data-dir", gen.data_dir)->required();
  g->add_option("--split", gen.split)->check(CLI::IsMember({"train", "valid", "test"}));
  g->add_option("--out", gen.out)->required();
  g->add_option("--beam", gen.beam)->check(CLI::PositiveNumber);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score a generation file");
  e->add_option("--generations", ev.generations)->required();
  e->add_option("--data-dir", ev.data_dir)->required();
  e->add_option("--split", ev.split)->check(CLI::IsMember({"train", "valid", "test"}));
  e->add_option("--out", ev.out, "output directory")->required();
  e->add_option("--sample", ev.sample, "annotation sample size");
  e->add_option("--seed", ev.seed);

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  add_common(c, gc.common);
  c->add_option("--vocab", gc.vocab);
  c->add_option("--context", gc.context);
  c->add_option("--max-coords", gc.max_coords, "per-tensor coordinate cap (0 = all)")->capture_default_str();

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "train and score a configuration grid");
  add_common(a, ab.common);
  a->add_option("--grid", ab.grid);
  a->add_option("--data-dir", ab.data_dir, "corpus directory (default: built-in synthetic corpus)");
  a->add_option("--out", ab.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (p->parsed()) return cmd_pretrain(pre);
    if (t->parsed()) return cmd_train(train);
    if (g->parsed()) return cmd_generate(gen);
    if (e->parsed()) return cmd_eval(ev);
    if (c->parsed()) return cmd_gradcheck(gc);
    if (a->parsed()) return cmd_ablate(ab);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 2;
}
