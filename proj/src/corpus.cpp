#include "kbqg/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace kbqg {

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    cols.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return cols;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

std::ifstream open_or_throw(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IngestError("cannot open " + p.string());
  return in;
}

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (is_word_byte(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (ch == '\'') {
      flush();
      cur.push_back(ch);
    } else {
      flush();
      out.emplace_back(1, ch);
    }
  }
  flush();
  return out;
}

std::string join(const Tokens& tokens, std::string_view sep) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += sep;
    s += tokens[i];
  }
  return s;
}

// ---------------------------------------------------------------- Vocab

Vocab Vocab::with_specials() {
  Vocab v;
  for (const char* t : {"<pad>", "<s>", "</s>", "<unk>", kSubjToken}) v.add(t);
  return v;
}

int Vocab::add(const std::string& token) {
  auto [it, inserted] = index_.emplace(token, static_cast<int>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::optional<int> Vocab::find(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocab::id_or_unk(const std::string& token) const { return find(token).value_or(kUnk); }

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocab id " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

Vocab build_word_vocab(const std::vector<Tokens>& questions, int min_count) {
  std::map<std::string, int> counts;
  for (const auto& q : questions)
    for (const auto& t : q) ++counts[t];
  std::vector<std::pair<std::string, int>> kept;
  for (const auto& [t, c] : counts)
    if (c >= min_count) kept.emplace_back(t, c);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v = Vocab::with_specials();
  for (const auto& [t, _] : kept) v.add(t);
  return v;
}

// ---------------------------------------------------------------- KB ingestion

const EntityRecord& KnowledgeBase::entity(int kb_id) const {
  auto it = entities.find(kb_vocab.token(kb_id));
  if (it == entities.end()) throw IngestError("KB id " + std::to_string(kb_id) + " is not an entity");
  return it->second;
}

const PredicateRecord& KnowledgeBase::predicate(int kb_id) const {
  auto it = predicates.find(kb_vocab.token(kb_id));
  if (it == predicates.end()) throw IngestError("KB id " + std::to_string(kb_id) + " is not a predicate");
  return it->second;
}

KnowledgeBase parse_kb(std::istream& entities, std::istream& predicates) {
  KnowledgeBase kb;
  std::string line;
  std::ostringstream errors;
  int lineno = 0;
  while (std::getline(entities, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() < 4) {
      errors << "entities line " << lineno << ": expected 4 columns, got " << cols.size() << "\n";
      continue;
    }
    EntityRecord e{cols[0], tokenize(cols[1]), tokenize(cols[2]), tokenize(cols[3])};
    if (e.id.empty() || e.name.empty()) {
      errors << "entities line " << lineno << ": empty id or name\n";
      continue;
    }
    if (e.frequent_type.empty() && e.notable_type.empty()) {
      errors << "entities line " << lineno << ": entity " << e.id << " has no type\n";
      continue;
    }
    if (kb.entities.count(e.id)) {
      errors << "entities line " << lineno << ": duplicate id " << e.id << "\n";
      continue;
    }
    kb.kb_vocab.add(e.id);
    kb.entities.emplace(e.id, std::move(e));
  }
  lineno = 0;
  while (std::getline(predicates, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() < 4) {
      errors << "predicates line " << lineno << ": expected at least 4 columns, got " << cols.size() << "\n";
      continue;
    }
    PredicateRecord p{cols[0], tokenize(cols[1]), tokenize(cols[2]), tokenize(cols[3]), {}};
    if (cols.size() >= 5) {
      std::string pat;
      std::istringstream ps(cols[4]);
      while (std::getline(ps, pat, ';')) {
        auto toks = tokenize(pat);
        if (!toks.empty()) p.ds_patterns.push_back(std::move(toks));
      }
    }
    if (p.id.empty()) {
      errors << "predicates line " << lineno << ": empty id\n";
      continue;
    }
    if (kb.predicates.count(p.id) || kb.entities.count(p.id)) {
      errors << "predicates line " << lineno << ": duplicate id " << p.id << "\n";
      continue;
    }
    if (p.domain.empty() && p.range.empty() && p.topic.empty()) {
      errors << "predicates line " << lineno << ": predicate " << p.id << " has no domain, range or topic\n";
      continue;
    }
    kb.kb_vocab.add(p.id);
    kb.predicates.emplace(p.id, std::move(p));
  }
  if (auto msg = errors.str(); !msg.empty()) throw IngestError(msg);
  return kb;
}

KnowledgeBase load_kb(const std::filesystem::path& entities_file, const std::filesystem::path& predicates_file) {
  auto e = open_or_throw(entities_file);
  auto p = open_or_throw(predicates_file);
  return parse_kb(e, p);
}

std::vector<RawFact> parse_facts(std::istream& in) {
  std::vector<RawFact> out;
  std::string line;
  std::ostringstream errors;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() < 4) {
      errors << "facts line " << lineno << ": expected 4 columns, got " << cols.size() << "\n";
      continue;
    }
    out.push_back(RawFact{cols[0], cols[1], cols[2], cols[3]});
  }
  if (auto msg = errors.str(); !msg.empty()) throw IngestError(msg);
  return out;
}

std::vector<RawFact> load_facts(const std::filesystem::path& file) {
  auto in = open_or_throw(file);
  return parse_facts(in);
}

std::vector<RawFact> parse_triples(std::istream& in) {
  std::vector<RawFact> out;
  std::string line;
  std::ostringstream errors;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() < 3) {
      errors << "triples line " << lineno << ": expected 3 columns, got " << cols.size() << "\n";
      continue;
    }
    out.push_back(RawFact{cols[0], cols[1], cols[2], ""});
  }
  if (auto msg = errors.str(); !msg.empty()) throw IngestError(msg);
  return out;
}

Fact resolve_fact(const RawFact& raw, const KnowledgeBase& kb) {
  auto lookup = [&](const std::string& id, bool want_entity) {
    const bool ok = want_entity ? kb.entities.count(id) != 0 : kb.predicates.count(id) != 0;
    if (!ok) throw IngestError(std::string("unresolvable ") + (want_entity ? "entity" : "predicate") + " id '" + id + "'");
    return *kb.kb_vocab.find(id);
  };
  return Fact{lookup(raw.subject, true), lookup(raw.predicate, false), lookup(raw.object, true)};
}

// ---------------------------------------------------------------- contexts

Tokens dedup(const Tokens& tokens) {
  Tokens out;
  std::unordered_set<std::string> seen;
  for (const auto& t : tokens)
    if (seen.insert(t).second) out.push_back(t);
  return out;
}

const Tokens& ContextSet::of(Segment s) const {
  switch (s) {
    case Segment::Subject: return subject;
    case Segment::Predicate: return predicate;
    case Segment::Object: return object;
  }
  throw std::logic_error("bad segment");
}

std::vector<Segment> ContextSet::segment_ids() const {
  std::vector<Segment> ids;
  ids.insert(ids.end(), subject.size(), Segment::Subject);
  ids.insert(ids.end(), predicate.size(), Segment::Predicate);
  ids.insert(ids.end(), object.size(), Segment::Object);
  return ids;
}

namespace {

Tokens capped(Tokens t, std::size_t cap) {
  if (t.size() > cap) t.resize(cap);
  return t;
}

Tokens entity_context(const EntityRecord& e, bool diversified) {
  Tokens all = e.frequent_type;
  if (diversified || all.empty()) all.insert(all.end(), e.notable_type.begin(), e.notable_type.end());
  return dedup(all);
}

}  // namespace

ContextSet build_context_set(const Fact& fact, const KnowledgeBase& kb, const ContextOptions& opts) {
  const auto& s = kb.entity(fact.subject);
  const auto& p = kb.predicate(fact.predicate);
  const auto& o = kb.entity(fact.object);

  Tokens pred;
  for (const auto& pat : p.ds_patterns) pred.insert(pred.end(), pat.begin(), pat.end());
  if (opts.diversified) {
    for (const auto* part : {&p.domain, &p.range, &p.topic}) pred.insert(pred.end(), part->begin(), part->end());
  }
  pred = dedup(pred);
  // The narrow setting leaves pattern-less predicates without text; the
  // encoder needs at least one token.
  if (pred.empty()) pred.push_back("<unk>");

  return ContextSet{capped(entity_context(s, opts.diversified), opts.cap), capped(std::move(pred), opts.cap),
                    capped(entity_context(o, opts.diversified), opts.cap)};
}

// ---------------------------------------------------------------- examples

std::optional<Span> find_span(const Tokens& tokens, const Tokens& name) {
  if (name.empty() || name.size() > tokens.size()) return std::nullopt;
  for (std::size_t i = 0; i + name.size() <= tokens.size(); ++i) {
    if (std::equal(name.begin(), name.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) return Span{i, name.size()};
  }
  return std::nullopt;
}

Example prepare_example(const RawFact& raw, const KnowledgeBase& kb, const PrepareOptions& opts) {
  auto q = tokenize(raw.question);
  if (q.empty()) throw IngestError("empty question for fact " + raw.subject + " " + raw.predicate + " " + raw.object);
  Example ex;
  ex.fact = resolve_fact(raw, kb);
  ex.contexts = build_context_set(ex.fact, kb, opts.context);
  ex.subject_name = kb.entity(ex.fact.subject).name;
  ex.subject_span = find_span(q, ex.subject_name);
  if (ex.subject_span && opts.subject_placeholder) {
    const auto st = static_cast<std::ptrdiff_t>(ex.subject_span->start);
    q.erase(q.begin() + st, q.begin() + st + static_cast<std::ptrdiff_t>(ex.subject_span->length));
    q.insert(q.begin() + st, kSubjToken);
  }
  ex.question = std::move(q);
  ex.answer_words = dedup(ex.contexts.object);
  return ex;
}

std::vector<Example> prepare_all(const std::vector<RawFact>& raws, const KnowledgeBase& kb, const PrepareOptions& opts) {
  std::vector<Example> out;
  out.reserve(raws.size());
  for (const auto& r : raws) out.push_back(prepare_example(r, kb, opts));
  return out;
}

const std::vector<RawFact>& Dataset::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw IngestError("unknown split '" + std::string(name) + "'");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.kb = load_kb(dir / "entities.tsv", dir / "predicates.tsv");
  d.train = load_facts(dir / "train.tsv");
  d.valid = load_facts(dir / "valid.tsv");
  d.test = load_facts(dir / "test.tsv");
  if (std::filesystem::exists(dir / "kb.tsv")) {
    auto in = open_or_throw(dir / "kb.tsv");
    d.background = parse_triples(in);
  }
  return d;
}

}  // namespace kbqg
