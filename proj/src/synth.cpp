#include "kbqg/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace kbqg {

namespace {

enum class Family { Person, Location, Organization, Work, Date, Quantity };

struct Kind {
  Family family;
  const char* notable;
};

struct FamilyInfo {
  const char* frequent;
  const char* wh;
  const char* generic;
};

FamilyInfo info(Family f) {
  switch (f) {
    case Family::Person: return {"person", "who", "individual"};
    case Family::Location: return {"location", "where", "place"};
    case Family::Organization: return {"organization", "what", "group"};
    case Family::Work: return {"creative work", "what", "title"};
    case Family::Date: return {"datetime", "when", ""};
    case Family::Quantity: return {"integer", "how much", ""};
  }
  return {};
}

bool literal(Family f) { return f == Family::Date || f == Family::Quantity; }

// Within a family, earlier kinds are more common (Zipf), so the tail kinds
// are rare enough that their words may fall outside the vocabulary.
const std::array kKinds = {
    Kind{Family::Person, "actor"},          Kind{Family::Person, "singer"},
    Kind{Family::Person, "writer"},         Kind{Family::Person, "politician"},
    Kind{Family::Person, "athlete"},        Kind{Family::Person, "film director"},
    Kind{Family::Person, "painter"},        Kind{Family::Person, "composer"},
    Kind{Family::Person, "architect"},      Kind{Family::Person, "chemist"},
    Kind{Family::Location, "city"},         Kind{Family::Location, "country"},
    Kind{Family::Location, "us state"},     Kind{Family::Location, "river"},
    Kind{Family::Location, "mountain"},     Kind{Family::Location, "island"},
    Kind{Family::Location, "village"},      Kind{Family::Location, "lake"},
    Kind{Family::Location, "county"},       Kind{Family::Location, "desert"},
    Kind{Family::Organization, "company"},  Kind{Family::Organization, "university"},
    Kind{Family::Organization, "band"},     Kind{Family::Organization, "football team"},
    Kind{Family::Organization, "record label"}, Kind{Family::Organization, "hospital"},
    Kind{Family::Organization, "museum"},   Kind{Family::Organization, "airline"},
    Kind{Family::Organization, "newspaper"},
    Kind{Family::Work, "film"},             Kind{Family::Work, "book"},
    Kind{Family::Work, "album"},            Kind{Family::Work, "song"},
    Kind{Family::Work, "tv series"},        Kind{Family::Work, "video game"},
    Kind{Family::Work, "opera"},            Kind{Family::Work, "poem"},
    Kind{Family::Work, "sculpture"},
    Kind{Family::Date, "calendar date"},    Kind{Family::Quantity, "measured quantity"},
};

const std::array kRelations = {
    "born",      "located",  "founded",   "directed", "written",   "produced",  "released", "recorded",
    "published", "educated", "buried",    "married",  "named",     "owned",     "designed", "composed",
    "edited",    "filmed",   "governed",  "based",    "signed",    "drafted",   "elected",  "awarded",
    "nominated", "performed", "created",  "adapted",  "narrated",  "distributed", "managed", "coached",
    "sponsored", "hosted",   "translated", "illustrated", "invented", "discovered", "painted", "acquired",
};

const std::array kPreps = {"in", "by", "at", "with", "for", "to", "from", "on"};

const std::array kSyllables = {"ka", "lo", "vin", "tar", "mi", "zor", "bel", "dra", "qu", "sen", "ro", "fi",
                               "nax", "el", "ost", "mur", "pra", "lin", "gud", "tes", "vo", "hal", "ry", "ben"};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(eng_() % n); }
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 eng_;
};

std::string pseudo_word(Rng& rng) {
  std::string w;
  const auto n = 2 + rng.below(2);
  for (std::size_t i = 0; i < n; ++i) w += kSyllables[rng.below(kSyllables.size())];
  return w;
}

enum class Style { Typed, Ambiguous, Untyped };

struct PredicatePlan {
  PredicateRecord record;
  Style style;
  Family subject_family;
  std::vector<std::size_t> range_kinds;
  std::string rel, prep, aux;
  int shape = 0;
  double typed_share = 1.0;
  double weight = 1.0;
};

std::string question_text(const PredicatePlan& p, const Kind& object_kind, const std::string& subject, bool typed) {
  std::ostringstream q;
  const auto fam = info(object_kind.family);
  if (p.style == Style::Untyped) {
    q << fam.wh << " " << p.aux << " " << subject << " " << p.rel << " ?";
    return q.str();
  }
  const std::string noun = typed ? object_kind.notable : fam.generic;
  switch (p.shape) {
    case 0: q << "which " << noun << " " << p.aux << " " << subject << " " << p.rel << " " << p.prep << " ?"; break;
    case 1: q << "which " << noun << " " << p.aux << " " << p.rel << " " << p.prep << " " << subject << " ?"; break;
    default: q << "what is the " << noun << " that " << subject << " " << p.aux << " " << p.rel << " " << p.prep << " ?"; break;
  }
  return q.str();
}

}  // namespace

SynthCorpus synth_corpus(const SynthOptions& opts) {
  if (opts.n_entities < 1 || opts.n_predicates < 1 || opts.n_facts < 1)
    throw std::invalid_argument("synth_corpus: sizes must be >= 1");
  Rng rng(opts.seed);
  SynthCorpus out;

  // Entities: families in a fixed cycle (literal families get one slot in
  // five), kinds within a family drawn with weight 1 / rank.
  const std::array family_cycle = {Family::Person, Family::Location, Family::Organization, Family::Work,
                                   Family::Date,   Family::Person,   Family::Location,     Family::Organization,
                                   Family::Work,   Family::Quantity};
  auto draw_kind = [&](Family f) {
    std::vector<std::size_t> ks;
    std::vector<double> w;
    for (std::size_t k = 0; k < kKinds.size(); ++k)
      if (kKinds[k].family == f) {
        ks.push_back(k);
        w.push_back(1.0 / static_cast<double>(ks.size()));
      }
    double total = 0;
    for (double x : w) total += x;
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < ks.size(); ++i)
      if ((u -= w[i]) < 0) return ks[i];
    return ks.back();
  };
  std::vector<std::vector<std::size_t>> by_kind(kKinds.size());
  std::set<std::string> names;
  for (int i = 0; i < opts.n_entities; ++i) {
    const auto k = draw_kind(family_cycle[static_cast<std::size_t>(i) % family_cycle.size()]);
    const auto& kind = kKinds[k];
    std::string name;
    int tries = 0;
    do {
      if (++tries > 50) {
        name += " " + std::to_string(i);
        if (names.insert(name).second) break;
      }
      if (kind.family == Family::Date) {
        name = std::to_string(1000 + rng.below(1025));
      } else if (kind.family == Family::Quantity) {
        name = std::to_string(10 + rng.below(9990));
      } else {
        const auto words = kind.family == Family::Person ? 2 : 1 + rng.below(2);
        name.clear();
        for (std::size_t w = 0; w < words; ++w) name += (w ? " " : "") + pseudo_word(rng);
      }
    } while (!names.insert(name).second);
    EntityRecord e{"m." + std::to_string(i), tokenize(name), tokenize(info(kind.family).frequent), tokenize(kind.notable)};
    by_kind[k].push_back(out.entities.size());
    out.entities.push_back(std::move(e));
  }

  auto kinds_of = [&](Family f) {
    std::vector<std::size_t> ks;
    for (std::size_t k = 0; k < kKinds.size(); ++k)
      if (kKinds[k].family == f && !by_kind[k].empty()) ks.push_back(k);
    return ks;
  };
  const std::array open_families = {Family::Person, Family::Location, Family::Organization, Family::Work};
  std::vector<Family> populated_open;
  for (auto f : open_families)
    if (!kinds_of(f).empty()) populated_open.push_back(f);
  std::vector<Family> populated_literal;
  for (auto f : {Family::Date, Family::Quantity})
    if (!kinds_of(f).empty()) populated_literal.push_back(f);

  // Predicates: styles in fixed proportions, then shuffled.
  std::vector<Style> styles;
  for (int i = 0; i < opts.n_predicates; ++i) {
    const double u = (i + 0.5) / opts.n_predicates;
    styles.push_back(u < 0.45 ? Style::Typed : u < 0.75 ? Style::Ambiguous : Style::Untyped);
  }
  rng.shuffle(styles);
  std::vector<std::size_t> rel_order(kRelations.size());
  for (std::size_t i = 0; i < rel_order.size(); ++i) rel_order[i] = i;
  rng.shuffle(rel_order);

  std::vector<PredicatePlan> plans;
  std::set<std::string> pred_ids;
  for (int i = 0; i < opts.n_predicates; ++i) {
    PredicatePlan p;
    p.style = styles[static_cast<std::size_t>(i)];
    if (p.style == Style::Untyped && populated_literal.empty()) p.style = Style::Typed;
    if (p.style != Style::Untyped && populated_open.empty()) p.style = Style::Untyped;
    p.subject_family = populated_open.empty() ? Family::Date : populated_open[rng.below(populated_open.size())];
    if (p.style == Style::Untyped) {
      auto ks = kinds_of(populated_literal[rng.below(populated_literal.size())]);
      p.range_kinds.push_back(ks[rng.below(ks.size())]);
    } else {
      const auto f1 = populated_open[rng.below(populated_open.size())];
      auto k1 = kinds_of(f1);
      rng.shuffle(k1);
      const auto n1 = std::min<std::size_t>(k1.size(), 2 + rng.below(2));
      p.range_kinds.assign(k1.begin(), k1.begin() + static_cast<std::ptrdiff_t>(n1));
      if (rng.uniform() < 0.25 && populated_open.size() > 1) {
        Family f2;
        do f2 = populated_open[rng.below(populated_open.size())];
        while (f2 == f1);
        auto k2 = kinds_of(f2);
        p.range_kinds.push_back(k2[rng.below(k2.size())]);
      }
    }
    p.rel = kRelations[rel_order[static_cast<std::size_t>(i) % rel_order.size()]];
    p.prep = kPreps[rng.below(kPreps.size())];
    p.aux = rng.below(2) ? "was" : "is";
    p.shape = static_cast<int>(rng.below(3));
    p.typed_share = p.style == Style::Typed ? 1.0 : p.style == Style::Ambiguous ? 0.45 + 0.2 * rng.uniform() : 0.0;
    p.weight = 1.0 / std::pow(1.0 + i, 0.8);

    const auto subj_info = info(p.subject_family);
    const auto obj_info = info(kKinds[p.range_kinds[0]].family);
    std::string id = std::string(subj_info.frequent) + "/" + p.rel;
    std::replace(id.begin(), id.end(), ' ', '_');
    for (int n = 2; !pred_ids.insert(id).second; ++n) id = std::string(subj_info.frequent) + "/" + p.rel + "_" + std::to_string(n);
    std::replace(id.begin(), id.end(), ' ', '_');
    p.record.id = id;
    p.record.domain = tokenize(subj_info.frequent);
    p.record.range = tokenize(obj_info.frequent);
    p.record.topic = tokenize(p.rel);
    if (rng.uniform() < 0.44) p.record.ds_patterns.push_back(tokenize(p.aux + " " + p.rel + " " + p.prep));
    plans.push_back(std::move(p));
  }
  for (const auto& p : plans) out.predicates.push_back(p.record);

  // Facts, with popularity-weighted predicates and no duplicate triples.
  double total_w = 0;
  for (const auto& p : plans) total_w += p.weight;
  auto pick_predicate = [&] {
    double u = rng.uniform() * total_w;
    for (std::size_t i = 0; i < plans.size(); ++i) {
      if ((u -= plans[i].weight) < 0) return i;
    }
    return plans.size() - 1;
  };
  auto pick_entity = [&](const std::vector<std::size_t>& kinds) {
    const auto k = kinds[rng.below(kinds.size())];
    return std::make_pair(k, by_kind[k][rng.below(by_kind[k].size())]);
  };

  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
  std::vector<RawFact> facts;
  int attempts = 0;
  while (static_cast<int>(facts.size()) < opts.n_facts && attempts < opts.n_facts * 50) {
    ++attempts;
    const auto pi = pick_predicate();
    const auto& p = plans[pi];
    auto subj_kinds = kinds_of(p.subject_family);
    if (subj_kinds.empty()) {
      for (std::size_t k = 0; k < kKinds.size(); ++k)
        if (!by_kind[k].empty()) subj_kinds.push_back(k);
    }
    const auto [sk, si] = pick_entity(subj_kinds);
    const auto [ok, oi] = pick_entity(p.range_kinds);
    if (si == oi) continue;
    if (!seen.insert({si, pi, oi}).second) continue;
    const bool typed = rng.uniform() < p.typed_share;
    const auto& subj = out.entities[si];
    facts.push_back(RawFact{subj.id, p.record.id, out.entities[oi].id,
                            question_text(p, kKinds[ok], join(subj.name), typed)});
    (void)sk;
  }

  // Type nodes and background triples linking every entity to them.
  std::vector<std::string> kind_node(kKinds.size());
  std::map<Family, std::string> family_node;
  for (std::size_t k = 0; k < kKinds.size(); ++k) {
    if (by_kind[k].empty()) continue;
    const auto fam = kKinds[k].family;
    if (!family_node.count(fam)) {
      std::string id = std::string("f.") + info(fam).frequent;
      std::replace(id.begin(), id.end(), ' ', '_');
      family_node[fam] = id;
      out.entities.push_back(EntityRecord{id, tokenize(info(fam).frequent), tokenize("type"), tokenize("type")});
    }
    std::string id = std::string("k.") + kKinds[k].notable;
    std::replace(id.begin(), id.end(), ' ', '_');
    kind_node[k] = id;
    out.entities.push_back(EntityRecord{id, tokenize(kKinds[k].notable), tokenize("type"), tokenize("type")});
  }
  const PredicateRecord notable_pred{"type/notable_type", tokenize("entity"), tokenize("type"), tokenize("notable type"), {}};
  const PredicateRecord frequent_pred{"type/frequent_type", tokenize("entity"), tokenize("type"), tokenize("type"), {}};
  out.predicates.push_back(notable_pred);
  out.predicates.push_back(frequent_pred);
  for (std::size_t k = 0; k < kKinds.size(); ++k)
    for (auto i : by_kind[k]) {
      out.background.push_back(RawFact{out.entities[i].id, notable_pred.id, kind_node[k], ""});
      out.background.push_back(RawFact{out.entities[i].id, frequent_pred.id, family_node[kKinds[k].family], ""});
    }

  rng.shuffle(facts);
  const auto n = facts.size();
  auto n_test = static_cast<std::size_t>(std::floor(n * opts.test_fraction));
  auto n_valid = static_cast<std::size_t>(std::floor(n * opts.valid_fraction));
  if (n_test + n_valid >= n) n_test = n_valid = 0;
  const auto n_train = n - n_test - n_valid;
  out.train.assign(facts.begin(), facts.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.valid.assign(facts.begin() + static_cast<std::ptrdiff_t>(n_train),
                   facts.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  out.test.assign(facts.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), facts.end());
  return out;
}

namespace {

void write_facts(const std::vector<RawFact>& facts, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IngestError("cannot write " + file.string());
  for (const auto& f : facts) out << f.subject << '\t' << f.predicate << '\t' << f.object << '\t' << f.question << '\n';
}

}  // namespace

void write_corpus(const SynthCorpus& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "entities.tsv", std::ios::binary);
    for (const auto& e : c.entities)
      out << e.id << '\t' << join(e.name) << '\t' << join(e.frequent_type) << '\t' << join(e.notable_type) << '\n';
  }
  {
    std::ofstream out(dir / "predicates.tsv", std::ios::binary);
    for (const auto& p : c.predicates) {
      out << p.id << '\t' << join(p.domain) << '\t' << join(p.range) << '\t' << join(p.topic) << '\t';
      for (std::size_t i = 0; i < p.ds_patterns.size(); ++i) out << (i ? ";" : "") << join(p.ds_patterns[i]);
      out << '\n';
    }
  }
  write_facts(c.train, dir / "train.tsv");
  write_facts(c.valid, dir / "valid.tsv");
  write_facts(c.test, dir / "test.tsv");
  std::ofstream kb(dir / "kb.tsv", std::ios::binary);
  for (const auto& f : c.background) kb << f.subject << '\t' << f.predicate << '\t' << f.object << '\n';
}

Dataset to_dataset(const SynthCorpus& c) {
  std::ostringstream es, ps;
  for (const auto& e : c.entities)
    es << e.id << '\t' << join(e.name) << '\t' << join(e.frequent_type) << '\t' << join(e.notable_type) << '\n';
  for (const auto& p : c.predicates) {
    ps << p.id << '\t' << join(p.domain) << '\t' << join(p.range) << '\t' << join(p.topic) << '\t';
    for (std::size_t i = 0; i < p.ds_patterns.size(); ++i) ps << (i ? ";" : "") << join(p.ds_patterns[i]);
    ps << '\n';
  }
  std::istringstream ei(es.str()), pi(ps.str());
  Dataset d;
  d.kb = parse_kb(ei, pi);
  d.train = c.train;
  d.valid = c.valid;
  d.test = c.test;
  d.background = c.background;
  return d;
}

}  // namespace kbqg
