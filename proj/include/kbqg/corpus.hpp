#pragma once

// Facts, diversified textual contexts, vocabularies and TSV ingestion.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kbqg {

using Tokens = std::vector<std::string>;

struct IngestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Case-folds, splits on whitespace and detaches punctuation. An apostrophe
/// starts a new token so clitics stay together ("york's" -> york 's).
Tokens tokenize(std::string_view text);

std::string join(const Tokens& tokens, std::string_view sep = " ");

enum class Segment : int { Subject = 0, Predicate = 1, Object = 2 };

// Fixed indices of the reserved word-vocabulary entries.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kSubj = 4;
inline constexpr int kNumSpecial = 5;

/// Dense bidirectional token <-> index map.
class Vocab {
 public:
  /// Empty vocabulary (KB vocabularies start here).
  Vocab() = default;

  /// Word vocabulary with the reserved tokens at indices 0..4.
  static Vocab with_specials();

  /// Adds `token` if absent; returns its index.
  int add(const std::string& token);
  std::optional<int> find(const std::string& token) const;
  /// Index of `token`, or kUnk for word vocabularies.
  int id_or_unk(const std::string& token) const;
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Word vocabulary from training questions: tokens seen at least `min_count`
/// times, ordered by descending count then lexicographically.
Vocab build_word_vocab(const std::vector<Tokens>& questions, int min_count = 2);

struct PredicateRecord {
  std::string id;
  Tokens domain;
  Tokens range;
  Tokens topic;
  std::vector<Tokens> ds_patterns;
};

struct EntityRecord {
  std::string id;
  Tokens name;
  Tokens frequent_type;
  Tokens notable_type;
};

struct KnowledgeBase {
  std::map<std::string, EntityRecord> entities;
  std::map<std::string, PredicateRecord> predicates;
  /// Entities first (file order), then predicates.
  Vocab kb_vocab;

  const EntityRecord& entity(int kb_id) const;
  const PredicateRecord& predicate(int kb_id) const;
};

/// Triplet fact as KB-vocabulary indices.
struct Fact {
  int subject = 0;
  int predicate = 0;
  int object = 0;
  bool operator==(const Fact&) const = default;
};

struct RawFact {
  std::string subject;
  std::string predicate;
  std::string object;
  std::string question;
};

KnowledgeBase parse_kb(std::istream& entities, std::istream& predicates);
KnowledgeBase load_kb(const std::filesystem::path& entities_file, const std::filesystem::path& predicates_file);
std::vector<RawFact> parse_facts(std::istream& in);
std::vector<RawFact> load_facts(const std::filesystem::path& file);
/// "subject<TAB>predicate<TAB>object" lines; questions are left empty.
std::vector<RawFact> parse_triples(std::istream& in);

Fact resolve_fact(const RawFact& raw, const KnowledgeBase& kb);

inline constexpr std::size_t kContextCap = 16;

struct ContextOptions {
  /// false reproduces the narrower setting: DS patterns only for the
  /// predicate and the frequent type only for entities.
  bool diversified = true;
  std::size_t cap = kContextCap;
};

/// Textual contexts x^s, x^p, x^o. Each list is deduplicated and never
/// empty; the segment of every token is implied by its list.
struct ContextSet {
  Tokens subject;
  Tokens predicate;
  Tokens object;

  const Tokens& of(Segment s) const;
  std::vector<Segment> segment_ids() const;
};

ContextSet build_context_set(const Fact& fact, const KnowledgeBase& kb, const ContextOptions& opts = {});

/// First-occurrence-order deduplication.
Tokens dedup(const Tokens& tokens);

struct Span {
  std::size_t start = 0;
  std::size_t length = 0;
  bool operator==(const Span&) const = default;
};

inline constexpr const char* kSubjToken = "<subj>";

struct Example {
  Fact fact;
  ContextSet contexts;
  /// Question tokens without BOS/EOS; the subject name span (if found) is
  /// replaced by the placeholder token.
  Tokens question;
  /// Answer-type words: the object context tokens.
  Tokens answer_words;
  std::optional<Span> subject_span;
  Tokens subject_name;
};

struct PrepareOptions {
  ContextOptions context;
  /// Replace the subject name by the placeholder (disabled when KB copy is
  /// ablated: the name then stays in the target).
  bool subject_placeholder = true;
};

/// Locates the first case-folded occurrence of `name` in `tokens`.
std::optional<Span> find_span(const Tokens& tokens, const Tokens& name);

Example prepare_example(const RawFact& raw, const KnowledgeBase& kb, const PrepareOptions& opts = {});

struct Dataset {
  KnowledgeBase kb;
  std::vector<RawFact> train;
  std::vector<RawFact> valid;
  std::vector<RawFact> test;
  /// KB triples without questions (type links etc.), used only for KB
  /// embedding pretraining.
  std::vector<RawFact> background;

  const std::vector<RawFact>& split(std::string_view name) const;
};

/// Reads entities.tsv, predicates.tsv, train.tsv, valid.tsv, test.tsv and
/// the optional kb.tsv background triples.
Dataset load_dataset(const std::filesystem::path& dir);

std::vector<Example> prepare_all(const std::vector<RawFact>& raws, const KnowledgeBase& kb, const PrepareOptions& opts);

}  // namespace kbqg
