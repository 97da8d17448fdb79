#pragma once

// Corpus BLEU-4, ROUGE-L, a dictionary-free METEOR variant, answer
// coverage, report formatting and the human-judgment export.

#include "kbqg/corpus.hpp"

#include <cstdint>
#include <iosfwd>

namespace kbqg {

/// Corpus-level BLEU-4 in percent. Orders 2-4 with zero clipped matches
/// use (m + 1) / (c + 1).
double bleu4(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references);

inline constexpr double kRougeBeta = 1.2;

std::size_t lcs_length(const Tokens& a, const Tokens& b);

/// Mean sentence LCS F-measure in percent.
double rouge_l(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references);

/// Strips one of ing/es/ed/s when at least three characters remain.
std::string stem(const std::string& word);

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference);

/// Sentence score in [0, 1].
double meteor_sentence(const Tokens& candidate, const Tokens& reference);

/// Mean sentence score in percent.
double meteor_lite(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references);

/// Index of the first answer word found in the candidate, if any.
std::optional<std::size_t> covering_word(const Tokens& candidate, const Tokens& answers);

double answer_coverage(const std::vector<Tokens>& candidates, const std::vector<Tokens>& answer_sets);

struct ExampleRecord {
  std::string candidate;
  std::string reference;
  bool covered = false;
  std::string matched_answer;
};

struct EvalReport {
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double meteor = 0.0;
  double answer_coverage = 0.0;
  std::vector<ExampleRecord> records;
};

EvalReport evaluate(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                    const std::vector<Tokens>& answer_sets);

void write_report_table(const EvalReport& r, std::ostream& out);
void write_report_lines(const EvalReport& r, std::ostream& out);

struct AnnotationRow {
  std::string subject;
  std::string predicate;
  std::string object;
  std::string predicate_context;
  std::string question;
};

/// Seeded sample of n rows (all rows if n exceeds the pool), written as TSV
/// with empty predicate-identified and naturalness columns.
void export_annotation_sample(const std::vector<AnnotationRow>& rows, std::size_t n, std::uint64_t seed,
                              std::ostream& out);

}  // namespace kbqg
