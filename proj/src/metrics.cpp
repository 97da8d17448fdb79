#include "kbqg/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

namespace kbqg {

namespace {

void check_sizes(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(a) + " candidates vs " +
                                std::to_string(b) + " references");
}

using NGram = std::vector<std::string>;

std::map<NGram, int> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<NGram, int> out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[NGram(t.begin() + static_cast<std::ptrdiff_t>(i),
                                                               t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

}  // namespace

double bleu4(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) {
  check_sizes(candidates.size(), references.size(), "bleu4");
  std::array<long, 4> match{}, total{};
  long cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cand_len += static_cast<long>(candidates[i].size());
    ref_len += static_cast<long>(references[i].size());
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto c = ngram_counts(candidates[i], n);
      const auto r = ngram_counts(references[i], n);
      for (const auto& [g, cnt] : c) {
        total[n - 1] += cnt;
        auto it = r.find(g);
        if (it != r.end()) match[n - 1] += std::min(cnt, it->second);
      }
    }
  }
  if (cand_len == 0 || match[0] == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double p;
    if (n > 0 && match[n] == 0)
      p = 1.0 / static_cast<double>(total[n] + 1);
    else
      p = static_cast<double>(match[n]) / static_cast<double>(total[n]);
    log_sum += std::log(p);
  }
  const double bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) {
  check_sizes(candidates.size(), references.size(), "rouge_l");
  if (candidates.empty()) return 0.0;
  double sum = 0.0;
  const double b2 = kRougeBeta * kRougeBeta;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto l = static_cast<double>(lcs_length(candidates[i], references[i]));
    if (l == 0.0) continue;
    const double p = l / static_cast<double>(candidates[i].size());
    const double r = l / static_cast<double>(references[i].size());
    sum += (1.0 + b2) * p * r / (r + b2 * p);
  }
  return 100.0 * sum / static_cast<double>(candidates.size());
}

std::string stem(const std::string& word) {
  for (const char* suf : {"ing", "es", "ed", "s"}) {
    const std::string s(suf);
    if (word.size() >= s.size() + 3 && word.compare(word.size() - s.size(), s.size(), s) == 0)
      return word.substr(0, word.size() - s.size());
  }
  return word;
}

MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference) {
  std::vector<int> ref_of(candidate.size(), -1);
  std::vector<bool> used(reference.size(), false);
  auto stage = [&](auto key) {
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      if (ref_of[i] >= 0) continue;
      const auto want = key(candidate[i]);
      // Prefer the reference slot that extends the previous candidate's
      // match, so contiguous runs stay in one chunk.
      int pick = -1;
      if (i > 0 && ref_of[i - 1] >= 0) {
        const auto next = static_cast<std::size_t>(ref_of[i - 1] + 1);
        if (next < reference.size() && !used[next] && key(reference[next]) == want) pick = static_cast<int>(next);
      }
      for (std::size_t j = 0; pick < 0 && j < reference.size(); ++j)
        if (!used[j] && key(reference[j]) == want) pick = static_cast<int>(j);
      if (pick >= 0) {
        ref_of[i] = pick;
        used[static_cast<std::size_t>(pick)] = true;
      }
    }
  };
  stage([](const std::string& w) { return w; });
  stage([](const std::string& w) { return stem(w); });

  MeteorAlignment a;
  int prev_ref = -2;
  bool prev_matched = false;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    if (ref_of[i] < 0) {
      prev_matched = false;
      continue;
    }
    ++a.matches;
    if (!prev_matched || ref_of[i] != prev_ref + 1) ++a.chunks;
    prev_ref = ref_of[i];
    prev_matched = true;
  }
  return a;
}

double meteor_sentence(const Tokens& candidate, const Tokens& reference) {
  const auto a = meteor_align(candidate, reference);
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(candidate.size());
  const double r = m / static_cast<double>(reference.size());
  const double fmean = 10.0 * p * r / (r + 9.0 * p);
  const double penalty = 0.5 * std::pow(static_cast<double>(a.chunks) / m, 3.0);
  return fmean * (1.0 - penalty);
}

double meteor_lite(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) {
  check_sizes(candidates.size(), references.size(), "meteor_lite");
  if (candidates.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sum += meteor_sentence(candidates[i], references[i]);
  return 100.0 * sum / static_cast<double>(candidates.size());
}

std::optional<std::size_t> covering_word(const Tokens& candidate, const Tokens& answers) {
  for (std::size_t k = 0; k < answers.size(); ++k)
    if (std::find(candidate.begin(), candidate.end(), answers[k]) != candidate.end()) return k;
  return std::nullopt;
}

double answer_coverage(const std::vector<Tokens>& candidates, const std::vector<Tokens>& answer_sets) {
  check_sizes(candidates.size(), answer_sets.size(), "answer_coverage");
  if (candidates.empty()) return 0.0;
  std::size_t covered = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (covering_word(candidates[i], answer_sets[i])) ++covered;
  return 100.0 * static_cast<double>(covered) / static_cast<double>(candidates.size());
}

EvalReport evaluate(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                    const std::vector<Tokens>& answer_sets) {
  EvalReport r;
  r.bleu4 = bleu4(candidates, references);
  r.rouge_l = rouge_l(candidates, references);
  r.meteor = meteor_lite(candidates, references);
  r.answer_coverage = answer_coverage(candidates, answer_sets);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    ExampleRecord rec{join(candidates[i]), join(references[i]), false, {}};
    if (auto k = covering_word(candidates[i], answer_sets[i])) {
      rec.covered = true;
      rec.matched_answer = answer_sets[i][*k];
    }
    r.records.push_back(std::move(rec));
  }
  return r;
}

void write_report_table(const EvalReport& r, std::ostream& out) {
  out << std::left << std::setw(18) << "metric" << std::right << std::setw(10) << "value" << '\n';
  out << std::string(28, '-') << '\n';
  out << std::fixed << std::setprecision(2);
  for (const auto& [name, v] : {std::pair<const char*, double>{"BLEU-4", r.bleu4},
                                {"ROUGE-L", r.rouge_l},
                                {"METEOR-lite", r.meteor},
                                {"answer coverage", r.answer_coverage}})
    out << std::left << std::setw(18) << name << std::right << std::setw(10) << v << '\n';
  out << std::left << std::setw(18) << "examples" << std::right << std::setw(10) << r.records.size() << '\n';
  out.unsetf(std::ios::fixed);
}

void write_report_lines(const EvalReport& r, std::ostream& out) {
  out << std::setprecision(17);
  out << "bleu4\t" << r.bleu4 << '\n';
  out << "rouge_l\t" << r.rouge_l << '\n';
  out << "meteor\t" << r.meteor << '\n';
  out << "answer_coverage\t" << r.answer_coverage << '\n';
  out << "examples\t" << r.records.size() << '\n';
}

void export_annotation_sample(const std::vector<AnnotationRow>& rows, std::size_t n, std::uint64_t seed,
                              std::ostream& out) {
  std::vector<std::size_t> idx(rows.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates with explicit draws keeps the sample identical
  // across standard library implementations.
  const std::size_t take = std::min(n, rows.size());
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (rows.size() - i));
    std::swap(idx[i], idx[j]);
  }
  out << "subject\tpredicate\tobject\tpredicate_context\tquestion\tpredicate_identified\tnaturalness\n";
  for (std::size_t i = 0; i < take; ++i) {
    const auto& r = rows[idx[i]];
    out << r.subject << '\t' << r.predicate << '\t' << r.object << '\t' << r.predicate_context << '\t' << r.question
        << "\t\t\n";
  }
}

}  // namespace kbqg
