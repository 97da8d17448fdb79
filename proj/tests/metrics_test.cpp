#include "kbqg/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

using namespace kbqg;

namespace {

const Tokens kCand{"the", "cat", "sat", "on", "the", "mat"};
const Tokens kRef{"the", "cat", "is", "on", "the", "mat"};

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Bleu4, HandExample) {
  // p1 5/6, p2 3/5, p3 1/4, p4 smoothed 1/(3+1); product 2^-5.
  EXPECT_NEAR(bleu4({kCand}, {kRef}), 42.0448, 5e-5);
}

TEST(Bleu4, BrevityPenalty) {
  const Tokens ref{"a", "b", "c", "d", "e", "f", "g", "h"};
  const Tokens cand{"a", "b", "c", "d", "e", "f"};
  EXPECT_NEAR(bleu4({cand}, {ref}), 100.0 * std::exp(1.0 - 8.0 / 6.0), 1e-9);
}

TEST(Bleu4, EdgeCases) {
  EXPECT_EQ(bleu4({{"x", "y"}}, {{"a", "b"}}), 0.0);
  EXPECT_EQ(bleu4({{}}, {{"a"}}), 0.0);
  EXPECT_THROW(bleu4({kCand}, {}), std::invalid_argument);
}

TEST(RougeL, HandExample) {
  EXPECT_EQ(lcs_length(kCand, kRef), 5u);
  EXPECT_NEAR(rouge_l({kCand}, {kRef}), 83.3333, 5e-5);
  // LCS 2 of 3 candidate and 4 reference tokens.
  const double p = 2.0 / 3.0, r = 0.5, b2 = kRougeBeta * kRougeBeta;
  EXPECT_NEAR(rouge_l({{"a", "x", "c"}}, {{"a", "b", "c", "d"}}), 100.0 * (1 + b2) * p * r / (r + b2 * p), 1e-9);
}

TEST(Meteor, HandExample) {
  const auto a = meteor_align(kCand, kRef);
  EXPECT_EQ(a.matches, 5u);
  EXPECT_EQ(a.chunks, 2u);
  // Fmean 5/6 times (1 - 0.5 (2/5)^3).
  EXPECT_NEAR(meteor_lite({kCand}, {kRef}), 80.6667, 5e-5);
}

TEST(Meteor, StemStageAndReorder) {
  EXPECT_EQ(stem("cities"), "citi");
  EXPECT_EQ(stem("played"), "play");
  EXPECT_EQ(stem("cats"), "cat");
  EXPECT_EQ(stem("is"), "is");
  EXPECT_EQ(stem("ring"), "ring");
  const auto a = meteor_align({"city", "cats"}, {"cat", "city"});
  EXPECT_EQ(a.matches, 2u);
  EXPECT_EQ(a.chunks, 2u);
  EXPECT_EQ(meteor_sentence({"x"}, {"y"}), 0.0);
}

TEST(Metrics, IdenticalCorpus) {
  const std::vector<Tokens> c{kCand, kRef, {"which", "city", "is", "<subj>", "in", "?"}};
  EXPECT_NEAR(bleu4(c, c), 100.0, 1e-12);
  EXPECT_NEAR(rouge_l(c, c), 100.0, 1e-12);
  // One chunk per sentence leaves only the 0.5 / m^3 fragmentation term.
  EXPECT_NEAR(meteor_lite(c, c), 100.0 * (1.0 - 0.5 / 216.0), 1e-9);
}

TEST(AnswerCoverage, Ratios) {
  const std::vector<Tokens> cands{{"which", "city", "?"}, {"who", "is", "it"}, {"what", "place"}, {"what"}};
  const std::vector<Tokens> answers{{"city", "place"}, {"person"}, {"city", "place"}, {}};
  EXPECT_EQ(answer_coverage(cands, answers), 50.0);
  EXPECT_EQ(covering_word(cands[2], answers[2]), std::optional<std::size_t>(1));
  EXPECT_FALSE(covering_word(cands[3], answers[3]).has_value());
  const auto r = evaluate(cands, cands, answers);
  EXPECT_TRUE(r.records[0].covered);
  EXPECT_EQ(r.records[0].matched_answer, "city");
  EXPECT_FALSE(r.records[1].covered);
  EXPECT_EQ(r.records[1].candidate, "who is it");
}

TEST(Report, LinesAndTable) {
  const auto r = evaluate({kCand}, {kRef}, {{"mat"}});
  std::ostringstream lines, table;
  write_report_lines(r, lines);
  write_report_table(r, table);
  const auto l = lines_of(lines.str());
  ASSERT_EQ(l.size(), 5u);
  EXPECT_EQ(l[3], "answer_coverage\t100");
  EXPECT_EQ(l[4], "examples\t1");
  EXPECT_NE(table.str().find("42.04"), std::string::npos);
}

TEST(AnnotationExport, SeededSample) {
  std::vector<AnnotationRow> rows;
  for (int i = 0; i < 20; ++i) rows.push_back({"s" + std::to_string(i), "p", "o", "ctx", "q" + std::to_string(i)});
  std::ostringstream a, b, c, all;
  export_annotation_sample(rows, 5, 3, a);
  export_annotation_sample(rows, 5, 3, b);
  export_annotation_sample(rows, 5, 4, c);
  export_annotation_sample(rows, 50, 3, all);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str(), c.str());
  const auto l = lines_of(a.str());
  ASSERT_EQ(l.size(), 6u);
  EXPECT_EQ(l[0], "subject\tpredicate\tobject\tpredicate_context\tquestion\tpredicate_identified\tnaturalness");
  std::set<std::string> distinct(l.begin() + 1, l.end());
  EXPECT_EQ(distinct.size(), 5u);
  EXPECT_EQ(lines_of(all.str()).size(), 21u);
}
