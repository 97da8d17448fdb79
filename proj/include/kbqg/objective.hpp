#pragma once

// Question likelihood, answer-aware minimum cross entropy and their sum.

#include "kbqg/model.hpp"

#include <optional>

namespace kbqg {

inline constexpr double kDefaultLambda = 0.2;

/// (answer word extended id, 0-based step) chosen by the answer-aware loss.
struct AnswerPair {
  int word = 0;
  int step = 0;
  bool operator==(const AnswerPair&) const = default;
};

/// -(1/T) sum_t log P_t(gold_t) over rows of `dist`; probabilities are
/// floored at 1e-12 before the log.
template <typename S>
nd::Var<S> question_loss(const nd::Var<S>& dist, std::span<const int> gold);

template <typename S>
struct BasicAnswerLoss {
  nd::Var<S> value;
  std::optional<AnswerPair> argmin;
};

using AnswerLoss = BasicAnswerLoss<Scalar>;

/// min over (a in answers, t) of -log P_t(a). Hard min: the gradient flows
/// through the selected term only. Ties go to the earliest answer word,
/// then the earliest step. An empty answer set gives a constant 0.
template <typename S>
BasicAnswerLoss<S> answer_loss(nd::Tape<S>& tape, const nd::Var<S>& dist, std::span<const int> answers);

/// -tau log sum exp(-H / tau) over the same pairs; for experimentation only.
template <typename S>
nd::Var<S> answer_loss_soft(nd::Tape<S>& tape, const nd::Var<S>& dist, std::span<const int> answers, double tau);

/// ques + lambda * ans.
template <typename S>
nd::Var<S> total_loss(const nd::Var<S>& ques, const nd::Var<S>& ans, double lambda);

struct LossBreakdown {
  double ques_loss = 0.0;
  double ans_loss = 0.0;
  double total_loss = 0.0;
  std::optional<AnswerPair> argmin_pair;
};

template <typename S>
struct BasicLossNodes {
  nd::Var<S> ques;
  BasicAnswerLoss<S> ans;
  nd::Var<S> total;

  LossBreakdown breakdown() const {
    return {static_cast<double>(ques.value()(0, 0)), static_cast<double>(ans.value.value()(0, 0)),
            static_cast<double>(total.value()(0, 0)), ans.argmin};
  }
};

using LossNodes = BasicLossNodes<Scalar>;

/// All three losses on a teacher-forced step distribution.
template <typename S>
BasicLossNodes<S> example_loss(nd::Tape<S>& tape, const nd::Var<S>& dist, std::span<const int> gold,
                               std::span<const int> answers, double lambda);

}  // namespace kbqg
