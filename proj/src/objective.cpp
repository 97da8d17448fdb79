#include "kbqg/objective.hpp"

#include <cmath>

namespace kbqg {

template <typename S>
nd::Var<S> question_loss(const nd::Var<S>& dist, std::span<const int> gold) {
  if (static_cast<Eigen::Index>(gold.size()) != dist.rows())
    throw nd::DimensionError("question_loss: " + std::to_string(gold.size()) + " gold tokens for " +
                             nd::shape_str(dist.value()));
  if (gold.empty()) throw nd::ContractError("question_loss: empty target");
  std::vector<nd::Var<S>> terms;
  terms.reserve(gold.size());
  for (std::size_t t = 0; t < gold.size(); ++t) terms.push_back(nd::neg_log_prob(dist, static_cast<Eigen::Index>(t), gold[t]));
  return nd::scale(nd::add_scalars<S>(terms), S(1) / static_cast<S>(gold.size()));
}

template <typename S>
BasicAnswerLoss<S> answer_loss(nd::Tape<S>& tape, const nd::Var<S>& dist, std::span<const int> answers) {
  BasicAnswerLoss<S> out;
  if (answers.empty()) {
    out.value = tape.constant(nd::Matrix<S>::Zero(1, 1));
    return out;
  }
  const auto& p = dist.value();
  S best = -1;
  AnswerPair pair;
  // Minimal cross entropy = maximal probability (after the floor).
  for (int a : answers) {
    if (a < 0 || a >= p.cols()) throw nd::IndexError("answer_loss: answer id " + std::to_string(a));
    for (Eigen::Index t = 0; t < p.rows(); ++t) {
      const S v = std::max(p(t, a), static_cast<S>(nd::kProbFloor));
      if (v > best) {
        best = v;
        pair = {a, static_cast<int>(t)};
      }
    }
  }
  out.value = nd::neg_log_prob(dist, pair.step, pair.word);
  out.argmin = pair;
  return out;
}

template <typename S>
nd::Var<S> answer_loss_soft(nd::Tape<S>& tape, const nd::Var<S>& dist, std::span<const int> answers, double tau) {
  if (tau <= 0.0) throw nd::ContractError("answer_loss_soft: tau must be positive");
  if (answers.empty()) return tape.constant(nd::Matrix<S>::Zero(1, 1));
  std::vector<nd::Var<S>> h;
  for (int a : answers)
    for (Eigen::Index t = 0; t < dist.rows(); ++t) h.push_back(nd::neg_log_prob(dist, t, a));
  auto hs = nd::concat_cols<S>(h);
  using Row = Eigen::Matrix<S, 1, Eigen::Dynamic>;
  const Row x = hs.value().row(0);
  const S lo = x.minCoeff();
  const S t = static_cast<S>(tau);
  const Row w = (-(x.array() - lo) / t).exp();
  const S z = w.sum();
  nd::Matrix<S> v(1, 1);
  v(0, 0) = lo - t * std::log(z);
  const Row soft = w / z;
  const auto ih = hs.id;
  return tape.push(std::move(v), [ih, soft](nd::Tape<S>& tp, std::size_t self) {
    tp.grad(ih).row(0) += tp.grad(self)(0, 0) * soft;
  });
}

template <typename S>
nd::Var<S> total_loss(const nd::Var<S>& ques, const nd::Var<S>& ans, double lambda) {
  if (lambda < 0.0) throw nd::ContractError("total_loss: lambda must be non-negative");
  return ques + nd::scale(ans, static_cast<S>(lambda));
}

template <typename S>
BasicLossNodes<S> example_loss(nd::Tape<S>& tape, const nd::Var<S>& dist, std::span<const int> gold,
                               std::span<const int> answers, double lambda) {
  BasicLossNodes<S> n;
  n.ques = question_loss(dist, gold);
  n.ans = answer_loss(tape, dist, answers);
  n.total = total_loss(n.ques, n.ans.value, lambda);
  return n;
}

#define KBQG_INSTANTIATE(S)                                                                                   \
  template nd::Var<S> question_loss(const nd::Var<S>&, std::span<const int>);                                 \
  template BasicAnswerLoss<S> answer_loss(nd::Tape<S>&, const nd::Var<S>&, std::span<const int>);             \
  template nd::Var<S> answer_loss_soft(nd::Tape<S>&, const nd::Var<S>&, std::span<const int>, double);        \
  template nd::Var<S> total_loss(const nd::Var<S>&, const nd::Var<S>&, double);                               \
  template BasicLossNodes<S> example_loss(nd::Tape<S>&, const nd::Var<S>&, std::span<const int>,              \
                                          std::span<const int>, double);

KBQG_INSTANTIATE(double)
KBQG_INSTANTIATE(long double)
#undef KBQG_INSTANTIATE

}  // namespace kbqg
