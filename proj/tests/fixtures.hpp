#pragma once

// Tiny hand-built KB and example shared by the model-level tests.

#include "kbqg/corpus.hpp"
#include "kbqg/model.hpp"

#include <random>
#include <sstream>

namespace kbqg::testing {

inline KnowledgeBase tiny_kb() {
  std::istringstream e(
      "m.ny\tNew York\tadministrative region\tUS state\n"
      "m.sol\tStatue of Liberty\tlocation\tmonument\n"
      "m.paris\tParis\tcity\tcity\n");
  std::istringstream p(
      "location/containedby\tlocation\tlocation\tcontainedby\t\n"
      "location/located_in\tlocation\tcity\tlocated\tis located in;located in\n");
  return parse_kb(e, p);
}

struct TinyCase {
  KnowledgeBase kb = tiny_kb();
  Example example;
  Vocab vocab;
  EncodedExample encoded;
};

/// "which city is <subj> located in ?" about the statue. Context words
/// outside the question ("monument", "location") become extension slots.
inline TinyCase tiny_case() {
  TinyCase c;
  c.example = prepare_example({"m.sol", "location/located_in", "m.paris", "Which city is Statue of Liberty located in ?"},
                              c.kb);
  c.vocab = build_word_vocab({c.example.question}, 1);
  c.encoded = encode_example(c.example, c.vocab);
  return c;
}

inline ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.dropout = 0.0;
  return cfg;
}

template <typename S>
nd::Matrix<S> random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  nd::Matrix<S> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(n(rng));
  return m;
}

/// Weighted sum with fixed random weights: a scalar that touches every
/// coordinate of y.
template <typename S>
nd::Var<S> probe(nd::Tape<S>& t, const nd::Var<S>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return nd::sum(nd::mul(y, t.constant(random_matrix<S>(rng, y.rows(), y.cols()))));
}

template <typename S>
std::vector<nd::Parameter<S>*> all_params(BasicModelParams<S>& p) {
  std::vector<nd::Parameter<S>*> out;
  p.store().for_each([&](nd::Parameter<S>& x) { out.push_back(&x); });
  return out;
}

}  // namespace kbqg::testing
