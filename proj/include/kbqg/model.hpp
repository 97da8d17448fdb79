#pragma once

// Parameter registry for the full question generator and the per-example
// index encoding shared by the encoder, decoder and objective.

#include "kbqg/corpus.hpp"
#include "kbqg/numdiff.hpp"

#include <array>
#include <cstdint>
#include <random>

namespace kbqg {

/// Training precision. The model code is also instantiated for long double,
/// which the gradient check uses to push finite-difference roundoff well
/// below its tolerance.
using Scalar = double;
using Mat = nd::Matrix<Scalar>;
using Var = nd::Var<Scalar>;
using Tape = nd::Tape<Scalar>;
using Param = nd::Parameter<Scalar>;
using ParamStore = nd::ParamStore<Scalar>;
using CheckScalar = long double;

struct ModelConfig {
  int d = 32;
  int heads = 2;
  int layers = 2;
  int ff_mult = 2;
  double dropout = 0.1;
  bool ctx_copy = true;
  bool kb_copy = true;
  bool fusion = true;
};

/// Inverted dropout driven by a caller-owned generator; a null pointer or a
/// zero rate disables it.
struct Dropout {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;

  bool active() const { return rng != nullptr && rate > 0.0; }
  template <typename S>
  nd::Var<S> apply(const nd::Var<S>& x) const;
};

/// Uniform [-bound, bound] matrix from a 64-bit Mersenne twister.
Mat uniform_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double bound);

/// Names every trainable tensor of the model and creates it with its
/// initializer. The word embedding table is shared by the context encoder,
/// the decoder input and the output projection. Initial values do not
/// depend on S.
template <typename S>
class BasicModelParams {
 public:
  BasicModelParams(const ModelConfig& cfg, int vocab_size, int kb_size, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  int vocab_size() const { return vocab_size_; }
  int kb_size() const { return kb_size_; }

  nd::ParamStore<S>& store() { return store_; }
  const nd::ParamStore<S>& store() const { return store_; }
  nd::Parameter<S>& operator[](const std::string& name) { return store_.at(name); }
  const nd::Parameter<S>& operator[](const std::string& name) const { return store_.at(name); }

  /// Replaces the KB table (e.g. with TransE vectors); shapes must agree.
  void set_kb_table(const Mat& table, bool frozen);

 private:
  ModelConfig cfg_;
  int vocab_size_;
  int kb_size_;
  nd::ParamStore<S> store_;
};

using ModelParams = BasicModelParams<Scalar>;

/// Concatenated context tokens for context copy. Positions holding the same
/// extended id form one group.
struct CopySource {
  std::vector<int> input_ids;
  std::vector<Segment> segments;
  std::vector<int> group;
  std::vector<int> group_ext;

  std::size_t size() const { return input_ids.size(); }
  int n_groups() const { return static_cast<int>(group_ext.size()); }
};

/// One example in index space. Extended ids >= vocab size name context
/// tokens outside the vocabulary (oov[id - vocab size]).
struct EncodedExample {
  Fact fact;
  std::array<std::vector<int>, 3> context_ids;
  CopySource copy;
  std::vector<std::string> oov;
  std::vector<int> target;
  std::vector<int> decoder_input;
  std::vector<int> answer_ids;
  int vocab_size = 0;

  int ext_size() const { return vocab_size + static_cast<int>(oov.size()); }
  /// Decoder input id for an extended id (extension slots read as UNK).
  int input_id(int ext) const { return ext < vocab_size ? ext : kUnk; }
};

EncodedExample encode_example(const Example& ex, const Vocab& vocab);

/// Extended id -> surface token ("<unk>" and specials kept verbatim).
const std::string& ext_token(const EncodedExample& ex, const Vocab& vocab, int ext);

}  // namespace kbqg
