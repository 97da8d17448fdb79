#pragma once

// Transformer decoder with fact attention and the three-way output mixture:
// vocabulary generation, KB copy of the subject placeholder, and context
// copy with per-token max scoring. Greedy/beam decoding and realization.

#include "kbqg/encoder.hpp"

namespace kbqg {

enum Mode : int { kGenerate = 0, kCopyKb = 1, kCopyContext = 2 };

/// Sinusoidal position encodings, [n, d].
Mat position_encoding(Eigen::Index n, Eigen::Index d);

/// All decoder states [T, d] for the inputs prev_ids (starting with BOS).
template <typename S>
nd::Var<S> decode_states(nd::Tape<S>& tape, BasicModelParams<S>& params, std::span<const int> prev_ids,
                         const nd::Var<S>& fact, const Dropout& dropout = {});

/// Row-wise mode probabilities [T, 3] from [S ; Y_prev]. The KB-copy logit
/// adds a small relu perceptron on S. Disabled modes get probability 0.
template <typename S>
nd::Var<S> mode_switch(nd::Tape<S>& tape, BasicModelParams<S>& params, const nd::Var<S>& states,
                       const nd::Var<S>& prev_emb);

/// Tied-embedding vocabulary softmax [T, |V|]. PAD, BOS and the subject
/// placeholder are excluded (the placeholder is reachable through KB copy).
template <typename S>
nd::Var<S> p_vocab(nd::Tape<S>& tape, BasicModelParams<S>& params, const nd::Var<S>& states);

/// Context-copy distribution over the unique tokens of the copy source
/// [T, n_groups]: position softmax, max per token, renormalized.
template <typename S>
nd::Var<S> p_ctxcopy(nd::Tape<S>& tape, BasicModelParams<S>& params, const nd::Var<S>& states,
                     const nd::Var<S>& keys, const CopySource& source);

/// Mixture over the extended vocabulary [T, ext_size]. `p_ctx` is ignored
/// when context copy is disabled.
template <typename S>
nd::Var<S> mix(const nd::Var<S>& modes, const nd::Var<S>& p_gen, const nd::Var<S>* p_ctx, const CopySource& source,
               int vocab_size, int ext_size);

template <typename S>
struct BasicStepOutputs {
  nd::Var<S> modes;
  nd::Var<S> p_gen;
  nd::Var<S> p_ctx;
  bool has_ctx = false;
  nd::Var<S> dist;
};

using StepOutputs = BasicStepOutputs<Scalar>;

/// Distributions for every step of prev_ids given an encoded fact.
template <typename S>
BasicStepOutputs<S> step_outputs(nd::Tape<S>& tape, BasicModelParams<S>& params, const EncodedExample& ex,
                                 const BasicEncoderOutput<S>& enc, std::span<const int> prev_ids,
                                 const Dropout& dropout = {});

/// Teacher forcing over ex.decoder_input; row t predicts ex.target[t].
template <typename S>
BasicStepOutputs<S> teacher_forced(nd::Tape<S>& tape, BasicModelParams<S>& params, const EncodedExample& ex,
                                   const Dropout& dropout = {});

struct Decoded {
  std::vector<int> ids;  // extended ids, EOS excluded
  std::string modes;     // one of g/k/c per emitted id
  double log_prob = 0.0;
};

inline constexpr int kDefaultMaxLen = 20;

Decoded greedy_decode(ModelParams& params, const EncodedExample& ex, int max_len = kDefaultMaxLen);
Decoded beam_decode(ModelParams& params, const EncodedExample& ex, int max_len, int beam_width);

/// Tokens of a decoded id sequence (extension slots resolved).
Tokens decoded_tokens(const Decoded& d, const EncodedExample& ex, const Vocab& vocab);

/// Expands the placeholder to the subject name and joins with spaces.
std::string surface_realize(const Tokens& tokens, const Tokens& subject_name);

}  // namespace kbqg
