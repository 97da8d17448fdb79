#pragma once

// Context transformer encoder, attentive vector, gated fusion and the
// context-augmented fact H_f.

#include "kbqg/model.hpp"

#include <cmath>
#include <filesystem>

namespace kbqg {

/// Scaled dot-product attention over `heads` column slices, scaled by
/// sqrt(d / heads), with the "<prefix>{wq,wk,wv,wo}" projections (each
/// [d, d], applied as X * W). `allowed` (if given) is [n_query, n_key]. The
/// per-head attention matrices are appended to `weights` when non-null.
template <typename S>
nd::Var<S> multi_head_attention(nd::Tape<S>& tape, BasicModelParams<S>& params, const std::string& prefix,
                                const nd::Var<S>& query, const nd::Var<S>& memory, int heads,
                                const nd::Mask* allowed = nullptr, std::vector<nd::Matrix<S>>* weights = nullptr);

/// Position-wise two-layer relu network.
template <typename S>
nd::Var<S> feed_forward(nd::Tape<S>& tape, BasicModelParams<S>& params, const std::string& prefix,
                        const nd::Var<S>& x);

/// Layer norm with the "<prefix>_g" / "<prefix>_b" parameters.
template <typename S>
nd::Var<S> norm(nd::Tape<S>& tape, BasicModelParams<S>& params, const std::string& prefix, const nd::Var<S>& x);

/// Factor sqrt(d) on decoder input embeddings.
inline double embedding_scale(int d) { return std::sqrt(static_cast<double>(d)); }

/// C = encoder(layer_norm(token embeddings + segment embedding)). No
/// positional signal.
template <typename S>
nd::Var<S> encode_context(nd::Tape<S>& tape, BasicModelParams<S>& params, std::span<const int> ids, Segment segment,
                          const Dropout& dropout = {});

/// alpha = softmax(C e / sqrt(d)); returns alpha^T C as a [1, d] row.
template <typename S>
nd::Var<S> attentive_vector(const nd::Var<S>& e, const nd::Var<S>& c);

/// h = g * f + (1 - g) * e with f = tanh(W_f [c; e]) and g = sigmoid(W_g [c; e]).
template <typename S>
nd::Var<S> gated_fuse(nd::Tape<S>& tape, const nd::Var<S>& c, const nd::Var<S>& e, nd::Parameter<S>& wf,
                      nd::Parameter<S>& wg);

template <typename S>
struct BasicEncoderOutput {
  std::array<nd::Var<S>, 3> contexts;  // C^s, C^p, C^o
  nd::Var<S> kb_rows;                  // [3, d] e^s, e^p, e^o
  nd::Var<S> fact;                     // H_f [3, d]
};

using EncoderOutput = BasicEncoderOutput<Scalar>;

/// Encodes the three contexts separately, then attends from each KB row to
/// its context and fuses. With fusion disabled H_f is the raw KB rows (the
/// contexts are still encoded when context copy needs them as keys).
template <typename S>
BasicEncoderOutput<S> augment_fact(nd::Tape<S>& tape, BasicModelParams<S>& params, const EncodedExample& ex,
                                   const Dropout& dropout = {});

/// Overwrites rows of the word table from a "token v1 ... vd" text file.
/// Returns the number of rows replaced; unknown tokens are skipped.
int load_word_vectors(const std::filesystem::path& file, const Vocab& vocab, Mat& table);

}  // namespace kbqg
