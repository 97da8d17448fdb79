#include "kbqg/encoder.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace kbqg {

template <typename S>
nd::Var<S> multi_head_attention(nd::Tape<S>& tape, BasicModelParams<S>& params, const std::string& prefix,
                                const nd::Var<S>& query, const nd::Var<S>& memory, int heads,
                                const nd::Mask* allowed, std::vector<nd::Matrix<S>>* weights) {
  const Eigen::Index d = query.cols();
  if (d % heads != 0) throw nd::ContractError("attention: d not divisible by heads");
  const Eigen::Index dk = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dk));
  const auto q = nd::matmul(query, tape.param(params[prefix + "wq"]));
  const auto k = nd::matmul(memory, tape.param(params[prefix + "wk"]));
  const auto v = nd::matmul(memory, tape.param(params[prefix + "wv"]));
  std::vector<nd::Var<S>> out;
  out.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index c0 = h * dk;
    auto scores = nd::scale(nd::matmul_nt(nd::slice_cols(q, c0, dk), nd::slice_cols(k, c0, dk)), scale);
    auto a = allowed ? nd::masked_softmax_rows(scores, *allowed) : nd::softmax_rows(scores);
    if (weights) weights->push_back(a.value());
    out.push_back(nd::matmul(a, nd::slice_cols(v, c0, dk)));
  }
  return nd::matmul(nd::concat_cols<S>(out), tape.param(params[prefix + "wo"]));
}

template <typename S>
nd::Var<S> feed_forward(nd::Tape<S>& tape, BasicModelParams<S>& params, const std::string& prefix,
                        const nd::Var<S>& x) {
  auto h = nd::relu(nd::add_row(nd::matmul(x, tape.param(params[prefix + "ff_w1"])), tape.param(params[prefix + "ff_b1"])));
  return nd::add_row(nd::matmul(h, tape.param(params[prefix + "ff_w2"])), tape.param(params[prefix + "ff_b2"]));
}

template <typename S>
nd::Var<S> norm(nd::Tape<S>& tape, BasicModelParams<S>& params, const std::string& prefix, const nd::Var<S>& x) {
  return nd::layer_norm(x, tape.param(params[prefix + "_g"]), tape.param(params[prefix + "_b"]));
}

template <typename S>
nd::Var<S> encode_context(nd::Tape<S>& tape, BasicModelParams<S>& params, std::span<const int> ids, Segment segment,
                          const Dropout& dropout) {
  if (ids.empty()) throw nd::ContractError("encode_context: empty token list");
  const auto& cfg = params.config();
  const int seg = static_cast<int>(segment);
  auto x = nd::add_row(nd::gather_rows(tape, params["word_emb"], ids),
                       nd::gather_rows(tape, params["segment_emb"], std::span<const int>(&seg, 1)));
  x = norm(tape, params, "enc.emb_ln", x);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "enc." + std::to_string(l) + ".";
    auto att = multi_head_attention(tape, params, p + "self_", x, x, cfg.heads);
    x = norm(tape, params, p + "ln1", x + dropout.apply(att));
    x = norm(tape, params, p + "ln2", x + dropout.apply(feed_forward(tape, params, p, x)));
  }
  return x;
}

template <typename S>
nd::Var<S> attentive_vector(const nd::Var<S>& e, const nd::Var<S>& c) {
  if (e.rows() != 1 || e.cols() != c.cols())
    throw nd::DimensionError("attentive_vector: " + nd::shape_str(e.value()) + " against " + nd::shape_str(c.value()));
  const S scale = S(1) / std::sqrt(static_cast<S>(e.cols()));
  auto alpha = nd::softmax_rows(nd::scale(nd::matmul_nt(e, c), scale));
  return nd::matmul(alpha, c);
}

template <typename S>
nd::Var<S> gated_fuse(nd::Tape<S>& tape, const nd::Var<S>& c, const nd::Var<S>& e, nd::Parameter<S>& wf,
                      nd::Parameter<S>& wg) {
  auto ce = nd::concat_cols({c, e});
  auto f = nd::tanh(nd::matmul_nt(ce, tape.param(wf)));
  auto g = nd::sigmoid(nd::matmul_nt(ce, tape.param(wg)));
  return nd::mul(g, f) + nd::mul(nd::one_minus(g), e);
}

template <typename S>
BasicEncoderOutput<S> augment_fact(nd::Tape<S>& tape, BasicModelParams<S>& params, const EncodedExample& ex,
                                   const Dropout& dropout) {
  const auto& cfg = params.config();
  const std::array<int, 3> atoms{ex.fact.subject, ex.fact.predicate, ex.fact.object};
  BasicEncoderOutput<S> out;
  out.kb_rows = nd::gather_rows(tape, params["kb_emb"], atoms);
  if (!cfg.fusion && !cfg.ctx_copy) {
    out.fact = out.kb_rows;
    return out;
  }
  for (int s = 0; s < 3; ++s)
    out.contexts[static_cast<std::size_t>(s)] =
        encode_context(tape, params, ex.context_ids[static_cast<std::size_t>(s)], static_cast<Segment>(s), dropout);
  if (!cfg.fusion) {
    out.fact = out.kb_rows;
    return out;
  }
  std::array<nd::Var<S>, 3> rows;
  for (int s = 0; s < 3; ++s) {
    auto e = nd::slice_rows(out.kb_rows, s, 1);
    auto c = attentive_vector(e, out.contexts[static_cast<std::size_t>(s)]);
    rows[static_cast<std::size_t>(s)] = gated_fuse(tape, c, e, params["fusion.wf"], params["fusion.wg"]);
  }
  out.fact = nd::concat_rows<S>(rows);
  return out;
}

#define KBQG_INSTANTIATE(S)                                                                                        \
  template nd::Var<S> multi_head_attention(nd::Tape<S>&, BasicModelParams<S>&, const std::string&,                 \
                                           const nd::Var<S>&, const nd::Var<S>&, int, const nd::Mask*,             \
                                           std::vector<nd::Matrix<S>>*);                                           \
  template nd::Var<S> feed_forward(nd::Tape<S>&, BasicModelParams<S>&, const std::string&, const nd::Var<S>&);     \
  template nd::Var<S> norm(nd::Tape<S>&, BasicModelParams<S>&, const std::string&, const nd::Var<S>&);             \
  template nd::Var<S> encode_context(nd::Tape<S>&, BasicModelParams<S>&, std::span<const int>, Segment,            \
                                     const Dropout&);                                                              \
  template nd::Var<S> attentive_vector(const nd::Var<S>&, const nd::Var<S>&);                                      \
  template nd::Var<S> gated_fuse(nd::Tape<S>&, const nd::Var<S>&, const nd::Var<S>&, nd::Parameter<S>&,            \
                                 nd::Parameter<S>&);                                                               \
  template BasicEncoderOutput<S> augment_fact(nd::Tape<S>&, BasicModelParams<S>&, const EncodedExample&,           \
                                              const Dropout&);

KBQG_INSTANTIATE(double)
KBQG_INSTANTIATE(long double)
#undef KBQG_INSTANTIATE

int load_word_vectors(const std::filesystem::path& file, const Vocab& vocab, Mat& table) {
  std::ifstream in(file);
  if (!in) throw IngestError("cannot open word vectors " + file.string());
  std::string line;
  int replaced = 0;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tok;
    if (!(ss >> tok)) continue;
    std::vector<double> vals;
    double v;
    while (ss >> v) vals.push_back(v);
    if (static_cast<Eigen::Index>(vals.size()) != table.cols())
      throw IngestError(file.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(table.cols()) +
                        " values, got " + std::to_string(vals.size()));
    auto id = vocab.find(tok);
    if (!id) continue;
    for (Eigen::Index j = 0; j < table.cols(); ++j) table(*id, j) = vals[static_cast<std::size_t>(j)];
    ++replaced;
  }
  return replaced;
}

}  // namespace kbqg
