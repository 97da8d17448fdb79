#include "kbqg/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kbqg {

Mat position_encoding(Eigen::Index n, Eigen::Index d) {
  Mat pe(n, d);
  for (Eigen::Index pos = 0; pos < n; ++pos)
    for (Eigen::Index i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double a = static_cast<double>(pos) * rate;
      pe(pos, i) = (i % 2 == 0) ? std::sin(a) : std::cos(a);
    }
  return pe;
}

template <typename S>
nd::Var<S> decode_states(nd::Tape<S>& tape, BasicModelParams<S>& params, std::span<const int> prev_ids,
                         const nd::Var<S>& fact, const Dropout& dropout) {
  if (prev_ids.empty()) throw nd::ContractError("decode_states: empty input");
  if (prev_ids.front() != kBos) throw nd::ContractError("decode_states: input must start with BOS");
  const auto& cfg = params.config();
  const auto n = static_cast<Eigen::Index>(prev_ids.size());
  auto x = nd::scale(nd::gather_rows(tape, params["word_emb"], prev_ids), static_cast<S>(embedding_scale(cfg.d))) +
           tape.constant(position_encoding(n, cfg.d).template cast<S>());
  x = dropout.apply(x);
  const nd::Mask causal = nd::causal_mask(n);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "dec." + std::to_string(l) + ".";
    auto self = multi_head_attention(tape, params, p + "self_", x, x, cfg.heads, &causal);
    x = norm(tape, params, p + "ln1", x + dropout.apply(self));
    auto fa = multi_head_attention(tape, params, p + "fact_", x, fact, cfg.heads);
    x = norm(tape, params, p + "ln2", x + dropout.apply(fa));
    x = norm(tape, params, p + "ln3", x + dropout.apply(feed_forward(tape, params, p, x)));
  }
  return x;
}

template <typename S>
nd::Var<S> mode_switch(nd::Tape<S>& tape, BasicModelParams<S>& params, const nd::Var<S>& states,
                       const nd::Var<S>& prev_emb) {
  const auto& cfg = params.config();
  auto logits = nd::matmul_nt(nd::concat_cols({states, prev_emb}), tape.param(params["out.w_mode"]));
  auto h = nd::relu(nd::add_row(nd::matmul_nt(states, tape.param(params["out.kb_w1"])), tape.param(params["out.kb_b1"])));
  auto kb = nd::add_row(nd::matmul_nt(h, tape.param(params["out.kb_w2"])), tape.param(params["out.kb_b2"]));
  const int kb_col = kCopyKb;
  logits = logits + nd::scatter_cols(kb, std::span<const int>(&kb_col, 1), 3);
  nd::Mask allowed = nd::Mask::Constant(states.rows(), 3, true);
  if (!cfg.kb_copy) allowed.col(kCopyKb).setConstant(false);
  if (!cfg.ctx_copy) allowed.col(kCopyContext).setConstant(false);
  return nd::masked_softmax_rows(logits, allowed);
}

template <typename S>
nd::Var<S> p_vocab(nd::Tape<S>& tape, BasicModelParams<S>& params, const nd::Var<S>& states) {
  auto logits = nd::matmul_nt(states, tape.param(params["word_emb"]));
  nd::Mask allowed = nd::Mask::Constant(logits.rows(), logits.cols(), true);
  for (int banned : {kPad, kBos, kSubj}) allowed.col(banned).setConstant(false);
  return nd::masked_softmax_rows(logits, allowed);
}

template <typename S>
nd::Var<S> p_ctxcopy(nd::Tape<S>& tape, BasicModelParams<S>& params, const nd::Var<S>& states,
                     const nd::Var<S>& keys, const CopySource& source) {
  if (source.size() == 0) throw nd::ContractError("p_ctxcopy: empty copy source");
  if (static_cast<std::size_t>(keys.rows()) != source.size())
    throw nd::DimensionError("p_ctxcopy: " + std::to_string(keys.rows()) + " keys for " +
                             std::to_string(source.size()) + " positions");
  auto query = nd::matmul_nt(states, tape.param(params["out.w_ctx"]));
  auto pos = nd::softmax_rows(nd::matmul_nt(query, keys));
  return nd::normalize_rows(nd::group_max_cols(pos, source.group, source.n_groups()));
}

template <typename S>
nd::Var<S> mix(const nd::Var<S>& modes, const nd::Var<S>& p_gen, const nd::Var<S>* p_ctx, const CopySource& source,
               int vocab_size, int ext_size) {
  if (p_gen.cols() != vocab_size) throw nd::DimensionError("mix: generation distribution width");
  std::vector<nd::Var<S>> parts{nd::scale_rows(p_gen, nd::slice_cols(modes, kGenerate, 1)),
                                nd::slice_cols(modes, kCopyKb, 1)};
  std::vector<int> targets(static_cast<std::size_t>(vocab_size));
  std::iota(targets.begin(), targets.end(), 0);
  targets.push_back(kSubj);
  if (p_ctx) {
    parts.push_back(nd::scale_rows(*p_ctx, nd::slice_cols(modes, kCopyContext, 1)));
    targets.insert(targets.end(), source.group_ext.begin(), source.group_ext.end());
  }
  return nd::scatter_cols(nd::concat_cols<S>(parts), targets, ext_size);
}

template <typename S>
BasicStepOutputs<S> step_outputs(nd::Tape<S>& tape, BasicModelParams<S>& params, const EncodedExample& ex,
                                 const BasicEncoderOutput<S>& enc, std::span<const int> prev_ids,
                                 const Dropout& dropout) {
  BasicStepOutputs<S> out;
  auto states = decode_states(tape, params, prev_ids, enc.fact, dropout);
  auto prev_emb = nd::gather_rows(tape, params["word_emb"], prev_ids);
  out.modes = mode_switch(tape, params, states, prev_emb);
  out.p_gen = p_vocab(tape, params, states);
  if (params.config().ctx_copy) {
    auto keys = nd::concat_rows<S>(enc.contexts);
    out.p_ctx = p_ctxcopy(tape, params, states, keys, ex.copy);
    out.has_ctx = true;
  }
  out.dist = mix(out.modes, out.p_gen, out.has_ctx ? &out.p_ctx : nullptr, ex.copy, ex.vocab_size, ex.ext_size());
  return out;
}

template <typename S>
BasicStepOutputs<S> teacher_forced(nd::Tape<S>& tape, BasicModelParams<S>& params, const EncodedExample& ex,
                                   const Dropout& dropout) {
  auto enc = augment_fact(tape, params, ex, dropout);
  return step_outputs(tape, params, ex, enc, ex.decoder_input, dropout);
}

#define KBQG_INSTANTIATE(S)                                                                                        \
  template nd::Var<S> decode_states(nd::Tape<S>&, BasicModelParams<S>&, std::span<const int>, const nd::Var<S>&,   \
                                    const Dropout&);                                                               \
  template nd::Var<S> mode_switch(nd::Tape<S>&, BasicModelParams<S>&, const nd::Var<S>&, const nd::Var<S>&);       \
  template nd::Var<S> p_vocab(nd::Tape<S>&, BasicModelParams<S>&, const nd::Var<S>&);                              \
  template nd::Var<S> p_ctxcopy(nd::Tape<S>&, BasicModelParams<S>&, const nd::Var<S>&, const nd::Var<S>&,          \
                                const CopySource&);                                                                \
  template nd::Var<S> mix(const nd::Var<S>&, const nd::Var<S>&, const nd::Var<S>*, const CopySource&, int, int);   \
  template BasicStepOutputs<S> step_outputs(nd::Tape<S>&, BasicModelParams<S>&, const EncodedExample&,             \
                                            const BasicEncoderOutput<S>&, std::span<const int>, const Dropout&);   \
  template BasicStepOutputs<S> teacher_forced(nd::Tape<S>&, BasicModelParams<S>&, const EncodedExample&,           \
                                              const Dropout&);

KBQG_INSTANTIATE(double)
KBQG_INSTANTIATE(long double)
#undef KBQG_INSTANTIATE

namespace {

char mode_label(const StepOutputs& s, Eigen::Index row, int ext, const EncodedExample& ex) {
  const auto& m = s.modes.value();
  double g = ext < ex.vocab_size ? m(row, kGenerate) * s.p_gen.value()(row, ext) : 0.0;
  double k = ext == kSubj ? m(row, kCopyKb) : 0.0;
  double c = 0.0;
  if (s.has_ctx) {
    auto it = std::find(ex.copy.group_ext.begin(), ex.copy.group_ext.end(), ext);
    if (it != ex.copy.group_ext.end())
      c = m(row, kCopyContext) * s.p_ctx.value()(row, it - ex.copy.group_ext.begin());
  }
  if (g >= k && g >= c) return 'g';
  return k >= c ? 'k' : 'c';
}

/// Incremental decoding context: the encoder runs once, each step reruns
/// the decoder over the prefix on a non-recording tape.
class StepRunner {
 public:
  StepRunner(ModelParams& params, const EncodedExample& ex) : params_(params), ex_(ex), tape_(false) {
    enc_ = augment_fact(tape_, params_, ex_);
  }

  StepOutputs last(const std::vector<int>& prefix_ext) {
    std::vector<int> in;
    in.reserve(prefix_ext.size() + 1);
    in.push_back(kBos);
    for (int e : prefix_ext) in.push_back(ex_.input_id(e));
    return step_outputs(tape_, params_, ex_, enc_, in);
  }

 private:
  ModelParams& params_;
  const EncodedExample& ex_;
  Tape tape_;
  EncoderOutput enc_;
};

int argmax_row(const Mat& m, Eigen::Index row) {
  int best = 0;
  for (Eigen::Index j = 1; j < m.cols(); ++j)
    if (m(row, j) > m(row, best)) best = static_cast<int>(j);
  return best;
}

}  // namespace

Decoded greedy_decode(ModelParams& params, const EncodedExample& ex, int max_len) {
  StepRunner run(params, ex);
  Decoded out;
  for (int t = 0; t < max_len; ++t) {
    StepOutputs s = run.last(out.ids);
    const Eigen::Index row = s.dist.rows() - 1;
    const int tok = argmax_row(s.dist.value(), row);
    out.log_prob += std::log(std::max(s.dist.value()(row, tok), nd::kProbFloor));
    if (tok == kEos) break;
    out.ids.push_back(tok);
    out.modes.push_back(mode_label(s, row, tok, ex));
  }
  return out;
}

namespace {

struct Hyp {
  Decoded d;
  bool done = false;
  int length() const { return static_cast<int>(d.ids.size()) + (done ? 1 : 0); }
  double score() const { return d.log_prob / std::max(1, length()); }
};

}  // namespace

Decoded beam_decode(ModelParams& params, const EncodedExample& ex, int max_len, int beam_width) {
  if (beam_width < 1) throw nd::ContractError("beam_decode: width must be positive");
  StepRunner run(params, ex);
  std::vector<Hyp> alive(1);
  std::vector<Hyp> finished;
  for (int t = 0; t < max_len && !alive.empty(); ++t) {
    std::vector<Hyp> cand;
    for (const auto& h : alive) {
      StepOutputs s = run.last(h.d.ids);
      const Eigen::Index row = s.dist.rows() - 1;
      const Mat& p = s.dist.value();
      std::vector<int> order(static_cast<std::size_t>(p.cols()));
      std::iota(order.begin(), order.end(), 0);
      const auto k = std::min<std::size_t>(static_cast<std::size_t>(beam_width), order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [&](int a, int b) { return p(row, a) > p(row, b) || (p(row, a) == p(row, b) && a < b); });
      for (std::size_t i = 0; i < k; ++i) {
        Hyp n = h;
        const int tok = order[i];
        n.d.log_prob += std::log(std::max(p(row, tok), nd::kProbFloor));
        if (tok == kEos) {
          n.done = true;
        } else {
          n.d.ids.push_back(tok);
          n.d.modes.push_back(mode_label(s, row, tok, ex));
        }
        cand.push_back(std::move(n));
      }
    }
    std::stable_sort(cand.begin(), cand.end(), [](const Hyp& a, const Hyp& b) { return a.score() > b.score(); });
    alive.clear();
    for (auto& c : cand) {
      if (static_cast<int>(alive.size() + finished.size()) >= beam_width) break;
      (c.done ? finished : alive).push_back(std::move(c));
    }
    if (static_cast<int>(finished.size()) >= beam_width) break;
  }
  const auto& pool = finished.empty() ? alive : finished;
  auto best = std::max_element(pool.begin(), pool.end(),
                               [](const Hyp& a, const Hyp& b) { return a.score() < b.score(); });
  return best->d;
}

Tokens decoded_tokens(const Decoded& d, const EncodedExample& ex, const Vocab& vocab) {
  Tokens out;
  out.reserve(d.ids.size());
  for (int id : d.ids) out.push_back(ext_token(ex, vocab, id));
  return out;
}

std::string surface_realize(const Tokens& tokens, const Tokens& subject_name) {
  Tokens out;
  for (const auto& t : tokens) {
    if (t == kSubjToken)
      out.insert(out.end(), subject_name.begin(), subject_name.end());
    else
      out.push_back(t);
  }
  return join(out);
}

}  // namespace kbqg
