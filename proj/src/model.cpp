#include "kbqg/model.hpp"

#include <cmath>
#include <unordered_map>

namespace kbqg {

template <typename S>
nd::Var<S> Dropout::apply(const nd::Var<S>& x) const {
  if (!active()) return x;
  nd::Matrix<S> mask(x.rows(), x.cols());
  const double keep = 1.0 - rate;
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    const double u = static_cast<double>((*rng)() >> 11) * 0x1.0p-53;
    mask.data()[i] = static_cast<S>(u < keep ? 1.0 / keep : 0.0);
  }
  return nd::mask_mul(x, mask);
}

template nd::Var<double> Dropout::apply(const nd::Var<double>&) const;
template nd::Var<long double> Dropout::apply(const nd::Var<long double>&) const;

Mat uniform_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m.data()[i] = (2.0 * u - 1.0) * bound;
  }
  return m;
}

namespace {

constexpr double kEmbeddingInit = 0.08;

double glorot(Eigen::Index fan_in, Eigen::Index fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace

template <typename S>
BasicModelParams<S>::BasicModelParams(const ModelConfig& cfg, int vocab_size, int kb_size, std::uint64_t seed)
    : cfg_(cfg), vocab_size_(vocab_size), kb_size_(kb_size) {
  if (cfg.d < 2 || cfg.heads < 1 || cfg.d % cfg.heads != 0)
    throw nd::ContractError("model: d must be a positive multiple of heads");
  if (cfg.layers < 1) throw nd::ContractError("model: need at least one layer");
  if (vocab_size <= kNumSpecial || kb_size < 1) throw nd::ContractError("model: empty vocabulary");

  std::mt19937_64 rng(seed);
  const Eigen::Index d = cfg.d;
  const Eigen::Index ff = static_cast<Eigen::Index>(cfg.ff_mult) * d;
  auto dense = [&](const std::string& name, Eigen::Index in, Eigen::Index out) {
    store_.add(name, uniform_matrix(rng, in, out, glorot(in, out)).cast<S>());
  };
  auto norm = [&](const std::string& prefix) {
    store_.add(prefix + "_g", nd::Matrix<S>::Ones(1, d));
    store_.add(prefix + "_b", nd::Matrix<S>::Zero(1, d));
  };
  auto attention = [&](const std::string& prefix) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) dense(prefix + w, d, d);
  };
  auto feed_forward = [&](const std::string& prefix) {
    dense(prefix + "ff_w1", d, ff);
    store_.add(prefix + "ff_b1", nd::Matrix<S>::Zero(1, ff));
    dense(prefix + "ff_w2", ff, d);
    store_.add(prefix + "ff_b2", nd::Matrix<S>::Zero(1, d));
  };

  store_.add("word_emb", uniform_matrix(rng, vocab_size, d, kEmbeddingInit).cast<S>());
  store_.add("segment_emb", uniform_matrix(rng, 3, d, kEmbeddingInit).cast<S>());
  store_.add("kb_emb", uniform_matrix(rng, kb_size, d, kEmbeddingInit).cast<S>());

  norm("enc.emb_ln");
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "enc." + std::to_string(l) + ".";
    attention(p + "self_");
    norm(p + "ln1");
    feed_forward(p);
    norm(p + "ln2");
  }
  store_.add("fusion.wf", uniform_matrix(rng, d, 2 * d, glorot(2 * d, d)).cast<S>());
  store_.add("fusion.wg", uniform_matrix(rng, d, 2 * d, glorot(2 * d, d)).cast<S>());

  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "dec." + std::to_string(l) + ".";
    attention(p + "self_");
    norm(p + "ln1");
    attention(p + "fact_");
    norm(p + "ln2");
    feed_forward(p);
    norm(p + "ln3");
  }
  const Eigen::Index half = std::max<Eigen::Index>(1, d / 2);
  store_.add("out.w_mode", uniform_matrix(rng, 3, 2 * d, glorot(2 * d, 3)).cast<S>());
  store_.add("out.kb_w1", uniform_matrix(rng, half, d, glorot(d, half)).cast<S>());
  store_.add("out.kb_b1", nd::Matrix<S>::Zero(1, half));
  store_.add("out.kb_w2", uniform_matrix(rng, 1, half, glorot(half, 1)).cast<S>());
  store_.add("out.kb_b2", nd::Matrix<S>::Zero(1, 1));
  store_.add("out.w_ctx", uniform_matrix(rng, d, d, glorot(d, d)).cast<S>());
}

template <typename S>
void BasicModelParams<S>::set_kb_table(const Mat& table, bool frozen) {
  auto& kb = store_.at("kb_emb");
  if (table.rows() != kb.value.rows() || table.cols() != kb.value.cols())
    throw nd::DimensionError("set_kb_table: " + nd::shape_str(table) + " vs " + nd::shape_str(kb.value));
  kb.value = table.cast<S>();
  kb.frozen = frozen;
}

template class BasicModelParams<double>;
template class BasicModelParams<long double>;

// ---------------------------------------------------------------- encoding

EncodedExample encode_example(const Example& ex, const Vocab& vocab) {
  EncodedExample out;
  out.fact = ex.fact;
  out.vocab_size = vocab.size();
  std::unordered_map<std::string, int> oov_index;
  auto ext_of = [&](const std::string& tok, bool allocate) {
    if (auto id = vocab.find(tok)) return *id;
    auto it = oov_index.find(tok);
    if (it != oov_index.end()) return it->second;
    if (!allocate) return kUnk;
    const int id = vocab.size() + static_cast<int>(out.oov.size());
    out.oov.push_back(tok);
    oov_index.emplace(tok, id);
    return id;
  };

  std::unordered_map<int, int> group_of_ext;
  for (auto seg : {Segment::Subject, Segment::Predicate, Segment::Object}) {
    const auto& toks = ex.contexts.of(seg);
    auto& ids = out.context_ids[static_cast<std::size_t>(seg)];
    for (const auto& t : toks) {
      const int ext = ext_of(t, true);
      ids.push_back(out.input_id(ext));
      out.copy.input_ids.push_back(out.input_id(ext));
      out.copy.segments.push_back(seg);
      auto [it, fresh] = group_of_ext.emplace(ext, out.copy.n_groups());
      if (fresh) out.copy.group_ext.push_back(ext);
      out.copy.group.push_back(it->second);
    }
  }

  for (const auto& t : ex.question) out.target.push_back(ext_of(t, false));
  out.target.push_back(kEos);
  out.decoder_input.push_back(kBos);
  for (std::size_t i = 0; i + 1 < out.target.size(); ++i) out.decoder_input.push_back(out.input_id(out.target[i]));

  for (const auto& a : ex.answer_words) {
    auto id = vocab.find(a);
    if (id && *id >= kNumSpecial) out.answer_ids.push_back(*id);
  }
  return out;
}

const std::string& ext_token(const EncodedExample& ex, const Vocab& vocab, int ext) {
  if (ext < vocab.size()) return vocab.token(ext);
  const auto j = static_cast<std::size_t>(ext - vocab.size());
  if (j >= ex.oov.size()) throw std::out_of_range("extended id " + std::to_string(ext));
  return ex.oov[j];
}

}  // namespace kbqg
