#include "kbqg/kbembed.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace kbqg {

namespace {

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Training draws use a stream separate from initialization so that zero
// epochs reproduce init_random exactly.
constexpr std::uint64_t kTrainStream = 0x9e3779b97f4a7c15ULL;

}  // namespace

KBEmbeddingMatrix init_random(int k, int d, std::uint64_t seed) {
  if (k < 1 || d < 1) throw nd::ContractError("init_random: k and d must be positive");
  std::mt19937_64 rng(seed);
  KBEmbeddingMatrix m;
  m.table.resize(k, d);
  for (Eigen::Index i = 0; i < m.table.size(); ++i) m.table.data()[i] = (2.0 * unit(rng) - 1.0) * kKbInit;
  return m;
}

double transe_distance(const nd::Matrix<double>& table, const Fact& f) {
  return (table.row(f.subject) + table.row(f.predicate) - table.row(f.object)).norm();
}

TransEResult pretrain_transe(const std::vector<Fact>& triples, int k, int n_entities, const TransEOptions& opts) {
  if (triples.empty()) throw nd::ContractError("pretrain_transe: no triples");
  if (opts.margin <= 0.0) throw ConfigError("pretrain_transe: margin must be positive");
  if (opts.lr <= 0.0 || opts.epochs < 0 || opts.neg_per_pos < 1)
    throw ConfigError("pretrain_transe: invalid lr, epochs or negatives");
  if (n_entities < 2 || n_entities > k) throw nd::ContractError("pretrain_transe: need at least two entities");
  for (const auto& f : triples)
    if (f.subject >= n_entities || f.object >= n_entities || f.predicate < n_entities || f.predicate >= k)
      throw nd::IndexError("pretrain_transe: triple ids outside the entity/predicate blocks");

  TransEResult res;
  res.embedding = init_random(k, opts.d, opts.seed);
  auto& e = res.embedding.table;
  std::mt19937_64 rng(opts.seed ^ kTrainStream);
  std::vector<std::size_t> order(triples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t idx : order) {
      const Fact& pos = triples[idx];
      for (int n = 0; n < opts.neg_per_pos; ++n) {
        Fact neg = pos;
        const bool head = unit(rng) < 0.5;
        int& slot = head ? neg.subject : neg.object;
        const int original = slot;
        do {
          slot = static_cast<int>(rng() % static_cast<std::uint64_t>(n_entities));
        } while (slot == original);

        const Eigen::RowVectorXd dp = e.row(pos.subject) + e.row(pos.predicate) - e.row(pos.object);
        const Eigen::RowVectorXd dn = e.row(neg.subject) + e.row(neg.predicate) - e.row(neg.object);
        const double np = dp.norm();
        const double nn = dn.norm();
        const double loss = opts.margin + np - nn;
        if (loss <= 0.0) continue;
        total += loss;
        const Eigen::RowVectorXd gp = np > 0.0 ? Eigen::RowVectorXd(dp / np) : Eigen::RowVectorXd::Zero(dp.size());
        const Eigen::RowVectorXd gn = nn > 0.0 ? Eigen::RowVectorXd(dn / nn) : Eigen::RowVectorXd::Zero(dn.size());
        e.row(pos.subject) -= opts.lr * gp;
        e.row(pos.predicate) -= opts.lr * gp;
        e.row(pos.object) += opts.lr * gp;
        e.row(neg.subject) += opts.lr * gn;
        e.row(neg.predicate) += opts.lr * gn;
        e.row(neg.object) -= opts.lr * gn;
      }
    }
    for (int i = 0; i < n_entities; ++i) {
      const double nrm = e.row(i).norm();
      if (nrm > 0.0) e.row(i) /= nrm;
    }
    res.epoch_loss.push_back(total);
  }
  res.embedding.pretrained = true;
  return res;
}

FactRows lookup(const Fact& fact, const KBEmbeddingMatrix& m) {
  for (int id : {fact.subject, fact.predicate, fact.object})
    if (id < 0 || id >= m.k()) throw nd::IndexError("lookup: id " + std::to_string(id) + " outside table of " +
                                                   std::to_string(m.k()) + " rows");
  return {m.table.row(fact.subject), m.table.row(fact.predicate), m.table.row(fact.object)};
}

void save_kb(const KBEmbeddingMatrix& m, std::ostream& out) {
  out << "kbembed " << m.k() << ' ' << m.d() << ' ' << (m.pretrained ? 1 : 0) << '\n';
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < m.k(); ++i) {
    for (Eigen::Index j = 0; j < m.d(); ++j) out << (j ? " " : "") << m.table(i, j);
    out << '\n';
  }
}

KBEmbeddingMatrix load_kb_embedding(std::istream& in) {
  std::string magic;
  Eigen::Index k = 0, d = 0;
  int flag = 0;
  if (!(in >> magic >> k >> d >> flag) || magic != "kbembed" || k < 1 || d < 1 || (flag != 0 && flag != 1))
    throw IngestError("kb checkpoint: bad header");
  KBEmbeddingMatrix m;
  m.pretrained = flag == 1;
  m.table.resize(k, d);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      std::string tok;
      if (!(in >> tok)) throw IngestError("kb checkpoint: truncated at row " + std::to_string(i));
      m.table(i, j) = std::strtod(tok.c_str(), nullptr);
    }
  }
  return m;
}

void save_kb(const KBEmbeddingMatrix& m, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw IngestError("cannot write " + file.string());
  save_kb(m, out);
}

KBEmbeddingMatrix load_kb_embedding(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IngestError("cannot open " + file.string());
  return load_kb_embedding(in);
}

}  // namespace kbqg
