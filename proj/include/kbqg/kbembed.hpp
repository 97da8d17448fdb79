#pragma once

// KB embedding table: random initialization, TransE pretraining, lookup and
// a text checkpoint.

#include "kbqg/corpus.hpp"
#include "kbqg/numdiff.hpp"

#include <cstdint>
#include <filesystem>

namespace kbqg {

struct KBEmbeddingMatrix {
  nd::Matrix<double> table;
  bool pretrained = false;

  Eigen::Index k() const { return table.rows(); }
  Eigen::Index d() const { return table.cols(); }
};

inline constexpr double kKbInit = 0.08;

KBEmbeddingMatrix init_random(int k, int d, std::uint64_t seed);

struct TransEOptions {
  int d = 32;
  double margin = 1.0;
  double lr = 0.01;
  int epochs = 50;
  int neg_per_pos = 1;
  std::uint64_t seed = 1;
};

struct TransEResult {
  KBEmbeddingMatrix embedding;
  std::vector<double> epoch_loss;
};

/// SGD on the margin loss with one corrupted head or tail per negative.
/// Rows [0, n_entities) are entities (normalized to unit length after each
/// epoch); the remaining rows are predicates (left free). The starting
/// point is init_random(k, d, seed).
TransEResult pretrain_transe(const std::vector<Fact>& triples, int k, int n_entities, const TransEOptions& opts);

/// ||e_s + e_p - e_o||_2.
double transe_distance(const nd::Matrix<double>& table, const Fact& f);

struct FactRows {
  Eigen::RowVectorXd subject;
  Eigen::RowVectorXd predicate;
  Eigen::RowVectorXd object;
};

FactRows lookup(const Fact& fact, const KBEmbeddingMatrix& table);

void save_kb(const KBEmbeddingMatrix& m, std::ostream& out);
KBEmbeddingMatrix load_kb_embedding(std::istream& in);
void save_kb(const KBEmbeddingMatrix& m, const std::filesystem::path& file);
KBEmbeddingMatrix load_kb_embedding(const std::filesystem::path& file);

}  // namespace kbqg
