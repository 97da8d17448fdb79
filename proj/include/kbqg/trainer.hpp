#pragma once

// RMSProp, gradient clipping, the epoch loop with validation-driven model
// selection, and the ablation grid.

#include "kbqg/config.hpp"
#include "kbqg/decoder.hpp"
#include "kbqg/gradcheck.hpp"
#include "kbqg/metrics.hpp"
#include "kbqg/objective.hpp"

#include <iosfwd>
#include <map>
#include <random>

namespace kbqg {

class RmsProp {
 public:
  static constexpr double kRho = 0.9;
  static constexpr double kEps = 1e-8;

  /// v <- rho v + (1 - rho) g^2; theta <- theta - lr g / (sqrt(v) + eps);
  /// then zeroes every gradient. Frozen parameters are skipped.
  void step(ParamStore& params, double lr);

  std::map<std::string, Mat>& accumulators() { return v_; }
  const std::map<std::string, Mat>& accumulators() const { return v_; }

 private:
  std::map<std::string, Mat> v_;
};

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_gradients(ParamStore& params, double max_norm);

/// lr0 * decay^epochs.
double learning_rate(const TrainConfig& cfg, int epochs_done);

struct PreparedSplit {
  std::vector<Example> examples;
  std::vector<EncodedExample> encoded;
  std::vector<Tokens> references;
};

/// A dataset in model index space for one configuration.
struct Prepared {
  const KnowledgeBase* kb = nullptr;
  Vocab vocab;
  PreparedSplit train, valid, test;

  const PreparedSplit& split(std::string_view name) const;
};

Prepared prepare(const Dataset& data, const TrainConfig& cfg);

/// All facts of every split, for KB embedding pretraining.
std::vector<Fact> all_facts(const Dataset& data);

struct Generation {
  Fact fact;
  Tokens tokens;  // realized question tokens
  std::string modes;
};

/// Decodes every example of a split (greedy when beam == 1).
std::vector<Generation> generate(ModelParams& params, const Prepared& data, const PreparedSplit& split, int max_len,
                                 int beam);

/// Realized tokens: the placeholder expands to the subject name.
Tokens realize_tokens(const Tokens& tokens, const Tokens& subject_name);

EvalReport evaluate_generations(const std::vector<Generation>& gens, const PreparedSplit& split);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double valid_bleu4 = 0.0;
  bool validated = false;
};

using Snapshot = std::map<std::string, Mat>;

Snapshot snapshot(const ParamStore& params);
void restore(ParamStore& params, const Snapshot& s);

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const Prepared& data, const std::vector<Fact>& kb_facts);

  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  RmsProp& optimizer() { return opt_; }
  std::mt19937_64& rng() { return rng_; }
  const TrainConfig& config() const { return cfg_; }
  int epochs_done() const { return epoch_; }
  void set_epochs_done(int e) { epoch_ = e; }

  /// One pass over the training split; returns the mean total loss.
  double train_epoch();

  /// Gradient of the batch-mean total loss over `examples` (grads are
  /// accumulated into the parameters, not zeroed first). Returns the mean.
  double accumulate_batch(std::span<const std::size_t> examples);

  double split_bleu4(const PreparedSplit& split);

  /// Runs the remaining epochs, logging each as epoch<TAB>loss<TAB>bleu and
  /// restoring the best validation snapshot at the end.
  std::vector<EpochLog> run(std::ostream* log = nullptr);

  bool diverged() const { return diverged_; }
  int best_epoch() const { return best_epoch_; }
  double best_bleu4() const { return best_bleu_; }

 private:
  TrainConfig cfg_;
  const Prepared& data_;
  ModelParams params_;
  RmsProp opt_;
  std::mt19937_64 rng_;
  int epoch_ = 0;
  bool diverged_ = false;
  int best_epoch_ = 0;
  double best_bleu_ = -1.0;
};

inline constexpr int kProbeKbSize = 9;

/// A synthetic example in index space: contexts of `context_len` tokens
/// each (with a repeated token and one token outside the vocabulary), a
/// target using the placeholder and a copied token, two answer words.
/// Valid for a model with kProbeKbSize KB rows.
EncodedExample probe_example(int vocab_size, int context_len, std::uint64_t seed);

/// Finite-difference check of the total loss of the full model on
/// probe_example(vocab_size, context_len, cfg.seed). Dropout is off.
nd::GradCheckResult model_gradcheck(const TrainConfig& cfg, int vocab_size, int context_len,
                                    std::size_t max_coords_per_param = 0, double eps = 1e-5);

struct GridCell {
  double lambda = kDefaultLambda;
  bool transe = false;
  std::uint64_t seed = 1;
  Ablation ablation = Ablation::None;
};

/// "key=v1,v2;key=..." over lambda, transe, seed and ablation; absent keys
/// keep the base configuration's value.
std::vector<GridCell> parse_grid(const std::string& spec, const TrainConfig& base);

struct GridResult {
  GridCell cell;
  double valid_bleu4 = 0.0;
  EvalReport test;
};

GridResult run_cell(const TrainConfig& base, const GridCell& cell, const Dataset& data);

/// Aligned table plus one "cell<TAB>metric<TAB>value" line per result.
void write_grid_report(const std::vector<GridResult>& results, std::ostream& out);

}  // namespace kbqg
