#pragma once

// Training configuration: key=value text, overrides and ablation switches.

#include "kbqg/corpus.hpp"
#include "kbqg/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>

namespace kbqg {

enum class Ablation { None, NoCtxCopy, NoKbCopy, NoAnswerLoss, NoDiverseContext, NoFusion };

Ablation parse_ablation(const std::string& s);
std::string to_string(Ablation a);

struct TrainConfig {
  double lr = 0.001;
  double decay = 0.97;
  int batch = 16;
  int epochs = 30;
  double lambda = 0.2;
  std::uint64_t seed = 1;
  int d = 32;
  int heads = 2;
  int layers = 2;
  double dropout = 0.1;
  double clip = 5.0;
  bool transe = false;
  bool freeze_kb = false;
  int transe_epochs = 100;
  double transe_margin = 1.0;
  double transe_lr = 0.01;
  Ablation ablation = Ablation::None;
  int min_count = 2;
  int max_len = 20;
  int beam = 1;
  /// Epochs without validation improvement before stopping; 0 disables.
  int patience = 0;
  /// Validate every n epochs (the final epoch is always validated).
  int eval_every = 1;
  /// Soft-min temperature for the answer loss; 0 keeps the hard min.
  double softmin_tau = 0.0;
  std::string word_vectors;

  ModelConfig model() const;
  PrepareOptions prepare() const;
  double effective_lambda() const { return ablation == Ablation::NoAnswerLoss ? 0.0 : lambda; }

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// Sets one key; unknown keys and malformed values raise ConfigError.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);

TrainConfig parse_config(std::istream& in);
TrainConfig load_config(const std::filesystem::path& file);

/// Canonical key=value text (every key, fixed order).
std::string config_text(const TrainConfig& cfg);

/// FNV-1a of config_text.
std::uint64_t config_hash(const TrainConfig& cfg);

}  // namespace kbqg
