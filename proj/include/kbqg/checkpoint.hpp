#pragma once

// Text checkpoint: configuration, vocabulary, named tensors, optimizer
// accumulators, epoch counter and generator state. Values are written with
// 17 significant digits so a reload is bit-exact.

#include "kbqg/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <random>

namespace kbqg {

struct Checkpoint {
  TrainConfig config;
  std::uint64_t config_hash = 0;
  int epoch = 0;
  Vocab vocab;
  std::map<std::string, Mat> tensors;
  std::map<std::string, Mat> accumulators;
  std::string rng_state;
};

Checkpoint make_checkpoint(const Trainer& trainer, const Vocab& vocab, const RmsProp& opt, std::mt19937_64& rng);

void write_checkpoint(const Checkpoint& c, std::ostream& out);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file);

/// Copies tensors into `params` (names and shapes must match exactly).
void apply_tensors(const Checkpoint& c, ParamStore& params);

/// Restores parameters, optimizer accumulators, epoch and generator state so
/// that training resumes on the same trajectory.
void resume(Trainer& trainer, const Checkpoint& c);

}  // namespace kbqg
