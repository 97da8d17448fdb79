#pragma once

// Deterministic desk-scale stand-in for a KB question corpus.
//
// Entities belong to kinds (a broad frequent type plus a refined notable
// type); kind frequencies within a family fall off as 1/rank, so some kind
// words are rare. Each predicate links a subject family to several object
// kinds, mostly of one family, and owns a question template. Three template
// styles are generated:
//  - typed:     the question names the object's notable type ("which city ...")
//  - ambiguous: the typed wording for most questions, a generic noun
//               ("which place ...") for the rest
//  - untyped:   literal-valued objects whose type words never occur in
//               questions ("when was ... released ?")
// Every kind and family also exists as a KB node; background triples link
// each entity to both, so KB embeddings can learn entity types.

#include "kbqg/corpus.hpp"

#include <cstdint>
#include <filesystem>

namespace kbqg {

struct SynthCorpus {
  std::vector<EntityRecord> entities;
  std::vector<PredicateRecord> predicates;
  std::vector<RawFact> train;
  std::vector<RawFact> valid;
  std::vector<RawFact> test;
  std::vector<RawFact> background;
};

struct SynthOptions {
  std::uint64_t seed = 1;
  int n_entities = 400;
  int n_predicates = 32;
  int n_facts = 1000;
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
};

SynthCorpus synth_corpus(const SynthOptions& opts);

/// Writes entities.tsv, predicates.tsv, train.tsv, valid.tsv, test.tsv, kb.tsv.
void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir);

/// In-memory equivalent of write_corpus followed by load_dataset.
Dataset to_dataset(const SynthCorpus& corpus);

}  // namespace kbqg
