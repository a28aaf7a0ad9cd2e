#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "deftx/data.hpp"
#include "deftx/model.hpp"

namespace deftx {

// Shared structure of the synthetic world: one vocabulary for every
// language, with disjoint per-class marker sets plus per-class anchor
// tokens that co-occur with them. Chains differ per language; the class
// topology is the same everywhere, so the labeling rule is language
// independent while surface statistics are not.
struct SynthSpec {
  std::size_t vocab_size = 64;  // includes the reserved ids
  std::size_t n_classes = 3;
  std::size_t markers_per_class = 8;
  std::size_t anchors_per_class = 4;
  std::uint64_t chain_seed = 1234;
  std::size_t successors = 6;  // nonzero transitions per row of a sub-chain
  std::size_t min_sentence_len = 10;
  std::size_t max_sentence_len = 22;
  // Marker preference tiling: language l's unique chain links anchors to
  // the markers whose in-class index is congruent to l. The shared base
  // chain has no preference, so epsilon controls how language-specific
  // the surface forms of each class get.
  std::size_t preference_groups = 4;

  void validate() const;
  std::size_t content_count() const { return vocab_size - tokens::kFirstContent; }
  // class of a marker token, or -1
  int marker_class(std::int32_t token) const;
  std::pair<std::int32_t, std::int32_t> marker_range(std::size_t cls) const;
};

// A language: the shared base chain mixed with a language-unique chain.
// epsilon = 0 makes every language identical to the base.
struct LanguageSpec {
  SynthSpec shared;
  std::int32_t language_id = 0;
  double epsilon = 0.5;
};

// Labeling: the class whose marker set strictly dominates the sentence.
struct TaskSpec {
  std::size_t plant_min = 3;        // markers planted for the true class
  std::size_t distractors = 1;      // markers planted for one other class
  double emission_sharpness = 2.0;  // exponent on stationary marker weights
};

// Sparse row-stochastic bigram table over content tokens.
struct MarkovChain {
  std::size_t content_count = 0;
  // per previous-token row: (next token id, probability), probs sum to 1
  std::vector<std::vector<std::pair<std::int32_t, double>>> rows;

  double probability(std::int32_t prev, std::int32_t next) const;
};

MarkovChain language_chain(const LanguageSpec& lang);
// Stationary distribution over content tokens (power iteration).
std::vector<double> stationary_distribution(const MarkovChain& chain);

// Unlabeled corpus: pure chain walks. Deterministic in (spec, seed).
DataSet gen_corpus(const LanguageSpec& lang, std::size_t n_sentences,
                   std::uint64_t seed);

// Labeled task data: chain sentences with class markers planted through
// the language's own marker statistics. Labels are balanced round-robin
// and always recomputable via label_of().
DataSet gen_task_data(const LanguageSpec& lang, const TaskSpec& task,
                      std::size_t n_examples, std::uint64_t seed);

// The labeling rule: argmax of per-class marker counts (lowest class on a
// tie; generated data always has a strict winner).
std::int32_t label_of(const SynthSpec& spec, const std::vector<std::int32_t>& sentence);

// Standard 80/10/10 corruption. Targets of selected positions are set to
// the original token; everything else stays ignored. With mask_prob > 0
// at least one eligible position is always selected.
void mlm_mask(Batch& batch, const ModelSpec& spec, double mask_prob,
              std::uint64_t seed, double mask_token_prob = 0.8,
              double random_token_prob = 0.1);

// Flat serialization: sentences separated by EOS.
std::vector<std::int32_t> flatten_corpus(const DataSet& corpus);
DataSet unflatten_corpus(const std::vector<std::int32_t>& flat);

}  // namespace deftx
