#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "deftx/model.hpp"
#include "deftx/rng.hpp"

namespace deftx {

// Pre-tokenized examples. Labels are empty for unlabeled (MLM) corpora.
struct DataSet {
  std::vector<std::vector<std::int32_t>> sentences;
  std::vector<std::int32_t> labels;

  std::size_t size() const noexcept { return sentences.size(); }
  bool empty() const noexcept { return sentences.empty(); }
  bool labeled() const noexcept { return !labels.empty(); }
};

// Deterministic held-out split: `val_fraction` of examples (at least one
// when the fraction is positive) go to the second set.
std::pair<DataSet, DataSet> split_dataset(const DataSet& data,
                                          double val_fraction,
                                          std::uint64_t seed);

// Assembles a fixed-geometry batch: [CLS] + sentence, truncated to
// max_seq_len, padded with PAD. MLM targets start all-ignored; apply
// mlm_mask afterwards.
Batch make_batch(const DataSet& data, std::span<const std::size_t> indices,
                 const ModelSpec& spec, Objective objective);

// Batch index sampler for one training step: distinct examples when the
// dataset is large enough, deterministic in (rng state).
std::vector<std::size_t> sample_batch_indices(std::size_t dataset_size,
                                              std::size_t batch_size, Rng& rng);

}  // namespace deftx
