#include "deftx/data.hpp"

#include <algorithm>
#include <numeric>

#include "deftx/error.hpp"

namespace deftx {

std::pair<DataSet, DataSet> split_dataset(const DataSet& data,
                                          double val_fraction,
                                          std::uint64_t seed) {
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    raise(ErrorKind::Config, "val_fraction must be in [0, 1)");
  }
  const std::size_t n = data.size();
  std::size_t n_val = static_cast<std::size_t>(val_fraction * static_cast<double>(n));
  if (val_fraction > 0.0 && n_val == 0 && n > 1) n_val = 1;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.next_below(i);
    std::swap(order[i - 1], order[j]);
  }

  DataSet train;
  DataSet val;
  for (std::size_t i = 0; i < n; ++i) {
    DataSet& dst = i < n_val ? val : train;
    dst.sentences.push_back(data.sentences[order[i]]);
    if (data.labeled()) dst.labels.push_back(data.labels[order[i]]);
  }
  return {std::move(train), std::move(val)};
}

Batch make_batch(const DataSet& data, std::span<const std::size_t> indices,
                 const ModelSpec& spec, Objective objective) {
  if (indices.empty()) raise(ErrorKind::EmptyObjective, "empty batch");
  Batch batch;
  batch.batch_size = indices.size();
  batch.seq_len = spec.max_seq_len;
  const std::size_t t_len = batch.seq_len;
  batch.token_ids.assign(batch.batch_size * t_len, tokens::kPad);
  batch.attention.assign(batch.batch_size * t_len, 0);
  batch.mlm_targets.assign(batch.batch_size * t_len, Batch::kIgnoreLabel);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::size_t ex = indices[b];
    if (ex >= data.size()) raise(ErrorKind::Incompatibility, "batch index out of range");
    const auto& sent = data.sentences[ex];
    batch.token_ids[b * t_len] = tokens::kCls;
    batch.attention[b * t_len] = 1;
    const std::size_t limit = std::min(sent.size(), t_len - 1);
    for (std::size_t t = 0; t < limit; ++t) {
      batch.token_ids[b * t_len + 1 + t] = sent[t];
      batch.attention[b * t_len + 1 + t] = 1;
    }
    if (objective == Objective::Classify) {
      if (!data.labeled()) raise(ErrorKind::Incompatibility, "classify needs labels");
      batch.class_labels.push_back(data.labels[ex]);
    }
  }
  return batch;
}

std::vector<std::size_t> sample_batch_indices(std::size_t dataset_size,
                                              std::size_t batch_size, Rng& rng) {
  if (dataset_size == 0) raise(ErrorKind::EmptyObjective, "empty dataset");
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  if (batch_size >= dataset_size) {
    for (std::size_t i = 0; i < batch_size; ++i) {
      out.push_back(rng.next_below(dataset_size));
    }
    return out;
  }
  // Partial Fisher-Yates: first batch_size entries of a seeded shuffle.
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t j = i + rng.next_below(dataset_size - i);
    std::swap(order[i], order[j]);
    out.push_back(order[i]);
  }
  return out;
}

}  // namespace deftx
