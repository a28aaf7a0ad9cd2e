#include "deftx/metrics.hpp"

#include <numeric>

#include "deftx/error.hpp"

namespace deftx {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (std::uint64_t c : counts) n += c;
  return n;
}

double accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t n = cm.total();
  if (n == 0) raise(ErrorKind::Evaluation, "empty confusion matrix");
  std::uint64_t correct = 0;
  for (std::size_t c = 0; c < cm.n_classes; ++c) {
    correct += cm.counts[c * cm.n_classes + c];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

double macro_f1(const ConfusionMatrix& cm) {
  if (cm.total() == 0) raise(ErrorKind::Evaluation, "empty confusion matrix");
  double sum_f1 = 0.0;
  for (std::size_t c = 0; c < cm.n_classes; ++c) {
    const double tp = static_cast<double>(cm.counts[c * cm.n_classes + c]);
    double fp = 0.0;
    double fn = 0.0;
    for (std::size_t other = 0; other < cm.n_classes; ++other) {
      if (other == c) continue;
      fp += static_cast<double>(cm.counts[other * cm.n_classes + c]);
      fn += static_cast<double>(cm.counts[c * cm.n_classes + other]);
    }
    const double precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
    const double recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
    const double f1 =
        precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    sum_f1 += f1;
  }
  return sum_f1 / static_cast<double>(cm.n_classes);
}

ConfusionMatrix classify_dataset(const ParameterSet& params, const ModelSpec& spec,
                                 const DataSet& data, std::size_t batch_size) {
  if (data.empty()) raise(ErrorKind::Evaluation, "empty evaluation set");
  if (!data.labeled()) raise(ErrorKind::Evaluation, "evaluation set has no labels");
  ConfusionMatrix cm(spec.n_classes);
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Batch batch = make_batch(data, idx, spec, Objective::Classify);
    const Tensor logits = class_logits(params, spec, batch);
    for (std::size_t b = 0; b < batch.batch_size; ++b) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < spec.n_classes; ++c) {
        if (logits.at(b, c) > logits.at(b, best)) best = c;
      }
      cm.add(static_cast<std::size_t>(batch.class_labels[b]), best);
    }
  }
  return cm;
}

}  // namespace deftx
