#pragma once

#include <cstdint>
#include <vector>

#include "deftx/data.hpp"
#include "deftx/model.hpp"

namespace deftx {

struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::uint64_t> counts;  // actual * n_classes + predicted

  explicit ConfusionMatrix(std::size_t classes)
      : n_classes(classes), counts(classes * classes, 0) {}
  void add(std::size_t actual, std::size_t predicted) {
    ++counts[actual * n_classes + predicted];
  }
  std::uint64_t total() const;
};

double accuracy(const ConfusionMatrix& cm);
// Per-class F1 averaged over all classes; 0/0 counts as 0.
double macro_f1(const ConfusionMatrix& cm);

// Argmax predictions over a labeled dataset; ties pick the lowest class.
ConfusionMatrix classify_dataset(const ParameterSet& params, const ModelSpec& spec,
                                 const DataSet& data, std::size_t batch_size);

}  // namespace deftx
