#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "deftx/sparse.hpp"

namespace deftx {

// |support(a) ∩ support(b)| / |support(a)|. Directional: language and
// task vectors have different budgets, so this is not symmetric in
// general. Error on empty support(a).
double mask_overlap(const BinaryMask& a, const BinaryMask& b);

// |A ∩ B| / |A ∪ B|; emitted alongside the directional number in reports.
double jaccard_overlap(const BinaryMask& a, const BinaryMask& b);

// Pairwise directional overlaps; diagonal is 1.
std::vector<std::vector<double>> overlap_matrix(std::span<const BinaryMask> masks);

struct SparsityRow {
  std::string name;
  TensorClass cls = TensorClass::WeightMatrix;
  std::size_t numel = 0;
  std::size_t support = 0;
  double max_abs = 0.0;
  double mean_abs = 0.0;
  double l2 = 0.0;
};

struct SparsityReport {
  std::vector<SparsityRow> tensors;
  std::vector<std::pair<std::string, std::size_t>> per_layer;  // name prefix -> count
  std::vector<std::pair<std::string, std::size_t>> per_class;  // class tag -> count
  std::size_t total_support = 0;
  std::uint64_t budget = 0;
};

SparsityReport sparsity_report(const SparseVector& vec);

// Delimited-text emission. Every header names the overlap convention.
std::string overlap_matrix_tsv(std::span<const std::string> names,
                               const std::vector<std::vector<double>>& directional,
                               const std::vector<std::vector<double>>& jaccard);
// Plot-ready long format: vector_a, vector_b, overlap, jaccard.
std::string overlap_long_format(std::span<const std::string> names,
                                const std::vector<std::vector<double>>& directional,
                                const std::vector<std::vector<double>>& jaccard);
std::string sparsity_report_tsv(const SparsityReport& report);

}  // namespace deftx
