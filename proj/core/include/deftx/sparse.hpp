#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "deftx/model.hpp"

namespace deftx {

// Per-tensor sorted index set selecting trainable coordinates.
struct MaskSlice {
  std::string name;
  std::vector<std::uint64_t> indices;  // strictly increasing flat indices
};

struct BinaryMask {
  std::uint64_t model_digest = 0;
  std::vector<MaskSlice> slices;

  std::size_t cardinality() const;
  const MaskSlice* find(std::string_view name) const;
  // Names exist, indices strictly increasing and in range.
  void validate_against(const ParameterSet& params) const;
};

enum class VectorKind : std::uint8_t { Language = 0, Task = 1, Other = 2 };

const char* vector_kind_name(VectorKind kind) noexcept;

struct SparseSlice {
  std::string name;
  TensorClass cls = TensorClass::WeightMatrix;
  std::vector<std::size_t> shape;
  std::vector<std::uint64_t> indices;  // strictly increasing flat indices
  std::vector<double> values;          // explicit zeros kept
};

// A trained sparse vector: support equals the mask it was trained under.
struct SparseVector {
  VectorKind kind = VectorKind::Other;
  std::uint64_t budget = 0;         // k
  std::uint64_t config_digest = 0;
  std::uint64_t model_digest = 0;
  std::vector<SparseSlice> slices;

  std::size_t support_size() const;
  BinaryMask support() const;
  void validate() const;  // sorted indices, finite values, sum nnz == budget
};

// after - before restricted to the mask support; explicit zeros kept so
// the support always equals the mask.
SparseVector extract_sparse(const ParameterSet& after, const ParameterSet& before,
                            const BinaryMask& mask);

// Dense tensor set with the reference schema, zero off support.
ParameterSet densify(const SparseVector& vec, const ParameterSet& schema_ref);

}  // namespace deftx
