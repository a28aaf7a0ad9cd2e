#include "deftx/sparse.hpp"

#include <cmath>

#include "deftx/error.hpp"

namespace deftx {

std::size_t BinaryMask::cardinality() const {
  std::size_t n = 0;
  for (const MaskSlice& s : slices) n += s.indices.size();
  return n;
}

const MaskSlice* BinaryMask::find(std::string_view name) const {
  for (const MaskSlice& s : slices) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

void BinaryMask::validate_against(const ParameterSet& params) const {
  for (const MaskSlice& s : slices) {
    const NamedTensor* entry = params.find(s.name);
    if (entry == nullptr) {
      raise(ErrorKind::Incompatibility, "mask names unknown tensor '" + s.name + "'");
    }
    const std::size_t numel = entry->tensor.numel();
    std::uint64_t prev = 0;
    bool first = true;
    for (std::uint64_t idx : s.indices) {
      if (!first && idx <= prev) {
        raise(ErrorKind::Validation, "mask indices not strictly increasing in '" + s.name + "'");
      }
      if (idx >= numel) {
        raise(ErrorKind::Validation, "mask index out of range in '" + s.name + "'");
      }
      prev = idx;
      first = false;
    }
  }
}

const char* vector_kind_name(VectorKind kind) noexcept {
  switch (kind) {
    case VectorKind::Language: return "language";
    case VectorKind::Task: return "task";
    case VectorKind::Other: return "other";
  }
  return "unknown";
}

std::size_t SparseVector::support_size() const {
  std::size_t n = 0;
  for (const SparseSlice& s : slices) n += s.indices.size();
  return n;
}

BinaryMask SparseVector::support() const {
  BinaryMask mask;
  mask.model_digest = model_digest;
  for (const SparseSlice& s : slices) {
    if (s.indices.empty()) continue;
    mask.slices.push_back({s.name, s.indices});
  }
  return mask;
}

void SparseVector::validate() const {
  std::size_t total = 0;
  for (const SparseSlice& s : slices) {
    if (s.indices.size() != s.values.size()) {
      raise(ErrorKind::Validation, "index/value length mismatch in '" + s.name + "'");
    }
    const std::size_t numel = shape_numel(s.shape);
    std::uint64_t prev = 0;
    bool first = true;
    for (std::size_t i = 0; i < s.indices.size(); ++i) {
      const std::uint64_t idx = s.indices[i];
      if (!first && idx <= prev) {
        raise(ErrorKind::Validation, "indices not strictly increasing in '" + s.name + "'");
      }
      if (idx >= numel) {
        raise(ErrorKind::Validation, "index out of range in '" + s.name + "'");
      }
      if (!std::isfinite(s.values[i])) {
        raise(ErrorKind::Validation, "non-finite value in '" + s.name + "'");
      }
      prev = idx;
      first = false;
    }
    total += s.indices.size();
  }
  if (total != budget) {
    raise(ErrorKind::Validation, "support size " + std::to_string(total) +
                                     " does not equal budget " + std::to_string(budget));
  }
}

SparseVector extract_sparse(const ParameterSet& after, const ParameterSet& before,
                            const BinaryMask& mask) {
  require_index_compatible(after, before);
  mask.validate_against(before);
  SparseVector out;
  out.budget = mask.cardinality();
  for (const NamedTensor& entry : before.entries) {
    const MaskSlice* ms = mask.find(entry.name);
    if (ms == nullptr || ms->indices.empty()) continue;
    const NamedTensor* post = after.find(entry.name);
    SparseSlice slice;
    slice.name = entry.name;
    slice.cls = entry.cls;
    slice.shape = entry.tensor.shape;
    slice.indices = ms->indices;
    slice.values.reserve(ms->indices.size());
    for (std::uint64_t idx : ms->indices) {
      slice.values.push_back(post->tensor.data[idx] - entry.tensor.data[idx]);
    }
    out.slices.push_back(std::move(slice));
  }
  return out;
}

ParameterSet densify(const SparseVector& vec, const ParameterSet& schema_ref) {
  ParameterSet out = zeros_like(schema_ref);
  for (const SparseSlice& s : vec.slices) {
    NamedTensor* entry = out.find(s.name);
    if (entry == nullptr) {
      raise(ErrorKind::Incompatibility, "vector names unknown tensor '" + s.name + "'");
    }
    if (entry->tensor.shape != s.shape) {
      raise(ErrorKind::Incompatibility, "vector shape mismatch for '" + s.name + "'");
    }
    for (std::size_t i = 0; i < s.indices.size(); ++i) {
      entry->tensor.data[s.indices[i]] = s.values[i];
    }
  }
  return out;
}

}  // namespace deftx
