#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "deftx/optim.hpp"
#include "deftx/sparse.hpp"
#include "deftx/svd.hpp"

namespace deftx {

// Dense elementwise difference between two parameter sets; carries the
// source schema.
using DeltaSet = ParameterSet;

// Per-matrix rank rule: a fixed rank, or the smallest rank whose
// cumulative variance reaches `fraction` of the total. Variance defaults
// to squared singular values; `sigma_squared = false` switches to the
// sigma-linear reading.
struct RankPolicy {
  enum class Kind : std::uint8_t { Uniform = 0, VarianceFraction = 1 };

  Kind kind = Kind::VarianceFraction;
  std::size_t rank = 0;
  double fraction = 0.9;
  bool sigma_squared = true;

  static RankPolicy uniform(std::size_t r);
  static RankPolicy variance_fraction(double f, bool squared = true);

  void validate() const;
  std::uint64_t digest() const;
  std::string to_string() const;  // "100" | "var:0.9" | "varlin:0.9"
  static RankPolicy parse(const std::string& text);
};

struct DenoiseConfig {
  RankPolicy rank_policy;
  double residual_retain_fraction = 0.05;
  std::set<TensorClass> denoise_classes = {TensorClass::WeightMatrix,
                                           TensorClass::Embedding};
  // Fan-out for the per-matrix SVDs; results are bit-identical for every
  // worker count.
  std::size_t workers = 1;

  void validate() const;
  std::uint64_t digest() const;  // semantic fields only; workers excluded
};

DeltaSet compute_delta(const ParameterSet& finetuned, const ParameterSet& base);

// Smallest rank satisfying the policy for a non-increasing, non-negative
// singular value sequence; 0 when every singular value is zero.
std::size_t select_rank(std::span<const double> singular_values,
                        const RankPolicy& policy);

// Rank-r truncation plus the largest round(retain_fraction * numel)
// residual entries, returned dense.
Tensor denoise_matrix(const Tensor& w, std::size_t rank, double retain_fraction);

// Applies denoise_matrix to every 2-D tensor whose class is listed;
// everything else passes through unchanged.
DeltaSet denoise_delta(const DeltaSet& delta, const DenoiseConfig& cfg);

// Tensor names that may enter a mask: every non-head tensor not in the
// freeze set.
std::vector<std::string> eligible_tensor_names(const ParameterSet& params,
                                               const FreezeSet& freeze);

// Exactly `budget` coordinates with the largest |delta| across all
// eligible tensors; ties break by (tensor order, index).
BinaryMask global_topk_mask(const DeltaSet& delta, std::size_t budget,
                            const std::vector<std::string>& eligible);

// Two-phase sparse fine-tuning configuration.
struct SftConfig {
  TrainConfig phase1;
  TrainConfig phase2;
  DenoiseConfig denoise;
  std::size_t budget = 0;  // k, counted over eligible scalars only
  FreezeSet freeze;
  bool denoise_enabled = true;  // false gives the plain-magnitude baseline
  VectorKind kind = VectorKind::Other;

  std::uint64_t digest() const;
};

struct SftResult {
  SparseVector vector;
  BinaryMask mask;
  std::optional<ParameterSet> head;  // classifier-head fragment (classify)
  std::vector<TrainLogRecord> phase1_log;
  std::vector<TrainLogRecord> phase2_log;
  bool degenerate_mask = false;
};

// Full fine-tune, denoise the delta, build the magnitude mask, reset and
// sparse fine-tune. The classifier head (classify objective) is freshly
// re-initialized each phase, fully fine-tuned in both, and excluded from
// the budget; it is returned separately.
SftResult deftx(const ParameterSet& base, const ModelSpec& spec,
                const TrainData& data, const SftConfig& cfg);

// Baseline: identical pipeline with the mask taken from the raw |delta|.
SftResult lt_sft(const ParameterSet& base, const ModelSpec& spec,
                 const TrainData& data, SftConfig cfg);

enum class AblationVariant : std::uint8_t {
  None = 0,           // full pipeline
  NoHigherOrder = 1,  // denoise with retain_fraction 0, then proceed
  NoPruneNoSft = 2,   // composable vector is the dense denoised delta
  NoSft = 3,          // composable vector is mask * denoised delta
};

const char* ablation_variant_name(AblationVariant v) noexcept;
AblationVariant parse_ablation_variant(const std::string& text);

// Either a trained sparse vector or a dense delta (ablations).
struct ComposableVector {
  std::variant<SparseVector, DeltaSet> payload;
  VectorKind kind = VectorKind::Other;
  std::uint64_t config_digest = 0;
  std::uint64_t model_digest = 0;

  bool is_sparse() const { return std::holds_alternative<SparseVector>(payload); }
  const SparseVector& sparse() const { return std::get<SparseVector>(payload); }
  const DeltaSet& dense() const { return std::get<DeltaSet>(payload); }

  static ComposableVector from(SparseVector vec) {
    ComposableVector out;
    out.kind = vec.kind;
    out.config_digest = vec.config_digest;
    out.model_digest = vec.model_digest;
    out.payload = std::move(vec);
    return out;
  }
};

struct AblationResult {
  ComposableVector vector;
  std::optional<BinaryMask> mask;    // absent for NoPruneNoSft
  std::optional<ParameterSet> head;  // classify only
  std::vector<TrainLogRecord> phase1_log;
  std::vector<TrainLogRecord> phase2_log;
};

AblationResult ablation(AblationVariant variant, const ParameterSet& base,
                        const ModelSpec& spec, const TrainData& data,
                        const SftConfig& cfg);

}  // namespace deftx
