#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deftx/deft.hpp"
#include "deftx/metrics.hpp"

namespace deftx {

enum class Metric : std::uint8_t { Accuracy = 0, MacroF1 = 1 };

const char* metric_name(Metric m) noexcept;
Metric parse_metric(const std::string& text);

// Exact elementwise sum base + sum(vectors). Contributions to the same
// coordinate are folded in ascending value order, so the result does not
// depend on the order vectors are listed in.
ParameterSet compose(const ParameterSet& base,
                     std::span<const ComposableVector> vectors);

// Overwrites the head-class tensors with the given fragment.
void apply_head(ParameterSet& params, const ParameterSet& head);

struct Provenance {
  VectorKind kind = VectorKind::Other;
  bool dense = false;
  std::uint64_t config_digest = 0;
  std::uint64_t model_digest = 0;
};

struct ComposedModel {
  ParameterSet params;
  std::vector<Provenance> applied;
  std::vector<std::string> warnings;  // model-digest mismatches and friends
};

// compose() plus provenance tracking, digest checks (warn, not fail) and
// optional head replacement.
ComposedModel compose_model(const ParameterSet& base, std::uint64_t base_digest,
                            std::span<const ComposableVector> vectors,
                            const ParameterSet* head);

// Language vector: two-phase run on the MLM objective with layer norms
// frozen. The held-out fraction drives lowest-validation-loss selection.
SftResult train_language_vector(const DataSet& corpus, const ParameterSet& base,
                                const ModelSpec& spec, SftConfig cfg,
                                double val_fraction);

struct TaskVectorResult {
  SparseVector vector;  // measured against the initialization point
  BinaryMask mask;
  ParameterSet head;
  std::vector<TrainLogRecord> phase1_log;
  std::vector<TrainLogRecord> phase2_log;
};

// Task vector: classification run starting from base (+ source-language
// vector when given); the returned vector is relative to that start.
TaskVectorResult train_task_vector(const DataSet& train, const DataSet& val,
                                   const ParameterSet& base, const ModelSpec& spec,
                                   const SparseVector* source_language,
                                   SftConfig cfg);

// Ablation-variant counterparts. They share the exact run preparation
// with the functions above, so the None variant reproduces them bit for
// bit; the task form also accepts a dense source vector.
AblationResult ablate_language_vector(AblationVariant variant, const DataSet& corpus,
                                      const ParameterSet& base, const ModelSpec& spec,
                                      SftConfig cfg, double val_fraction);
AblationResult ablate_task_vector(AblationVariant variant, const DataSet& train,
                                  const DataSet& val, const ParameterSet& base,
                                  const ModelSpec& spec,
                                  const ComposableVector* source_language,
                                  SftConfig cfg);

// Deterministic metric on a labeled test set.
double zero_shot_eval(const ParameterSet& params, const ModelSpec& spec,
                      const DataSet& test, Metric metric,
                      std::size_t batch_size = 32);

}  // namespace deftx
