#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "deftx/data.hpp"
#include "deftx/model.hpp"
#include "deftx/sparse.hpp"

namespace deftx {

enum class OptimizerKind : std::uint8_t { AdamW = 0, Sgd = 1 };
enum class SelectionMetric : std::uint8_t { ValLoss = 0, Accuracy = 1, MacroF1 = 2 };

struct TrainConfig {
  double lr = 5e-5;
  std::uint64_t max_steps = 2000;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  // Decoupled L1 applied as a soft-threshold of lr*lambda per step, so a
  // parameter driven only by the penalty walks monotonically to 0 and
  // stops there (subgradient 0 at 0).
  double l1_lambda = 0.0;
  std::uint64_t eval_interval = 100;
  SelectionMetric selection = SelectionMetric::ValLoss;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  double mlm_mask_prob = 0.15;

  void validate() const;
  std::uint64_t digest() const;
};

// Tensor names excluded from updates (layer norms during language
// adaptation). Every name must exist in the parameter set.
using FreezeSet = std::set<std::string>;

FreezeSet layer_norm_freeze_set(const ParameterSet& params);

// Linear decay to zero: lr * (max_steps - step) / max_steps. Exactly zero
// at step == max_steps.
double lr_at_step(const TrainConfig& cfg, std::uint64_t step);

// First and second moments; kept only for trainable coordinates. In
// masked mode the vectors align entry-for-entry with the mask slices.
struct AdamWState {
  std::uint64_t steps_taken = 0;
  ParameterSet m, v;                                // dense mode
  std::vector<std::vector<double>> m_masked, v_masked;  // masked mode
  bool masked = false;
};

AdamWState init_adamw_state(const ParameterSet& ref, const BinaryMask* mask);

// One optimizer step. Masked coordinates get the full AdamW update;
// everything else (including its moments) is untouched. `mask == nullptr`
// updates every tensor not in `freeze`.
void adamw_step(ParameterSet& params, AdamWState& state, const ParameterSet& grads,
                std::uint64_t step_index, const TrainConfig& cfg,
                const BinaryMask* mask, const FreezeSet& freeze);

struct TrainLogRecord {
  std::uint64_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double eval_metric = 0.0;
  bool has_eval = false;
};

std::string format_log_record(const TrainLogRecord& rec);

struct TrainResult {
  ParameterSet params;  // best checkpoint when eval ran, else final
  std::vector<TrainLogRecord> log;
  std::uint64_t best_step = 0;
  double best_metric = 0.0;
  bool selected_by_eval = false;
};

// Pluggable objective: loss_grad drives the updates, eval (optional)
// drives best-checkpoint selection.
struct ObjectiveFns {
  std::function<LossAndGrads(const ParameterSet&, std::uint64_t step)> loss_grad;
  std::function<double(const ParameterSet&)> eval;
  bool eval_lower_is_better = true;
};

TrainResult train_loop(const ParameterSet& start, const ObjectiveFns& fns,
                       const TrainConfig& cfg, const FreezeSet& freeze,
                       const BinaryMask* mask);

// Model-wired training data: batches sampled per step from `train`,
// checkpoints scored on `val` (skipped when val is null or empty).
struct TrainData {
  const DataSet* train = nullptr;
  const DataSet* val = nullptr;
  Objective objective = Objective::Mlm;
};

ObjectiveFns make_model_objective(const ModelSpec& spec, const TrainData& data,
                                  const TrainConfig& cfg);

// Full fine-tuning: returns the evaluation-selected best checkpoint.
TrainResult full_finetune(const ParameterSet& start, const ModelSpec& spec,
                          const TrainData& data, const TrainConfig& cfg,
                          const FreezeSet& freeze);

struct SparseFinetuneResult {
  SparseVector vector;      // support equals the given mask
  ParameterSet params;      // the selected checkpoint, dense
  std::vector<TrainLogRecord> log;
  bool degenerate_mask = false;  // empty mask with max_steps > 0
};

// Mask-constrained fine-tuning from `base`; coordinates outside the mask
// are bit-identical in the result.
SparseFinetuneResult sparse_finetune(const ParameterSet& base, const BinaryMask& mask,
                                     const ModelSpec& spec, const TrainData& data,
                                     const TrainConfig& cfg, const FreezeSet& freeze);

// Validation-set metric used for selection; exposed for evaluation code.
double dataset_metric(const ParameterSet& params, const ModelSpec& spec,
                      const DataSet& data, Objective objective,
                      SelectionMetric metric, const TrainConfig& cfg);

}  // namespace deftx
