#include "deftx/optim.hpp"

#include <cmath>
#include <numeric>

#include "deftx/digest.hpp"
#include "deftx/error.hpp"
#include "deftx/metrics.hpp"
#include "deftx/synthdata.hpp"

namespace deftx {

void TrainConfig::validate() const {
  if (lr < 0.0) raise(ErrorKind::Config, "lr must be non-negative");
  if (l1_lambda < 0.0) raise(ErrorKind::Config, "l1_lambda must be non-negative");
  if (batch_size == 0) raise(ErrorKind::Config, "batch_size must be >= 1");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    raise(ErrorKind::Config, "betas must lie in [0, 1)");
  }
  if (epsilon <= 0.0) raise(ErrorKind::Config, "epsilon must be positive");
  if (mlm_mask_prob < 0.0 || mlm_mask_prob > 1.0) {
    raise(ErrorKind::Config, "mlm_mask_prob must lie in [0, 1]");
  }
}

std::uint64_t TrainConfig::digest() const {
  Fnv64 h;
  h.f64(lr).u64(max_steps).u64(batch_size).u64(seed);
  h.f64(beta1).f64(beta2).f64(epsilon).f64(weight_decay).f64(l1_lambda);
  h.u64(eval_interval).u64(static_cast<std::uint64_t>(selection));
  h.u64(static_cast<std::uint64_t>(optimizer)).f64(mlm_mask_prob);
  return h.value();
}

FreezeSet layer_norm_freeze_set(const ParameterSet& params) {
  FreezeSet out;
  for (const NamedTensor& entry : params.entries) {
    if (entry.cls == TensorClass::LayerNorm) out.insert(entry.name);
  }
  return out;
}

double lr_at_step(const TrainConfig& cfg, std::uint64_t step) {
  if (cfg.max_steps == 0 || step >= cfg.max_steps) return 0.0;
  return cfg.lr * static_cast<double>(cfg.max_steps - step) /
         static_cast<double>(cfg.max_steps);
}

AdamWState init_adamw_state(const ParameterSet& ref, const BinaryMask* mask) {
  AdamWState state;
  if (mask != nullptr) {
    state.masked = true;
    state.m_masked.reserve(mask->slices.size());
    state.v_masked.reserve(mask->slices.size());
    for (const MaskSlice& s : mask->slices) {
      state.m_masked.emplace_back(s.indices.size(), 0.0);
      state.v_masked.emplace_back(s.indices.size(), 0.0);
    }
  } else {
    state.m = zeros_like(ref);
    state.v = zeros_like(ref);
  }
  return state;
}

namespace {

struct CoordUpdater {
  const TrainConfig& cfg;
  double lr;
  double bias_corr1;
  double bias_corr2;

  CoordUpdater(const TrainConfig& c, std::uint64_t step_index)
      : cfg(c),
        lr(lr_at_step(c, step_index)),
        bias_corr1(1.0 - std::pow(c.beta1, static_cast<double>(step_index + 1))),
        bias_corr2(1.0 - std::pow(c.beta2, static_cast<double>(step_index + 1))) {}

  void apply(double& p, double& m, double& v, double g) const {
    if (!std::isfinite(g)) {
      raise(ErrorKind::TrainingFailure, "non-finite gradient");
    }
    double step_term = 0.0;
    if (cfg.optimizer == OptimizerKind::AdamW) {
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m / bias_corr1;
      const double v_hat = v / bias_corr2;
      step_term = m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    } else {
      step_term = g;
    }
    p -= lr * (step_term + cfg.weight_decay * p);
    const double shrink = lr * cfg.l1_lambda;
    if (shrink > 0.0) {
      p = p > 0.0 ? std::max(0.0, p - shrink) : std::min(0.0, p + shrink);
    }
  }
};

}  // namespace

void adamw_step(ParameterSet& params, AdamWState& state, const ParameterSet& grads,
                std::uint64_t step_index, const TrainConfig& cfg,
                const BinaryMask* mask, const FreezeSet& freeze) {
  require_index_compatible(params, grads);
  const CoordUpdater update(cfg, step_index);

  if (mask != nullptr) {
    if (!state.masked || state.m_masked.size() != mask->slices.size()) {
      raise(ErrorKind::Incompatibility, "optimizer state does not match mask");
    }
    for (std::size_t si = 0; si < mask->slices.size(); ++si) {
      const MaskSlice& slice = mask->slices[si];
      if (freeze.contains(slice.name)) continue;
      NamedTensor* entry = params.find(slice.name);
      const NamedTensor* gentry = grads.find(slice.name);
      if (entry == nullptr || gentry == nullptr) {
        raise(ErrorKind::Incompatibility, "mask names unknown tensor '" + slice.name + "'");
      }
      std::vector<double>& m = state.m_masked[si];
      std::vector<double>& v = state.v_masked[si];
      for (std::size_t i = 0; i < slice.indices.size(); ++i) {
        const std::uint64_t idx = slice.indices[i];
        update.apply(entry->tensor.data[idx], m[i], v[i], gentry->tensor.data[idx]);
      }
    }
  } else {
    for (std::size_t ti = 0; ti < params.entries.size(); ++ti) {
      NamedTensor& entry = params.entries[ti];
      if (freeze.contains(entry.name)) continue;
      const Tensor& g = grads.entries[ti].tensor;
      Tensor& m = state.m.entries[ti].tensor;
      Tensor& v = state.v.entries[ti].tensor;
      for (std::size_t i = 0; i < entry.tensor.data.size(); ++i) {
        update.apply(entry.tensor.data[i], m.data[i], v.data[i], g.data[i]);
      }
    }
  }
  ++state.steps_taken;
}

std::string format_log_record(const TrainLogRecord& rec) {
  std::string line = std::to_string(rec.step);
  line += '\t';
  line += std::to_string(rec.lr);
  line += '\t';
  line += std::to_string(rec.train_loss);
  line += '\t';
  line += rec.has_eval ? std::to_string(rec.eval_metric) : std::string("-");
  return line;
}

TrainResult train_loop(const ParameterSet& start, const ObjectiveFns& fns,
                       const TrainConfig& cfg, const FreezeSet& freeze,
                       const BinaryMask* mask) {
  cfg.validate();
  for (const std::string& name : freeze) {
    if (start.find(name) == nullptr) {
      raise(ErrorKind::Incompatibility, "freeze set names unknown tensor '" + name + "'");
    }
  }
  if (mask != nullptr) mask->validate_against(start);

  TrainResult result;
  result.params = start;
  if (cfg.max_steps == 0) return result;

  ParameterSet params = start;
  AdamWState state = init_adamw_state(start, mask);

  bool have_best = false;
  ParameterSet best_params;
  double best_metric = 0.0;
  std::uint64_t best_step = 0;

  for (std::uint64_t step = 0; step < cfg.max_steps; ++step) {
    LossAndGrads lg;
    try {
      lg = fns.loss_grad(params, step);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::TrainingFailure && !e.detail().has_value()) {
        throw Error(ErrorKind::TrainingFailure,
                    std::string(e.what()) + " at step " + std::to_string(step), step);
      }
      throw;
    }
    if (!std::isfinite(lg.loss)) {
      raise(ErrorKind::TrainingFailure, "non-finite loss at step " + std::to_string(step),
            step);
    }
    try {
      adamw_step(params, state, lg.grads, step, cfg, mask, freeze);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::TrainingFailure && !e.detail().has_value()) {
        throw Error(ErrorKind::TrainingFailure,
                    std::string(e.what()) + " at step " + std::to_string(step), step);
      }
      throw;
    }

    TrainLogRecord rec;
    rec.step = step;
    rec.lr = lr_at_step(cfg, step);
    rec.train_loss = lg.loss;

    const bool last_step = step + 1 == cfg.max_steps;
    const bool cadence_hit =
        cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0;
    if (fns.eval && (cadence_hit || last_step)) {
      const double metric = fns.eval(params);
      rec.eval_metric = metric;
      rec.has_eval = true;
      const bool better =
          !have_best ||
          (fns.eval_lower_is_better ? metric < best_metric : metric > best_metric);
      if (better) {
        have_best = true;
        best_params = params;
        best_metric = metric;
        best_step = step + 1;
      }
    }
    result.log.push_back(rec);
  }

  if (have_best) {
    result.params = std::move(best_params);
    result.best_step = best_step;
    result.best_metric = best_metric;
    result.selected_by_eval = true;
  } else {
    result.params = std::move(params);
    result.best_step = cfg.max_steps;
  }
  return result;
}

namespace {

double mlm_val_loss(const ParameterSet& params, const ModelSpec& spec,
                    const DataSet& val, const TrainConfig& cfg) {
  const Rng base(cfg.seed);
  double total_loss = 0.0;
  std::uint64_t total_targets = 0;
  std::size_t batch_index = 0;
  for (std::size_t begin = 0; begin < val.size(); begin += cfg.batch_size) {
    const std::size_t end = std::min(val.size(), begin + cfg.batch_size);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    Batch batch = make_batch(val, idx, spec, Objective::Mlm);
    // Fixed per-batch seed: every checkpoint sees identical masking.
    mlm_mask(batch, spec, cfg.mlm_mask_prob,
             base.fork("eval-mask", batch_index).seed());
    std::uint64_t n_targets = 0;
    for (std::int32_t t : batch.mlm_targets) {
      if (t != Batch::kIgnoreLabel) ++n_targets;
    }
    total_loss += forward_loss(params, spec, batch, Objective::Mlm) *
                  static_cast<double>(n_targets);
    total_targets += n_targets;
    ++batch_index;
  }
  if (total_targets == 0) raise(ErrorKind::EmptyObjective, "validation set has no targets");
  return total_loss / static_cast<double>(total_targets);
}

double classify_val_loss(const ParameterSet& params, const ModelSpec& spec,
                         const DataSet& val, const TrainConfig& cfg) {
  double total_loss = 0.0;
  std::uint64_t total_examples = 0;
  for (std::size_t begin = 0; begin < val.size(); begin += cfg.batch_size) {
    const std::size_t end = std::min(val.size(), begin + cfg.batch_size);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    Batch batch = make_batch(val, idx, spec, Objective::Classify);
    total_loss += forward_loss(params, spec, batch, Objective::Classify) *
                  static_cast<double>(end - begin);
    total_examples += end - begin;
  }
  if (total_examples == 0) raise(ErrorKind::EmptyObjective, "empty validation set");
  return total_loss / static_cast<double>(total_examples);
}

}  // namespace

double dataset_metric(const ParameterSet& params, const ModelSpec& spec,
                      const DataSet& data, Objective objective,
                      SelectionMetric metric, const TrainConfig& cfg) {
  if (data.empty()) raise(ErrorKind::Evaluation, "empty evaluation set");
  switch (metric) {
    case SelectionMetric::ValLoss:
      return objective == Objective::Mlm ? mlm_val_loss(params, spec, data, cfg)
                                         : classify_val_loss(params, spec, data, cfg);
    case SelectionMetric::Accuracy:
      return accuracy(classify_dataset(params, spec, data, cfg.batch_size));
    case SelectionMetric::MacroF1:
      return macro_f1(classify_dataset(params, spec, data, cfg.batch_size));
  }
  raise(ErrorKind::Config, "unknown selection metric");
}

ObjectiveFns make_model_objective(const ModelSpec& spec, const TrainData& data,
                                  const TrainConfig& cfg) {
  if (data.train == nullptr || data.train->empty()) {
    raise(ErrorKind::EmptyObjective, "no training data");
  }
  if (data.objective == Objective::Classify && !data.train->labeled()) {
    raise(ErrorKind::Incompatibility, "classify objective needs labeled data");
  }
  const DataSet* train = data.train;
  const DataSet* val = data.val;
  const Objective objective = data.objective;
  const Rng base(cfg.seed);

  ObjectiveFns fns;
  fns.loss_grad = [train, spec, objective, cfg, base](const ParameterSet& params,
                                                      std::uint64_t step) {
    Rng step_rng = base.fork("batch", step);
    const std::vector<std::size_t> idx =
        sample_batch_indices(train->size(), cfg.batch_size, step_rng);
    Batch batch = make_batch(*train, idx, spec, objective);
    if (objective == Objective::Mlm) {
      mlm_mask(batch, spec, cfg.mlm_mask_prob, base.fork("mlm-mask", step).seed());
    }
    return backward(params, spec, batch, objective);
  };

  if (val != nullptr && !val->empty()) {
    const DataSet* val_ptr = val;
    fns.eval = [val_ptr, spec, objective, cfg](const ParameterSet& params) {
      return dataset_metric(params, spec, *val_ptr, objective, cfg.selection, cfg);
    };
    fns.eval_lower_is_better = cfg.selection == SelectionMetric::ValLoss;
  }
  return fns;
}

TrainResult full_finetune(const ParameterSet& start, const ModelSpec& spec,
                          const TrainData& data, const TrainConfig& cfg,
                          const FreezeSet& freeze) {
  const ObjectiveFns fns = make_model_objective(spec, data, cfg);
  return train_loop(start, fns, cfg, freeze, nullptr);
}

SparseFinetuneResult sparse_finetune(const ParameterSet& base, const BinaryMask& mask,
                                     const ModelSpec& spec, const TrainData& data,
                                     const TrainConfig& cfg, const FreezeSet& freeze) {
  SparseFinetuneResult result;
  if (mask.cardinality() == 0) {
    result.vector = extract_sparse(base, base, mask);
    result.params = base;
    result.degenerate_mask = cfg.max_steps > 0;
    return result;
  }
  const ObjectiveFns fns = make_model_objective(spec, data, cfg);
  TrainResult train = train_loop(base, fns, cfg, freeze, &mask);
  result.vector = extract_sparse(train.params, base, mask);
  result.params = std::move(train.params);
  result.log = std::move(train.log);
  return result;
}

}  // namespace deftx
