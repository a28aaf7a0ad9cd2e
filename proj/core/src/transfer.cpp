#include "deftx/transfer.hpp"

#include <algorithm>

#include "deftx/error.hpp"

namespace deftx {

const char* metric_name(Metric m) noexcept {
  switch (m) {
    case Metric::Accuracy: return "accuracy";
    case Metric::MacroF1: return "macro_f1";
  }
  return "unknown";
}

Metric parse_metric(const std::string& text) {
  if (text == "accuracy") return Metric::Accuracy;
  if (text == "macro_f1" || text == "f1") return Metric::MacroF1;
  raise(ErrorKind::Usage, "unknown metric '" + text + "'");
}

ParameterSet compose(const ParameterSet& base,
                     std::span<const ComposableVector> vectors) {
  ParameterSet out = base;
  if (vectors.empty()) return out;

  for (std::size_t t = 0; t < base.entries.size(); ++t) {
    const std::string& name = base.entries[t].name;
    const std::size_t numel = base.entries[t].tensor.numel();
    // (coordinate, addend) contributions from every vector
    std::vector<std::pair<std::uint64_t, double>> contributions;
    for (const ComposableVector& vec : vectors) {
      if (vec.is_sparse()) {
        for (const SparseSlice& slice : vec.sparse().slices) {
          if (slice.name != name) continue;
          if (slice.shape != base.entries[t].tensor.shape) {
            raise(ErrorKind::Incompatibility,
                  "vector shape mismatch for '" + name + "'");
          }
          for (std::size_t i = 0; i < slice.indices.size(); ++i) {
            contributions.emplace_back(slice.indices[i], slice.values[i]);
          }
        }
      } else {
        const NamedTensor* entry = vec.dense().find(name);
        if (entry == nullptr) {
          raise(ErrorKind::Incompatibility,
                "dense vector missing tensor '" + name + "'");
        }
        if (entry->tensor.shape != base.entries[t].tensor.shape) {
          raise(ErrorKind::Incompatibility, "vector shape mismatch for '" + name + "'");
        }
        for (std::size_t i = 0; i < numel; ++i) {
          contributions.emplace_back(i, entry->tensor.data[i]);
        }
      }
    }
    if (contributions.empty()) continue;
    // Ascending (coordinate, value) order makes the fold independent of
    // the order the vectors were supplied in.
    std::sort(contributions.begin(), contributions.end());
    auto& data = out.entries[t].tensor.data;
    std::size_t i = 0;
    while (i < contributions.size()) {
      const std::uint64_t idx = contributions[i].first;
      if (idx >= numel) {
        raise(ErrorKind::Incompatibility, "vector index out of range in '" + name + "'");
      }
      double sum = contributions[i].second;
      ++i;
      while (i < contributions.size() && contributions[i].first == idx) {
        sum += contributions[i].second;
        ++i;
      }
      data[idx] += sum;
    }
  }
  return out;
}

void apply_head(ParameterSet& params, const ParameterSet& head) {
  for (const NamedTensor& entry : head.entries) {
    if (entry.cls != TensorClass::Head) {
      raise(ErrorKind::Incompatibility,
            "head fragment holds non-head tensor '" + entry.name + "'");
    }
    NamedTensor* target = params.find(entry.name);
    if (target == nullptr || target->tensor.shape != entry.tensor.shape) {
      raise(ErrorKind::Incompatibility, "head tensor '" + entry.name + "' does not fit");
    }
    target->tensor = entry.tensor;
  }
}

ComposedModel compose_model(const ParameterSet& base, std::uint64_t base_digest,
                            std::span<const ComposableVector> vectors,
                            const ParameterSet* head) {
  ComposedModel out;
  out.params = compose(base, vectors);
  for (const ComposableVector& vec : vectors) {
    out.applied.push_back({vec.kind, !vec.is_sparse(), vec.config_digest,
                           vec.model_digest});
    if (vec.model_digest != 0 && base_digest != 0 && vec.model_digest != base_digest) {
      out.warnings.push_back("vector model digest mismatch: vector " +
                             std::to_string(vec.model_digest) + " vs base " +
                             std::to_string(base_digest));
    }
  }
  if (head != nullptr) apply_head(out.params, *head);
  return out;
}

namespace {

struct LanguageRun {
  DataSet train;
  DataSet val;
  SftConfig cfg;
};

LanguageRun prepare_language_run(const DataSet& corpus, const ParameterSet& base,
                                 SftConfig cfg, double val_fraction) {
  if (corpus.empty()) raise(ErrorKind::EmptyObjective, "empty corpus");
  LanguageRun run;
  auto split =
      split_dataset(corpus, val_fraction, Rng(cfg.phase1.seed).fork("lang-split").seed());
  run.train = std::move(split.first);
  run.val = std::move(split.second);
  for (const std::string& name : layer_norm_freeze_set(base)) cfg.freeze.insert(name);
  cfg.phase1.selection = SelectionMetric::ValLoss;
  cfg.phase2.selection = SelectionMetric::ValLoss;
  cfg.kind = VectorKind::Language;
  run.cfg = std::move(cfg);
  return run;
}

ParameterSet task_start_point(const ParameterSet& base,
                              const ComposableVector* source_language) {
  if (source_language == nullptr) return base;
  return compose(base, std::span<const ComposableVector>(source_language, 1));
}

}  // namespace

SftResult train_language_vector(const DataSet& corpus, const ParameterSet& base,
                                const ModelSpec& spec, SftConfig cfg,
                                double val_fraction) {
  const LanguageRun run = prepare_language_run(corpus, base, std::move(cfg), val_fraction);
  TrainData data;
  data.train = &run.train;
  data.val = &run.val;
  data.objective = Objective::Mlm;
  return deftx(base, spec, data, run.cfg);
}

AblationResult ablate_language_vector(AblationVariant variant, const DataSet& corpus,
                                      const ParameterSet& base, const ModelSpec& spec,
                                      SftConfig cfg, double val_fraction) {
  const LanguageRun run = prepare_language_run(corpus, base, std::move(cfg), val_fraction);
  TrainData data;
  data.train = &run.train;
  data.val = &run.val;
  data.objective = Objective::Mlm;
  return ablation(variant, base, spec, data, run.cfg);
}

TaskVectorResult train_task_vector(const DataSet& train, const DataSet& val,
                                   const ParameterSet& base, const ModelSpec& spec,
                                   const SparseVector* source_language,
                                   SftConfig cfg) {
  if (!train.labeled()) raise(ErrorKind::Incompatibility, "task data needs labels");
  ParameterSet start = base;
  if (source_language != nullptr) {
    const ComposableVector src = ComposableVector::from(*source_language);
    start = task_start_point(base, &src);
  }
  cfg.kind = VectorKind::Task;
  TrainData data;
  data.train = &train;
  data.val = &val;
  data.objective = Objective::Classify;
  SftResult sft = deftx(start, spec, data, cfg);

  TaskVectorResult out;
  out.vector = std::move(sft.vector);
  out.mask = std::move(sft.mask);
  if (!sft.head.has_value()) {
    raise(ErrorKind::Incompatibility, "task run produced no head");
  }
  out.head = std::move(*sft.head);
  out.phase1_log = std::move(sft.phase1_log);
  out.phase2_log = std::move(sft.phase2_log);
  return out;
}

AblationResult ablate_task_vector(AblationVariant variant, const DataSet& train,
                                  const DataSet& val, const ParameterSet& base,
                                  const ModelSpec& spec,
                                  const ComposableVector* source_language,
                                  SftConfig cfg) {
  if (!train.labeled()) raise(ErrorKind::Incompatibility, "task data needs labels");
  const ParameterSet start = task_start_point(base, source_language);
  cfg.kind = VectorKind::Task;
  TrainData data;
  data.train = &train;
  data.val = &val;
  data.objective = Objective::Classify;
  return ablation(variant, start, spec, data, cfg);
}

double zero_shot_eval(const ParameterSet& params, const ModelSpec& spec,
                      const DataSet& test, Metric metric, std::size_t batch_size) {
  if (test.empty()) raise(ErrorKind::Evaluation, "empty test set");
  const ConfusionMatrix cm = classify_dataset(params, spec, test, batch_size);
  return metric == Metric::Accuracy ? accuracy(cm) : macro_f1(cm);
}

}  // namespace deftx
