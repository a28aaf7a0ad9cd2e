#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deftx/config.hpp"
#include "deftx/deft.hpp"
#include "deftx/model.hpp"
#include "deftx/store.hpp"
#include "deftx/synthdata.hpp"
#include "deftx/transfer.hpp"

namespace deftx::cli {

// Resolved experiment configuration: everything a run needs, derived from
// the config file plus flag overrides. Data and training seeds are pure
// functions of the [data]/[lang]/[task] seeds and the role, so any two
// invocations with equal resolved configs produce identical artifacts.
struct Experiment {
  Config raw;
  ModelSpec model;
  SynthSpec synth;
  double epsilon = 0.5;
  std::uint64_t data_seed = 42;
  std::size_t n_languages = 4;
  // Only languages with id < pretrain_languages enter the pretraining
  // mix; ids beyond it stand in for languages unseen at pretraining time.
  std::size_t pretrain_languages = 3;
  std::int32_t source_language = 0;
  std::int32_t target_language = 3;

  std::size_t pretrain_sentences = 2000;
  std::size_t lang_sentences = 2000;
  std::size_t task_train_examples = 900;
  std::size_t task_val_examples = 240;
  std::size_t task_test_examples = 600;
  TaskSpec task;

  TrainConfig pretrain_cfg;
  double pretrain_val_fraction = 0.05;

  TrainConfig lang_cfg;
  double lang_k_fraction = 0.028;
  RankPolicy lang_rank = RankPolicy::variance_fraction(0.9);
  double lang_retain = 0.05;
  double lang_val_fraction = 0.05;

  TrainConfig task_cfg;
  double task_k_fraction = 0.052;
  RankPolicy task_rank = RankPolicy::variance_fraction(0.9);
  double task_retain = 0.05;

  bool denoise_embeddings = true;
  std::size_t workers = 1;

  static Experiment from_config(const Config& config);
  // Serialized back into a config; used for manifests.
  Config resolved() const;

  LanguageSpec language(std::int32_t id) const;
  DataSet pretrain_corpus() const;          // all languages mixed
  DataSet language_corpus(std::int32_t id) const;
  DataSet task_train(std::int32_t lang_id) const;
  DataSet task_val(std::int32_t lang_id) const;
  DataSet task_test(std::int32_t lang_id) const;

  // Budgets counted over the eligible scalars of the respective run.
  std::size_t language_budget(const ParameterSet& base) const;
  std::size_t task_budget(const ParameterSet& base) const;

  SftConfig language_sft_config(const ParameterSet& base, std::int32_t lang_id,
                                bool denoise) const;
  SftConfig task_sft_config(const ParameterSet& base, bool denoise) const;
};

// Pipeline pieces shared by the subcommands and `ablate`; `ablate
// --variant=none` must match the four-command recipe bit for bit, so both
// paths go through these.
ParameterSet run_pretrain(const Experiment& exp, const ModelSpec& spec,
                          std::vector<TrainLogRecord>* log);
SftResult run_train_lang(const Experiment& exp, const ParameterSet& base,
                         const ModelSpec& spec, std::int32_t lang_id, bool denoise);
TaskVectorResult run_train_task(const Experiment& exp, const ParameterSet& base,
                                const ModelSpec& spec,
                                const SparseVector* source_vector, bool denoise);

struct ManifestEntry {
  std::string key;
  std::string value;
};

// `<output>.manifest`: command, resolved config, and input/output digests.
void write_manifest(const std::filesystem::path& output,
                    const std::string& command, const Config& resolved,
                    const std::vector<ManifestEntry>& inputs,
                    const std::vector<ManifestEntry>& outputs);

void write_text_file(const std::filesystem::path& path, const std::string& text);
void write_train_log(const std::filesystem::path& path,
                     const std::vector<TrainLogRecord>& log);

}  // namespace deftx::cli
