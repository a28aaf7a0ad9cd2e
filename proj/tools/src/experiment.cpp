#include "deftx/cli/experiment.hpp"

#include <cmath>
#include <fstream>

#include "deftx/error.hpp"
#include "deftx/optim.hpp"

namespace deftx::cli {

namespace {

TrainConfig train_config_from(const Config& config, std::string_view section,
                              const TrainConfig& defaults) {
  TrainConfig cfg = defaults;
  cfg.lr = config.get_double(section, "lr", cfg.lr);
  cfg.max_steps = config.get_u64(section, "max_steps", cfg.max_steps);
  cfg.batch_size = config.get_u64(section, "batch_size", cfg.batch_size);
  cfg.seed = config.get_u64(section, "seed", cfg.seed);
  cfg.beta1 = config.get_double(section, "beta1", cfg.beta1);
  cfg.beta2 = config.get_double(section, "beta2", cfg.beta2);
  cfg.epsilon = config.get_double(section, "adam_epsilon", cfg.epsilon);
  cfg.weight_decay = config.get_double(section, "weight_decay", cfg.weight_decay);
  cfg.l1_lambda = config.get_double(section, "l1_lambda", cfg.l1_lambda);
  cfg.eval_interval = config.get_u64(section, "eval_interval", cfg.eval_interval);
  cfg.mlm_mask_prob = config.get_double(section, "mlm_mask_prob", cfg.mlm_mask_prob);
  const std::string selection =
      config.get_string(section, "selection", "val_loss");
  if (selection == "val_loss") {
    cfg.selection = SelectionMetric::ValLoss;
  } else if (selection == "accuracy") {
    cfg.selection = SelectionMetric::Accuracy;
  } else if (selection == "f1" || selection == "macro_f1") {
    cfg.selection = SelectionMetric::MacroF1;
  } else {
    raise(ErrorKind::Config, "unknown selection metric '" + selection + "'");
  }
  cfg.validate();
  return cfg;
}

void store_train_config(Config& out, std::string_view section, const TrainConfig& cfg) {
  out.set_double(section, "lr", cfg.lr);
  out.set_u64(section, "max_steps", cfg.max_steps);
  out.set_u64(section, "batch_size", cfg.batch_size);
  out.set_u64(section, "seed", cfg.seed);
  out.set_double(section, "beta1", cfg.beta1);
  out.set_double(section, "beta2", cfg.beta2);
  out.set_double(section, "adam_epsilon", cfg.epsilon);
  out.set_double(section, "weight_decay", cfg.weight_decay);
  out.set_double(section, "l1_lambda", cfg.l1_lambda);
  out.set_u64(section, "eval_interval", cfg.eval_interval);
  out.set_double(section, "mlm_mask_prob", cfg.mlm_mask_prob);
  const char* selection = cfg.selection == SelectionMetric::ValLoss ? "val_loss"
                          : cfg.selection == SelectionMetric::Accuracy ? "accuracy"
                                                                       : "f1";
  out.set(section, "selection", selection);
}

std::uint64_t mix_seed(std::uint64_t seed, std::string_view role, std::uint64_t index) {
  return Rng(seed).fork(role, index).seed();
}

}  // namespace

Experiment Experiment::from_config(const Config& config) {
  Experiment exp;
  exp.raw = config;

  exp.model.vocab_size = config.get_u64("model", "vocab_size", 64);
  exp.model.d_model = config.get_u64("model", "d_model", 32);
  exp.model.n_layers = config.get_u64("model", "n_layers", 2);
  exp.model.n_heads = config.get_u64("model", "n_heads", 4);
  exp.model.d_ff = config.get_u64("model", "d_ff", 64);
  exp.model.max_seq_len = config.get_u64("model", "max_seq_len", 24);
  exp.model.n_classes = config.get_u64("model", "n_classes", 3);
  exp.model.validate();

  exp.synth.vocab_size = exp.model.vocab_size;
  exp.synth.n_classes = exp.model.n_classes;
  exp.synth.markers_per_class = config.get_u64("data", "markers_per_class", 8);
  exp.synth.anchors_per_class = config.get_u64("data", "anchors_per_class", 4);
  exp.synth.chain_seed = config.get_u64("data", "chain_seed", 1234);
  exp.synth.successors = config.get_u64("data", "successors", 6);
  exp.synth.min_sentence_len = config.get_u64("data", "min_sentence_len", 10);
  exp.synth.max_sentence_len =
      config.get_u64("data", "max_sentence_len", exp.model.max_seq_len - 2);
  exp.synth.validate();
  if (exp.synth.max_sentence_len + 1 > exp.model.max_seq_len) {
    raise(ErrorKind::Config, "max_sentence_len does not fit max_seq_len with [CLS]");
  }

  exp.epsilon = config.get_double("data", "epsilon", 0.5);
  exp.data_seed = config.get_u64("data", "seed", 42);
  exp.n_languages = config.get_u64("data", "n_languages", 4);
  exp.pretrain_languages =
      config.get_u64("data", "pretrain_languages",
                     exp.n_languages > 1 ? exp.n_languages - 1 : exp.n_languages);
  if (exp.pretrain_languages == 0 || exp.pretrain_languages > exp.n_languages) {
    raise(ErrorKind::Config, "pretrain_languages out of range");
  }
  exp.source_language =
      static_cast<std::int32_t>(config.get_u64("data", "source_language", 0));
  exp.target_language = static_cast<std::int32_t>(config.get_u64(
      "data", "target_language", static_cast<std::uint64_t>(exp.n_languages - 1)));
  if (exp.source_language < 0 ||
      static_cast<std::size_t>(exp.source_language) >= exp.n_languages ||
      exp.target_language < 0 ||
      static_cast<std::size_t>(exp.target_language) >= exp.n_languages) {
    raise(ErrorKind::Config, "source/target language out of range");
  }

  exp.pretrain_sentences = config.get_u64("data", "pretrain_sentences", 2000);
  exp.lang_sentences = config.get_u64("data", "lang_sentences", 2000);
  exp.task_train_examples = config.get_u64("data", "task_train_examples", 900);
  exp.task_val_examples = config.get_u64("data", "task_val_examples", 240);
  exp.task_test_examples = config.get_u64("data", "task_test_examples", 600);
  exp.task.plant_min = config.get_u64("data", "plant_min", 3);
  exp.task.distractors = config.get_u64("data", "distractors", 1);
  exp.task.emission_sharpness =
      config.get_double("data", "emission_sharpness", 2.0);

  TrainConfig pretrain_defaults;
  pretrain_defaults.lr = 1e-3;
  pretrain_defaults.max_steps = 1200;
  pretrain_defaults.batch_size = 16;
  pretrain_defaults.seed = 1;
  pretrain_defaults.eval_interval = 200;
  exp.pretrain_cfg = train_config_from(config, "pretrain", pretrain_defaults);
  exp.pretrain_val_fraction = config.get_double("pretrain", "val_fraction", 0.05);

  TrainConfig lang_defaults;
  lang_defaults.lr = 1e-3;
  lang_defaults.max_steps = 500;
  lang_defaults.batch_size = 16;
  lang_defaults.seed = 7;
  lang_defaults.eval_interval = 100;
  lang_defaults.l1_lambda = 0.1;
  exp.lang_cfg = train_config_from(config, "lang", lang_defaults);
  exp.lang_k_fraction = config.get_double("lang", "k_fraction", 0.028);
  exp.lang_rank = RankPolicy::parse(config.get_string("lang", "rank", "var:0.9"));
  exp.lang_retain = config.get_double("lang", "retain_fraction", 0.05);
  exp.lang_val_fraction = config.get_double("lang", "val_fraction", 0.05);

  TrainConfig task_defaults;
  task_defaults.lr = 1e-3;
  task_defaults.max_steps = 400;
  task_defaults.batch_size = 16;
  task_defaults.seed = 9;
  task_defaults.eval_interval = 100;
  task_defaults.selection = SelectionMetric::Accuracy;
  exp.task_cfg = train_config_from(config, "task", task_defaults);
  exp.task_k_fraction = config.get_double("task", "k_fraction", 0.052);
  exp.task_rank = RankPolicy::parse(config.get_string("task", "rank", "var:0.9"));
  exp.task_retain = config.get_double("task", "retain_fraction", 0.05);

  exp.denoise_embeddings = config.get_bool("lang", "denoise_embeddings", true);
  exp.workers = config.get_u64("run", "workers", 1);
  return exp;
}

Config Experiment::resolved() const {
  Config out;
  out.set_u64("model", "vocab_size", model.vocab_size);
  out.set_u64("model", "d_model", model.d_model);
  out.set_u64("model", "n_layers", model.n_layers);
  out.set_u64("model", "n_heads", model.n_heads);
  out.set_u64("model", "d_ff", model.d_ff);
  out.set_u64("model", "max_seq_len", model.max_seq_len);
  out.set_u64("model", "n_classes", model.n_classes);

  out.set_u64("data", "seed", data_seed);
  out.set_double("data", "epsilon", epsilon);
  out.set_u64("data", "n_languages", n_languages);
  out.set_u64("data", "pretrain_languages", pretrain_languages);
  out.set_u64("data", "source_language", static_cast<std::uint64_t>(source_language));
  out.set_u64("data", "target_language", static_cast<std::uint64_t>(target_language));
  out.set_u64("data", "chain_seed", synth.chain_seed);
  out.set_u64("data", "markers_per_class", synth.markers_per_class);
  out.set_u64("data", "anchors_per_class", synth.anchors_per_class);
  out.set_u64("data", "successors", synth.successors);
  out.set_u64("data", "min_sentence_len", synth.min_sentence_len);
  out.set_u64("data", "max_sentence_len", synth.max_sentence_len);
  out.set_u64("data", "pretrain_sentences", pretrain_sentences);
  out.set_u64("data", "lang_sentences", lang_sentences);
  out.set_u64("data", "task_train_examples", task_train_examples);
  out.set_u64("data", "task_val_examples", task_val_examples);
  out.set_u64("data", "task_test_examples", task_test_examples);
  out.set_u64("data", "plant_min", task.plant_min);
  out.set_u64("data", "distractors", task.distractors);
  out.set_double("data", "emission_sharpness", task.emission_sharpness);

  store_train_config(out, "pretrain", pretrain_cfg);
  out.set_double("pretrain", "val_fraction", pretrain_val_fraction);

  store_train_config(out, "lang", lang_cfg);
  out.set_double("lang", "k_fraction", lang_k_fraction);
  out.set("lang", "rank", lang_rank.to_string());
  out.set_double("lang", "retain_fraction", lang_retain);
  out.set_double("lang", "val_fraction", lang_val_fraction);
  out.set("lang", "denoise_embeddings", denoise_embeddings ? "true" : "false");

  store_train_config(out, "task", task_cfg);
  out.set_double("task", "k_fraction", task_k_fraction);
  out.set("task", "rank", task_rank.to_string());
  out.set_double("task", "retain_fraction", task_retain);

  out.set_u64("run", "workers", workers);
  return out;
}

LanguageSpec Experiment::language(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= n_languages) {
    raise(ErrorKind::Config, "language id " + std::to_string(id) + " out of range");
  }
  LanguageSpec lang;
  lang.shared = synth;
  lang.language_id = id;
  lang.epsilon = epsilon;
  return lang;
}

DataSet Experiment::pretrain_corpus() const {
  DataSet mixed;
  for (std::size_t id = 0; id < pretrain_languages; ++id) {
    const DataSet part =
        gen_corpus(language(static_cast<std::int32_t>(id)), pretrain_sentences,
                   mix_seed(data_seed, "pretrain-corpus", id));
    mixed.sentences.insert(mixed.sentences.end(), part.sentences.begin(),
                           part.sentences.end());
  }
  return mixed;
}

DataSet Experiment::language_corpus(std::int32_t id) const {
  return gen_corpus(language(id), lang_sentences,
                    mix_seed(data_seed, "lang-corpus", static_cast<std::uint64_t>(id)));
}

DataSet Experiment::task_train(std::int32_t lang_id) const {
  return gen_task_data(language(lang_id), task, task_train_examples,
                       mix_seed(data_seed, "task-train",
                                static_cast<std::uint64_t>(lang_id)));
}

DataSet Experiment::task_val(std::int32_t lang_id) const {
  return gen_task_data(language(lang_id), task, task_val_examples,
                       mix_seed(data_seed, "task-val",
                                static_cast<std::uint64_t>(lang_id)));
}

DataSet Experiment::task_test(std::int32_t lang_id) const {
  return gen_task_data(language(lang_id), task, task_test_examples,
                       mix_seed(data_seed, "task-test",
                                static_cast<std::uint64_t>(lang_id)));
}

namespace {

std::size_t eligible_scalars(const ParameterSet& base, const FreezeSet& freeze) {
  std::size_t count = 0;
  for (const std::string& name : eligible_tensor_names(base, freeze)) {
    count += base.find(name)->tensor.numel();
  }
  return count;
}

}  // namespace

std::size_t Experiment::language_budget(const ParameterSet& base) const {
  const FreezeSet freeze = layer_norm_freeze_set(base);
  const double count = static_cast<double>(eligible_scalars(base, freeze));
  return static_cast<std::size_t>(std::llround(lang_k_fraction * count));
}

std::size_t Experiment::task_budget(const ParameterSet& base) const {
  const double count = static_cast<double>(eligible_scalars(base, {}));
  return static_cast<std::size_t>(std::llround(task_k_fraction * count));
}

SftConfig Experiment::language_sft_config(const ParameterSet& base,
                                          std::int32_t lang_id, bool denoise) const {
  SftConfig cfg;
  cfg.phase1 = lang_cfg;
  cfg.phase1.seed = mix_seed(lang_cfg.seed, "lang-phase1",
                             static_cast<std::uint64_t>(lang_id));
  cfg.phase2 = lang_cfg;
  cfg.phase2.seed = mix_seed(lang_cfg.seed, "lang-phase2",
                             static_cast<std::uint64_t>(lang_id));
  cfg.denoise.rank_policy = lang_rank;
  cfg.denoise.residual_retain_fraction = lang_retain;
  cfg.denoise.workers = workers;
  if (!denoise_embeddings) cfg.denoise.denoise_classes.erase(TensorClass::Embedding);
  cfg.budget = language_budget(base);
  cfg.freeze = layer_norm_freeze_set(base);
  cfg.denoise_enabled = denoise;
  cfg.kind = VectorKind::Language;
  return cfg;
}

SftConfig Experiment::task_sft_config(const ParameterSet& base, bool denoise) const {
  SftConfig cfg;
  cfg.phase1 = task_cfg;
  cfg.phase1.seed = mix_seed(task_cfg.seed, "task-phase1", 0);
  cfg.phase2 = task_cfg;
  cfg.phase2.seed = mix_seed(task_cfg.seed, "task-phase2", 0);
  cfg.denoise.rank_policy = task_rank;
  cfg.denoise.residual_retain_fraction = task_retain;
  cfg.denoise.workers = workers;
  if (!denoise_embeddings) cfg.denoise.denoise_classes.erase(TensorClass::Embedding);
  cfg.budget = task_budget(base);
  cfg.denoise_enabled = denoise;
  cfg.kind = VectorKind::Task;
  return cfg;
}

ParameterSet run_pretrain(const Experiment& exp, const ModelSpec& spec,
                          std::vector<TrainLogRecord>* log) {
  const DataSet corpus = exp.pretrain_corpus();
  const auto [train, val] = split_dataset(
      corpus, exp.pretrain_val_fraction, mix_seed(exp.data_seed, "pretrain-split", 0));
  Rng init_rng(mix_seed(exp.pretrain_cfg.seed, "init", 0));
  const ParameterSet start = init_params(spec, init_rng);
  TrainData data;
  data.train = &train;
  data.val = &val;
  data.objective = Objective::Mlm;
  TrainResult result = full_finetune(start, spec, data, exp.pretrain_cfg, {});
  if (log != nullptr) *log = std::move(result.log);
  return std::move(result.params);
}

SftResult run_train_lang(const Experiment& exp, const ParameterSet& base,
                         const ModelSpec& spec, std::int32_t lang_id, bool denoise) {
  const DataSet corpus = exp.language_corpus(lang_id);
  const SftConfig cfg = exp.language_sft_config(base, lang_id, denoise);
  return train_language_vector(corpus, base, spec, cfg, exp.lang_val_fraction);
}

TaskVectorResult run_train_task(const Experiment& exp, const ParameterSet& base,
                                const ModelSpec& spec,
                                const SparseVector* source_vector, bool denoise) {
  const DataSet train = exp.task_train(exp.source_language);
  const DataSet val = exp.task_val(exp.source_language);
  const SftConfig cfg = exp.task_sft_config(base, denoise);
  return train_task_vector(train, val, base, spec, source_vector, cfg);
}

void write_manifest(const std::filesystem::path& output, const std::string& command,
                    const Config& resolved, const std::vector<ManifestEntry>& inputs,
                    const std::vector<ManifestEntry>& outputs) {
  Config manifest;
  manifest.set("run", "command", command);
  manifest.set_u64("run", "format_version", 1);
  for (const ManifestEntry& entry : inputs) {
    manifest.set("inputs", entry.key, entry.value);
  }
  for (const ManifestEntry& entry : outputs) {
    manifest.set("outputs", entry.key, entry.value);
  }
  for (const Config::Section& section : resolved.sections()) {
    for (const auto& [key, value] : section.entries) {
      manifest.set("config." + section.name, key, value);
    }
  }
  save_config_file(output.string() + ".manifest", manifest);
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) raise(ErrorKind::Io, "failed writing '" + path.string() + "'");
}

void write_train_log(const std::filesystem::path& path,
                     const std::vector<TrainLogRecord>& log) {
  std::string text = "step\tlr\ttrain_loss\teval_metric\n";
  for (const TrainLogRecord& rec : log) {
    text += format_log_record(rec);
    text += '\n';
  }
  write_text_file(path, text);
}

}  // namespace deftx::cli
