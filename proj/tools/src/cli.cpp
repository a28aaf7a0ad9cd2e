#include "deftx/cli/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "deftx/analysis.hpp"
#include "deftx/cli/experiment.hpp"
#include "deftx/error.hpp"
#include "deftx/metrics.hpp"
#include "deftx/optim.hpp"

namespace deftx::cli {

namespace fs = std::filesystem;

namespace {

// Exit codes, one per error class; documented in --help and the README.
int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return 2;
    case ErrorKind::Io: return 3;
    case ErrorKind::Format: return 4;
    case ErrorKind::Dimensionality:
    case ErrorKind::NumericInput:
    case ErrorKind::Budget:
    case ErrorKind::Incompatibility:
    case ErrorKind::Validation:
    case ErrorKind::Config: return 5;
    case ErrorKind::TrainingFailure: return 6;
    case ErrorKind::EmptyObjective:
    case ErrorKind::Evaluation: return 7;
  }
  return 1;
}

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> steps;
  std::optional<double> epsilon;
  std::optional<std::size_t> workers;
};

Experiment load_experiment(const CommonOptions& common) {
  Config config;
  if (!common.config_path.empty()) {
    config = load_config_file(common.config_path);
  }
  Experiment exp = Experiment::from_config(config);
  if (common.epsilon) exp.epsilon = *common.epsilon;
  if (common.workers) exp.workers = *common.workers;
  if (common.seed) {
    exp.pretrain_cfg.seed = *common.seed;
    exp.lang_cfg.seed = *common.seed;
    exp.task_cfg.seed = *common.seed;
  }
  if (common.steps) {
    exp.pretrain_cfg.max_steps = *common.steps;
    exp.lang_cfg.max_steps = *common.steps;
    exp.task_cfg.max_steps = *common.steps;
  }
  return exp;
}

void require_input(const std::string& path, const char* what) {
  if (path.empty()) raise(ErrorKind::Usage, std::string("missing ") + what);
  if (!fs::exists(path)) {
    raise(ErrorKind::Io, std::string(what) + " '" + path + "' does not exist");
  }
}

ComposableVector composable_from_file(const fs::path& path) {
  const std::string magic = peek_magic(path);
  if (magic == "DFTS") {
    return ComposableVector::from(load_sparse_vector(path));
  }
  if (magic == "DFTX") {
    LoadedCheckpoint loaded = load_checkpoint(path);
    ComposableVector out;
    out.kind = VectorKind::Other;
    out.model_digest = loaded.spec.digest();
    out.payload = std::move(loaded.params);
    return out;
  }
  raise(ErrorKind::Format,
        "'" + path.string() + "' is neither a vector nor a tensor set");
}

ManifestEntry digest_entry(const std::string& key, const fs::path& path) {
  return {key, std::to_string(file_digest(path))};
}

int cmd_pretrain(const CommonOptions& common, const std::string& out_path) {
  const Experiment exp = load_experiment(common);
  std::vector<TrainLogRecord> log;
  const ParameterSet params = run_pretrain(exp, exp.model, &log);
  save_checkpoint(out_path, params, exp.model);
  write_train_log(out_path + ".train.log", log);
  std::vector<ManifestEntry> inputs;
  if (!common.config_path.empty()) {
    inputs.push_back(digest_entry("config", common.config_path));
  }
  write_manifest(out_path, "pretrain", exp.resolved(), inputs,
                 {digest_entry("out", out_path)});
  std::cout << "pretrained " << params.scalar_count() << " scalars -> " << out_path
            << "\n";
  return 0;
}

struct VectorFlags {
  std::string method = "deftx";
  std::string rank;
  std::optional<double> k_fraction;
  std::optional<double> retain;
};

bool method_denoises(const std::string& method) {
  if (method == "deftx") return true;
  if (method == "lt-sft") return false;
  raise(ErrorKind::Usage, "unknown method '" + method + "' (expected deftx or lt-sft)");
}

LoadedCheckpoint load_base(const Experiment& exp, const std::string& theta0_path) {
  LoadedCheckpoint base = load_checkpoint(theta0_path);
  if (base.spec.digest() != exp.model.digest()) {
    raise(ErrorKind::Incompatibility,
          "checkpoint model spec does not match the configuration");
  }
  return base;
}

int cmd_train_lang(const CommonOptions& common, const std::string& theta0_path,
                   std::int32_t lang_id, const VectorFlags& flags,
                   const std::string& out_path, const std::string& mask_out) {
  require_input(theta0_path, "--theta0 checkpoint");
  Experiment exp = load_experiment(common);
  if (!flags.rank.empty()) exp.lang_rank = RankPolicy::parse(flags.rank);
  if (flags.k_fraction) exp.lang_k_fraction = *flags.k_fraction;
  if (flags.retain) exp.lang_retain = *flags.retain;
  const bool denoise = method_denoises(flags.method);

  const LoadedCheckpoint base = load_base(exp, theta0_path);
  const SftResult result = run_train_lang(exp, base.params, exp.model, lang_id, denoise);
  save_sparse_vector(out_path, result.vector);
  if (!mask_out.empty()) save_mask(mask_out, result.mask);
  write_train_log(out_path + ".train.log", result.phase2_log.empty()
                                               ? result.phase1_log
                                               : result.phase2_log);
  write_text_file(out_path + ".sparsity.tsv",
                  sparsity_report_tsv(sparsity_report(result.vector)));

  Config resolved = exp.resolved();
  resolved.set("run", "method", flags.method);
  resolved.set_u64("run", "language", static_cast<std::uint64_t>(lang_id));
  std::vector<ManifestEntry> inputs{digest_entry("theta0", theta0_path)};
  if (!common.config_path.empty()) {
    inputs.push_back(digest_entry("config", common.config_path));
  }
  std::vector<ManifestEntry> outputs{digest_entry("out", out_path)};
  if (!mask_out.empty()) outputs.push_back(digest_entry("mask", mask_out));
  write_manifest(out_path, "train-lang", resolved, inputs, outputs);

  std::cout << "language vector for language " << lang_id << ": support "
            << result.vector.support_size() << " -> " << out_path << "\n";
  return 0;
}

int cmd_train_task(const CommonOptions& common, const std::string& theta0_path,
                   const std::string& source_vector_path, const VectorFlags& flags,
                   const std::string& out_path, const std::string& head_out,
                   const std::string& mask_out) {
  require_input(theta0_path, "--theta0 checkpoint");
  Experiment exp = load_experiment(common);
  if (!flags.rank.empty()) exp.task_rank = RankPolicy::parse(flags.rank);
  if (flags.k_fraction) exp.task_k_fraction = *flags.k_fraction;
  if (flags.retain) exp.task_retain = *flags.retain;
  const bool denoise = method_denoises(flags.method);

  const LoadedCheckpoint base = load_base(exp, theta0_path);
  std::optional<SparseVector> source;
  if (!source_vector_path.empty()) {
    require_input(source_vector_path, "--source-lang-vector");
    source = load_sparse_vector(source_vector_path);
  }
  const TaskVectorResult result =
      run_train_task(exp, base.params, exp.model, source ? &*source : nullptr, denoise);
  save_sparse_vector(out_path, result.vector);
  const std::string head_path = head_out.empty() ? out_path + ".head.dftx" : head_out;
  save_checkpoint(head_path, result.head, exp.model);
  if (!mask_out.empty()) save_mask(mask_out, result.mask);
  write_train_log(out_path + ".train.log", result.phase2_log);
  write_text_file(out_path + ".sparsity.tsv",
                  sparsity_report_tsv(sparsity_report(result.vector)));

  Config resolved = exp.resolved();
  resolved.set("run", "method", flags.method);
  std::vector<ManifestEntry> inputs{digest_entry("theta0", theta0_path)};
  if (!source_vector_path.empty()) {
    inputs.push_back(digest_entry("source_lang_vector", source_vector_path));
  }
  if (!common.config_path.empty()) {
    inputs.push_back(digest_entry("config", common.config_path));
  }
  std::vector<ManifestEntry> outputs{digest_entry("out", out_path),
                                     digest_entry("head", head_path)};
  if (!mask_out.empty()) outputs.push_back(digest_entry("mask", mask_out));
  write_manifest(out_path, "train-task", resolved, inputs, outputs);

  std::cout << "task vector: support " << result.vector.support_size() << " -> "
            << out_path << " (head " << head_path << ")\n";
  return 0;
}

int cmd_compose(const std::string& theta0_path,
                const std::vector<std::string>& vector_paths,
                const std::string& head_path, const std::string& out_path) {
  require_input(theta0_path, "--theta0 checkpoint");
  const LoadedCheckpoint base = load_checkpoint(theta0_path);
  std::vector<ComposableVector> vectors;
  for (const std::string& path : vector_paths) {
    require_input(path, "--vector file");
    vectors.push_back(composable_from_file(path));
  }
  std::optional<ParameterSet> head;
  if (!head_path.empty()) {
    require_input(head_path, "--head file");
    head = load_checkpoint(head_path).params;
  }
  const ComposedModel composed =
      compose_model(base.params, base.spec.digest(), vectors, head ? &*head : nullptr);
  for (const std::string& warning : composed.warnings) {
    std::cerr << "warning: " << warning << "\n";
  }
  save_checkpoint(out_path, composed.params, base.spec);

  Config resolved;
  resolved.set_u64("run", "n_vectors", vectors.size());
  for (std::size_t i = 0; i < composed.applied.size(); ++i) {
    const Provenance& p = composed.applied[i];
    const std::string key = "vector" + std::to_string(i);
    resolved.set("provenance", key + ".kind", vector_kind_name(p.kind));
    resolved.set("provenance", key + ".dense", p.dense ? "true" : "false");
    resolved.set_u64("provenance", key + ".config_digest", p.config_digest);
    resolved.set_u64("provenance", key + ".model_digest", p.model_digest);
  }
  std::vector<ManifestEntry> inputs{digest_entry("theta0", theta0_path)};
  for (std::size_t i = 0; i < vector_paths.size(); ++i) {
    inputs.push_back(digest_entry("vector" + std::to_string(i), vector_paths[i]));
  }
  if (!head_path.empty()) inputs.push_back(digest_entry("head", head_path));
  write_manifest(out_path, "compose", resolved, inputs, {digest_entry("out", out_path)});
  std::cout << "composed " << vectors.size() << " vector(s) -> " << out_path << "\n";
  return 0;
}

int cmd_eval(const CommonOptions& common, const std::string& model_path,
             const std::string& head_path, std::int32_t lang_id,
             const std::string& metric_text, const std::string& out_path) {
  require_input(model_path, "--model checkpoint");
  const Experiment exp = load_experiment(common);
  const Metric metric = parse_metric(metric_text);
  LoadedCheckpoint model = load_checkpoint(model_path);
  if (!head_path.empty()) {
    require_input(head_path, "--head file");
    apply_head(model.params, load_checkpoint(head_path).params);
  }
  const DataSet test = exp.task_test(lang_id);
  const double score =
      zero_shot_eval(model.params, exp.model, test, metric, exp.task_cfg.batch_size);
  std::cout << metric_name(metric) << "\t" << score << "\n";
  if (!out_path.empty()) {
    std::string text = "language\tmetric\tscore\n";
    text += std::to_string(lang_id) + "\t" + metric_name(metric) + "\t" +
            std::to_string(score) + "\n";
    write_text_file(out_path, text);
    Config resolved = exp.resolved();
    resolved.set("run", "metric", metric_name(metric));
    resolved.set_u64("run", "language", static_cast<std::uint64_t>(lang_id));
    std::vector<ManifestEntry> inputs{digest_entry("model", model_path)};
    if (!head_path.empty()) inputs.push_back(digest_entry("head", head_path));
    write_manifest(out_path, "eval", resolved, inputs, {digest_entry("out", out_path)});
  }
  return 0;
}

int cmd_overlap(const std::vector<std::string>& vector_paths,
                const std::string& out_path, const std::string& long_out) {
  if (vector_paths.size() < 2) {
    raise(ErrorKind::Usage, "overlap needs at least two --vector files");
  }
  std::vector<BinaryMask> masks;
  std::vector<std::string> names;
  for (const std::string& path : vector_paths) {
    require_input(path, "--vector file");
    masks.push_back(load_sparse_vector(path).support());
    names.push_back(fs::path(path).stem().string());
  }
  const auto directional = overlap_matrix(masks);
  std::vector<std::vector<double>> jaccard(masks.size(),
                                           std::vector<double>(masks.size(), 1.0));
  for (std::size_t i = 0; i < masks.size(); ++i) {
    for (std::size_t j = 0; j < masks.size(); ++j) {
      if (i != j) jaccard[i][j] = jaccard_overlap(masks[i], masks[j]);
    }
  }
  const std::string table = overlap_matrix_tsv(names, directional, jaccard);
  if (out_path.empty()) {
    std::cout << table;
  } else {
    write_text_file(out_path, table);
    std::vector<ManifestEntry> inputs;
    for (std::size_t i = 0; i < vector_paths.size(); ++i) {
      inputs.push_back(digest_entry("vector" + std::to_string(i), vector_paths[i]));
    }
    Config resolved;
    resolved.set_u64("run", "n_vectors", vector_paths.size());
    write_manifest(out_path, "overlap", resolved, inputs,
                   {digest_entry("out", out_path)});
  }
  if (!long_out.empty()) {
    write_text_file(long_out, overlap_long_format(names, directional, jaccard));
  }
  return 0;
}

struct AblateArtifacts {
  ComposedModel composed;
  std::optional<ParameterSet> head;
  double target_score = 0.0;
};

AblateArtifacts run_cross_lingual(const Experiment& exp, const ParameterSet& base,
                                  AblationVariant variant, bool use_source_vector) {
  const ModelSpec& spec = exp.model;

  std::optional<ComposableVector> source;
  if (use_source_vector) {
    AblationResult src = ablate_language_vector(
        variant, exp.language_corpus(exp.source_language), base, spec,
        exp.language_sft_config(base, exp.source_language, true),
        exp.lang_val_fraction);
    source = std::move(src.vector);
  }

  AblationResult task = ablate_task_vector(
      variant, exp.task_train(exp.source_language), exp.task_val(exp.source_language),
      base, spec, source ? &*source : nullptr, exp.task_sft_config(base, true));

  AblationResult target = ablate_language_vector(
      variant, exp.language_corpus(exp.target_language), base, spec,
      exp.language_sft_config(base, exp.target_language, true), exp.lang_val_fraction);

  AblateArtifacts out;
  std::vector<ComposableVector> vectors{std::move(task.vector),
                                        std::move(target.vector)};
  out.head = std::move(task.head);
  out.composed =
      compose_model(base, spec.digest(), vectors, out.head ? &*out.head : nullptr);
  out.target_score =
      zero_shot_eval(out.composed.params, spec, exp.task_test(exp.target_language),
                     Metric::Accuracy, exp.task_cfg.batch_size);
  return out;
}

int cmd_ablate(const CommonOptions& common, const std::string& theta0_path,
               const std::string& variant_text, bool no_source_vector,
               const std::string& out_path, const std::string& head_out) {
  require_input(theta0_path, "--theta0 checkpoint");
  const Experiment exp = load_experiment(common);
  const AblationVariant variant = parse_ablation_variant(variant_text);
  const LoadedCheckpoint base = load_base(exp, theta0_path);
  const AblateArtifacts artifacts =
      run_cross_lingual(exp, base.params, variant, !no_source_vector);
  save_checkpoint(out_path, artifacts.composed.params, exp.model);
  std::string head_path;
  if (artifacts.head.has_value()) {
    head_path = head_out.empty() ? out_path + ".head.dftx" : head_out;
    save_checkpoint(head_path, *artifacts.head, exp.model);
  }
  Config resolved = exp.resolved();
  resolved.set("run", "variant", ablation_variant_name(variant));
  resolved.set("run", "source_vector", no_source_vector ? "false" : "true");
  std::vector<ManifestEntry> inputs{digest_entry("theta0", theta0_path)};
  if (!common.config_path.empty()) {
    inputs.push_back(digest_entry("config", common.config_path));
  }
  std::vector<ManifestEntry> outputs{digest_entry("out", out_path)};
  if (!head_path.empty()) outputs.push_back(digest_entry("head", head_path));
  write_manifest(out_path, "ablate", resolved, inputs, outputs);
  std::cout << "variant " << ablation_variant_name(variant)
            << " zero-shot accuracy on language " << exp.target_language << ": "
            << artifacts.target_score << "\n";
  return 0;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t begin = 0;
  while (begin <= text.size()) {
    const std::size_t end = text.find(',', begin);
    const std::string item =
        text.substr(begin, end == std::string::npos ? std::string::npos : end - begin);
    if (!item.empty()) out.push_back(item);
    if (end == std::string::npos) break;
    begin = end + 1;
  }
  return out;
}

int cmd_sweep(const CommonOptions& common, const std::string& out_path) {
  if (common.config_path.empty()) raise(ErrorKind::Usage, "sweep needs --config");
  const Config config = load_config_file(common.config_path);
  const Experiment base_exp = load_experiment(common);

  const auto methods = split_list(config.get_string("sweep", "methods", "deftx,lt-sft"));
  const auto rank_ls = split_list(config.get_string("sweep", "rank_l", "var:0.9"));
  const auto rank_ts = split_list(config.get_string("sweep", "rank_t", "var:0.9"));
  const auto k_scales = split_list(config.get_string("sweep", "k_scale", "1.0"));
  const auto epsilons =
      split_list(config.get_string("sweep", "epsilon", std::to_string(base_exp.epsilon)));
  const auto seeds = split_list(config.get_string("sweep", "seeds", "0"));

  std::string table =
      "method\trank_l\trank_t\tk_scale\tepsilon\tseed\tsource\ttarget\t"
      "accuracy\tmacro_f1\tmajority\n";

  for (const std::string& eps_text : epsilons) {
    Experiment pretrain_exp = base_exp;
    pretrain_exp.epsilon = std::stod(eps_text);
    const ParameterSet pretrained = run_pretrain(pretrain_exp, pretrain_exp.model, nullptr);
    const DataSet test = pretrain_exp.task_test(pretrain_exp.target_language);
    std::vector<std::size_t> counts(pretrain_exp.model.n_classes, 0);
    for (std::int32_t label : test.labels) ++counts[static_cast<std::size_t>(label)];
    const double majority =
        static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
        static_cast<double>(test.size());

    for (const std::string& method : methods) {
      for (const std::string& rank_l : rank_ls) {
        for (const std::string& rank_t : rank_ts) {
          for (const std::string& k_scale_text : k_scales) {
            for (const std::string& seed_text : seeds) {
              Experiment exp = pretrain_exp;
              exp.lang_rank = RankPolicy::parse(rank_l);
              exp.task_rank = RankPolicy::parse(rank_t);
              const double k_scale = std::stod(k_scale_text);
              exp.lang_k_fraction *= k_scale;
              exp.task_k_fraction *= k_scale;
              const std::uint64_t seed = std::stoull(seed_text);
              exp.lang_cfg.seed = Rng(exp.lang_cfg.seed).fork("sweep", seed).seed();
              exp.task_cfg.seed = Rng(exp.task_cfg.seed).fork("sweep", seed).seed();
              const bool denoise = method_denoises(method);

              const SftResult source =
                  run_train_lang(exp, pretrained, exp.model, exp.source_language, denoise);
              const TaskVectorResult task =
                  run_train_task(exp, pretrained, exp.model, &source.vector, denoise);
              const SftResult target =
                  run_train_lang(exp, pretrained, exp.model, exp.target_language, denoise);

              std::vector<ComposableVector> vectors{
                  ComposableVector::from(task.vector),
                  ComposableVector::from(target.vector)};
              const ComposedModel composed =
                  compose_model(pretrained, exp.model.digest(), vectors, &task.head);
              const double acc = zero_shot_eval(composed.params, exp.model, test,
                                                Metric::Accuracy,
                                                exp.task_cfg.batch_size);
              const double f1 = zero_shot_eval(composed.params, exp.model, test,
                                               Metric::MacroF1,
                                               exp.task_cfg.batch_size);

              char row[256];
              std::snprintf(row, sizeof row,
                            "%s\t%s\t%s\t%s\t%s\t%s\t%d\t%d\t%.6f\t%.6f\t%.6f\n",
                            method.c_str(), rank_l.c_str(), rank_t.c_str(),
                            k_scale_text.c_str(), eps_text.c_str(), seed_text.c_str(),
                            exp.source_language, exp.target_language, acc, f1, majority);
              table += row;
              std::cerr << "sweep cell: " << method << " rl=" << rank_l
                        << " rt=" << rank_t << " k=" << k_scale_text
                        << " eps=" << eps_text << " seed=" << seed_text
                        << " acc=" << acc << "\n";
            }
          }
        }
      }
    }
  }

  write_text_file(out_path, table);
  Config resolved = base_exp.resolved();
  for (const char* key : {"methods", "rank_l", "rank_t", "k_scale", "epsilon", "seeds"}) {
    const std::string* v = config.lookup("sweep", key);
    if (v != nullptr) resolved.set("sweep", key, *v);
  }
  write_manifest(out_path, "sweep", resolved, {digest_entry("config", common.config_path)},
                 {digest_entry("out", out_path)});
  std::cout << "sweep table -> " << out_path << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{
      "deftx: denoised, composable sparse fine-tuning for zero-shot "
      "cross-lingual transfer on a synthetic desk-scale benchmark.\n"
      "Exit codes: 0 ok, 2 usage, 3 missing input, 4 format, "
      "5 validation/config, 6 training failure, 7 evaluation."};
  app.require_subcommand(1);

  CommonOptions common;
  std::string out_path;
  std::string theta0_path;
  std::int32_t lang_id = 0;
  VectorFlags vector_flags;
  std::string mask_out;
  std::string source_vector_path;
  std::string head_out;
  std::vector<std::string> vector_paths;
  std::string head_path;
  std::string model_path;
  std::string metric_text = "accuracy";
  std::string long_out;
  std::string variant_text = "none";
  bool no_source_vector = false;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", common.config_path,
                                "configuration file (key=value with [sections])");
    if (needs_config) opt->required();
    cmd->add_option("--seed", common.seed, "override every training seed");
    cmd->add_option("--steps", common.steps, "override every max_steps");
    cmd->add_option("--epsilon", common.epsilon, "override the divergence knob");
    cmd->add_option("--workers", common.workers, "worker threads for per-matrix work");
  };

  auto* pretrain =
      app.add_subcommand("pretrain", "train the base model on the mixed-language corpus");
  add_common(pretrain, false);
  pretrain->add_option("--out", out_path, "output checkpoint (DFTX)")->required();

  auto* train_lang = app.add_subcommand(
      "train-lang", "produce a language vector (masked language modeling)");
  add_common(train_lang, false);
  train_lang->add_option("--theta0", theta0_path, "base checkpoint")->required();
  train_lang->add_option("--lang", lang_id, "language id")->required();
  train_lang->add_option("--method", vector_flags.method, "deftx | lt-sft");
  train_lang->add_option("--rank-l", vector_flags.rank,
                         "rank policy: <int> | var:<f> | varlin:<f>");
  train_lang->add_option("--k-fraction", vector_flags.k_fraction,
                         "budget as a fraction of eligible scalars");
  train_lang->add_option("--retain", vector_flags.retain, "residual retain fraction");
  train_lang->add_option("--out", out_path, "output vector (DFTS)")->required();
  train_lang->add_option("--mask-out", mask_out, "also write the mask (DFTM)");

  auto* train_task =
      app.add_subcommand("train-task", "produce a task vector and classifier head");
  add_common(train_task, false);
  train_task->add_option("--theta0", theta0_path, "base checkpoint")->required();
  train_task->add_option("--source-lang-vector", source_vector_path,
                         "source-language vector applied before training");
  train_task->add_option("--method", vector_flags.method, "deftx | lt-sft");
  train_task->add_option("--rank-t", vector_flags.rank,
                         "rank policy: <int> | var:<f> | varlin:<f>");
  train_task->add_option("--k-fraction", vector_flags.k_fraction,
                         "budget as a fraction of eligible scalars");
  train_task->add_option("--retain", vector_flags.retain, "residual retain fraction");
  train_task->add_option("--out", out_path, "output vector (DFTS)")->required();
  train_task->add_option("--head-out", head_out, "head checkpoint (DFTX)");
  train_task->add_option("--mask-out", mask_out, "also write the mask (DFTM)");

  auto* compose_cmd = app.add_subcommand("compose", "base + listed vectors -> checkpoint");
  compose_cmd->add_option("--theta0", theta0_path, "base checkpoint")->required();
  compose_cmd->add_option("--vector", vector_paths,
                          "vector file (DFTS or dense DFTX); repeatable");
  compose_cmd->add_option("--head", head_path, "classifier head to apply");
  compose_cmd->add_option("--out", out_path, "output checkpoint")->required();

  auto* eval_cmd =
      app.add_subcommand("eval", "zero-shot metric on a target-language test set");
  add_common(eval_cmd, false);
  eval_cmd->add_option("--model", model_path, "composed checkpoint")->required();
  eval_cmd->add_option("--head", head_path, "classifier head to apply");
  eval_cmd->add_option("--lang", lang_id, "target language id")->required();
  eval_cmd->add_option("--metric", metric_text, "accuracy | macro_f1");
  eval_cmd->add_option("--out", out_path, "optional score table (TSV)");

  auto* overlap_cmd = app.add_subcommand("overlap", "overlap matrix over vector files");
  overlap_cmd->add_option("--vector", vector_paths, "vector file; repeatable");
  overlap_cmd->add_option("--out", out_path, "matrix table (TSV); stdout if absent");
  overlap_cmd->add_option("--long-out", long_out, "plot-ready long-format file");

  auto* ablate_cmd = app.add_subcommand(
      "ablate", "run one pipeline variant end to end and compose the result");
  add_common(ablate_cmd, false);
  ablate_cmd->add_option("--theta0", theta0_path, "base checkpoint")->required();
  ablate_cmd->add_option("--variant", variant_text,
                         "none | no_higher_order | no_prune_no_sft | no_sft");
  ablate_cmd->add_flag("--no-source-vector", no_source_vector,
                       "skip source-language initialization for the task");
  ablate_cmd->add_option("--out", out_path, "composed checkpoint")->required();
  ablate_cmd->add_option("--head-out", head_out, "head checkpoint");

  auto* sweep_cmd = app.add_subcommand(
      "sweep", "config-driven grid over (method, rank_l, rank_t, k, epsilon)");
  add_common(sweep_cmd, true);
  sweep_cmd->add_option("--out", out_path, "results table (TSV)")->required();

  // CLI11 consumes the vector in reverse order.
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (pretrain->parsed()) return cmd_pretrain(common, out_path);
    if (train_lang->parsed()) {
      return cmd_train_lang(common, theta0_path, lang_id, vector_flags, out_path,
                            mask_out);
    }
    if (train_task->parsed()) {
      return cmd_train_task(common, theta0_path, source_vector_path, vector_flags,
                            out_path, head_out, mask_out);
    }
    if (compose_cmd->parsed()) {
      return cmd_compose(theta0_path, vector_paths, head_path, out_path);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(common, model_path, head_path, lang_id, metric_text, out_path);
    }
    if (overlap_cmd->parsed()) return cmd_overlap(vector_paths, out_path, long_out);
    if (ablate_cmd->parsed()) {
      return cmd_ablate(common, theta0_path, variant_text, no_source_vector, out_path,
                        head_out);
    }
    if (sweep_cmd->parsed()) return cmd_sweep(common, out_path);
    raise(ErrorKind::Usage, "no subcommand given");
  } catch (const Error& e) {
    std::cerr << "error (" << error_kind_name(e.kind()) << "): " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace deftx::cli
