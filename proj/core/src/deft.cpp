#include "deftx/deft.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "deftx/digest.hpp"
#include "deftx/error.hpp"
#include "deftx/threadpool.hpp"
#include "deftx/topk.hpp"

namespace deftx {

RankPolicy RankPolicy::uniform(std::size_t r) {
  RankPolicy p;
  p.kind = Kind::Uniform;
  p.rank = r;
  return p;
}

RankPolicy RankPolicy::variance_fraction(double f, bool squared) {
  RankPolicy p;
  p.kind = Kind::VarianceFraction;
  p.fraction = f;
  p.sigma_squared = squared;
  return p;
}

void RankPolicy::validate() const {
  if (kind == Kind::Uniform) {
    if (rank == 0) raise(ErrorKind::Config, "uniform rank must be positive");
  } else {
    if (fraction <= 0.0 || fraction > 1.0) {
      raise(ErrorKind::Config, "variance fraction must lie in (0, 1]");
    }
  }
}

std::uint64_t RankPolicy::digest() const {
  Fnv64 h;
  h.u64(static_cast<std::uint64_t>(kind)).u64(rank).f64(fraction);
  h.u64(sigma_squared ? 1 : 0);
  return h.value();
}

std::string RankPolicy::to_string() const {
  if (kind == Kind::Uniform) return std::to_string(rank);
  std::string out = sigma_squared ? "var:" : "varlin:";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", fraction);
  return out + buf;
}

RankPolicy RankPolicy::parse(const std::string& text) {
  RankPolicy p;
  auto parse_fraction = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double f = std::stod(s, &used);
      if (used != s.size()) raise(ErrorKind::Config, "bad rank fraction '" + s + "'");
      return f;
    } catch (const Error&) {
      throw;
    } catch (...) {
      raise(ErrorKind::Config, "bad rank fraction '" + s + "'");
    }
  };
  if (text.starts_with("var:")) {
    p = variance_fraction(parse_fraction(text.substr(4)), true);
  } else if (text.starts_with("varlin:")) {
    p = variance_fraction(parse_fraction(text.substr(7)), false);
  } else {
    try {
      std::size_t used = 0;
      const unsigned long r = std::stoul(text, &used);
      if (used != text.size()) raise(ErrorKind::Config, "bad rank '" + text + "'");
      p = uniform(static_cast<std::size_t>(r));
    } catch (const Error&) {
      throw;
    } catch (...) {
      raise(ErrorKind::Config, "bad rank '" + text + "'");
    }
  }
  p.validate();
  return p;
}

void DenoiseConfig::validate() const {
  rank_policy.validate();
  if (residual_retain_fraction < 0.0 || residual_retain_fraction > 1.0) {
    raise(ErrorKind::Config, "residual_retain_fraction must lie in [0, 1]");
  }
}

std::uint64_t DenoiseConfig::digest() const {
  Fnv64 h;
  h.u64(rank_policy.digest()).f64(residual_retain_fraction);
  for (TensorClass cls : denoise_classes) {
    h.u64(static_cast<std::uint64_t>(cls));
  }
  return h.value();
}

DeltaSet compute_delta(const ParameterSet& finetuned, const ParameterSet& base) {
  require_index_compatible(finetuned, base);
  DeltaSet out = zeros_like(base);
  for (std::size_t t = 0; t < base.entries.size(); ++t) {
    const auto& fine = finetuned.entries[t].tensor.data;
    const auto& orig = base.entries[t].tensor.data;
    auto& dst = out.entries[t].tensor.data;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = fine[i] - orig[i];
  }
  return out;
}

std::size_t select_rank(std::span<const double> singular_values,
                        const RankPolicy& policy) {
  policy.validate();
  const std::size_t n = singular_values.size();
  if (policy.kind == RankPolicy::Kind::Uniform) {
    return std::min(policy.rank, n);
  }
  double total = 0.0;
  for (double s : singular_values) {
    total += policy.sigma_squared ? s * s : s;
  }
  if (total <= 0.0) return 0;
  const double target = policy.fraction * total;
  double cumulative = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double s = singular_values[r];
    cumulative += policy.sigma_squared ? s * s : s;
    if (cumulative >= target) return r + 1;
  }
  return n;
}

namespace {

Tensor denoise_with_factors(const Tensor& w, const SvdFactors& factors,
                            std::size_t rank, double retain_fraction) {
  const std::size_t numel = w.numel();
  Tensor low = svd_low_rank(factors, rank);
  Tensor residual = Tensor::zeros(w.shape);
  for (std::size_t i = 0; i < numel; ++i) {
    residual.data[i] = w.data[i] - low.data[i];
  }
  long long keep = std::llround(retain_fraction * static_cast<double>(numel));
  keep = std::clamp<long long>(keep, 0, static_cast<long long>(numel));
  const std::vector<std::size_t> kept =
      top_k_indices(residual.data, static_cast<std::size_t>(keep));
  // low + masked residual
  Tensor out = std::move(low);
  for (std::size_t idx : kept) {
    out.data[idx] += residual.data[idx];
  }
  return out;
}

}  // namespace

Tensor denoise_matrix(const Tensor& w, std::size_t rank, double retain_fraction) {
  if (!w.is_matrix()) {
    raise(ErrorKind::Dimensionality, "denoise_matrix expects a 2-D tensor");
  }
  if (retain_fraction < 0.0 || retain_fraction > 1.0) {
    raise(ErrorKind::Config, "retain_fraction must lie in [0, 1]");
  }
  return denoise_with_factors(w, svd(w), rank, retain_fraction);
}

DeltaSet denoise_delta(const DeltaSet& delta, const DenoiseConfig& cfg) {
  cfg.validate();
  DeltaSet out = delta;
  std::vector<std::size_t> jobs;
  for (std::size_t t = 0; t < delta.entries.size(); ++t) {
    const NamedTensor& entry = delta.entries[t];
    if (!entry.tensor.is_matrix()) continue;
    if (!cfg.denoise_classes.contains(entry.cls)) continue;
    jobs.push_back(t);
  }
  parallel_for(jobs.size(), std::max<std::size_t>(cfg.workers, 1), [&](std::size_t j) {
    const std::size_t t = jobs[j];
    const Tensor& w = delta.entries[t].tensor;
    const SvdFactors factors = svd(w);
    const std::size_t rank =
        select_rank(std::span<const double>(factors.s.data), cfg.rank_policy);
    out.entries[t].tensor =
        denoise_with_factors(w, factors, rank, cfg.residual_retain_fraction);
  });
  return out;
}

std::vector<std::string> eligible_tensor_names(const ParameterSet& params,
                                               const FreezeSet& freeze) {
  std::vector<std::string> out;
  for (const NamedTensor& entry : params.entries) {
    if (entry.cls == TensorClass::Head) continue;
    if (freeze.contains(entry.name)) continue;
    out.push_back(entry.name);
  }
  return out;
}

BinaryMask global_topk_mask(const DeltaSet& delta, std::size_t budget,
                            const std::vector<std::string>& eligible) {
  struct Coord {
    std::uint32_t tensor;
    std::uint64_t index;
  };
  std::vector<Coord> coords;
  std::vector<const Tensor*> tensors(delta.entries.size(), nullptr);
  std::size_t eligible_scalars = 0;
  for (const std::string& name : eligible) {
    const NamedTensor* entry = nullptr;
    std::size_t t = 0;
    for (; t < delta.entries.size(); ++t) {
      if (delta.entries[t].name == name) {
        entry = &delta.entries[t];
        break;
      }
    }
    if (entry == nullptr) {
      raise(ErrorKind::Incompatibility, "eligible set names unknown tensor '" + name + "'");
    }
    tensors[t] = &entry->tensor;
    eligible_scalars += entry->tensor.numel();
  }
  if (budget > eligible_scalars) {
    raise(ErrorKind::Budget, "budget " + std::to_string(budget) +
                                 " exceeds eligible scalar count " +
                                 std::to_string(eligible_scalars));
  }
  coords.reserve(eligible_scalars);
  for (std::size_t t = 0; t < delta.entries.size(); ++t) {
    if (tensors[t] == nullptr) continue;
    const std::size_t numel = tensors[t]->numel();
    for (std::size_t i = 0; i < numel; ++i) {
      coords.push_back({static_cast<std::uint32_t>(t), i});
    }
  }

  auto magnitude = [&](const Coord& c) {
    return std::fabs(tensors[c.tensor]->data[c.index]);
  };
  auto before = [&](const Coord& a, const Coord& b) {
    const double ma = magnitude(a);
    const double mb = magnitude(b);
    if (ma != mb) return ma > mb;
    if (a.tensor != b.tensor) return a.tensor < b.tensor;
    return a.index < b.index;
  };
  if (budget < coords.size()) {
    std::nth_element(coords.begin(), coords.begin() + static_cast<std::ptrdiff_t>(budget),
                     coords.end(), before);
    coords.resize(budget);
  }

  BinaryMask mask;
  std::vector<std::vector<std::uint64_t>> per_tensor(delta.entries.size());
  for (const Coord& c : coords) per_tensor[c.tensor].push_back(c.index);
  for (std::size_t t = 0; t < delta.entries.size(); ++t) {
    if (per_tensor[t].empty()) continue;
    std::sort(per_tensor[t].begin(), per_tensor[t].end());
    mask.slices.push_back({delta.entries[t].name, std::move(per_tensor[t])});
  }
  return mask;
}

std::uint64_t SftConfig::digest() const {
  Fnv64 h;
  h.u64(phase1.digest()).u64(phase2.digest());
  h.u64(denoise_enabled ? denoise.digest() : 0);
  h.u64(budget);
  for (const std::string& name : freeze) h.str(name);
  h.u64(denoise_enabled ? 1 : 0);
  h.u64(static_cast<std::uint64_t>(kind));
  return h.value();
}

namespace {

// Phase-2 training mask: the budget mask plus, for classification, the
// full support of every head tensor (the head is fully fine-tuned but
// never counted against the budget).
BinaryMask phase2_training_mask(const BinaryMask& budget_mask,
                                const ParameterSet& base, Objective objective) {
  BinaryMask mask = budget_mask;
  if (objective != Objective::Classify) return mask;
  for (const NamedTensor& entry : base.entries) {
    if (entry.cls != TensorClass::Head) continue;
    MaskSlice slice;
    slice.name = entry.name;
    slice.indices.resize(entry.tensor.numel());
    std::iota(slice.indices.begin(), slice.indices.end(), std::uint64_t{0});
    mask.slices.push_back(std::move(slice));
  }
  return mask;
}

ParameterSet head_fragment(const ParameterSet& params) {
  ParameterSet out;
  for (const NamedTensor& entry : params.entries) {
    if (entry.cls == TensorClass::Head) out.entries.push_back(entry);
  }
  return out;
}

struct Phase1Output {
  ParameterSet finetuned;
  DeltaSet denoised;
  std::vector<TrainLogRecord> log;
};

Phase1Output run_phase1(const ParameterSet& base, const ModelSpec& spec,
                        const TrainData& data, const SftConfig& cfg,
                        bool denoise_enabled, double retain_override) {
  ParameterSet start = base;
  if (data.objective == Objective::Classify) {
    Rng head_rng = Rng(cfg.phase1.seed).fork("head-phase1");
    reset_head(start, spec, head_rng);
  }
  Phase1Output out;
  TrainResult phase1 = full_finetune(start, spec, data, cfg.phase1, cfg.freeze);
  out.log = std::move(phase1.log);
  DeltaSet delta = compute_delta(phase1.params, base);
  out.finetuned = std::move(phase1.params);
  if (denoise_enabled) {
    DenoiseConfig denoise = cfg.denoise;
    if (retain_override >= 0.0) denoise.residual_retain_fraction = retain_override;
    out.denoised = denoise_delta(delta, denoise);
  } else {
    out.denoised = std::move(delta);
  }
  return out;
}

SftResult run_two_phase(const ParameterSet& base, const ModelSpec& spec,
                        const TrainData& data, const SftConfig& cfg,
                        bool denoise_enabled, double retain_override) {
  SftResult result;
  Phase1Output phase1 =
      run_phase1(base, spec, data, cfg, denoise_enabled, retain_override);
  result.phase1_log = std::move(phase1.log);

  const std::vector<std::string> eligible = eligible_tensor_names(base, cfg.freeze);
  result.mask = global_topk_mask(phase1.denoised, cfg.budget, eligible);
  result.mask.model_digest = spec.digest();

  ParameterSet start = base;
  if (data.objective == Objective::Classify) {
    Rng head_rng = Rng(cfg.phase2.seed).fork("head-phase2");
    reset_head(start, spec, head_rng);
  }
  const BinaryMask training_mask =
      phase2_training_mask(result.mask, base, data.objective);
  SparseFinetuneResult sparse =
      sparse_finetune(start, training_mask, spec, data, cfg.phase2, cfg.freeze);
  result.degenerate_mask = sparse.degenerate_mask;
  result.phase2_log = std::move(sparse.log);

  // The returned vector is measured against the original base over the
  // budget mask only; head coordinates travel separately.
  result.vector = extract_sparse(sparse.params, base, result.mask);
  result.vector.kind = cfg.kind;
  result.vector.config_digest = cfg.digest();
  result.vector.model_digest = spec.digest();
  if (data.objective == Objective::Classify) {
    result.head = head_fragment(sparse.params);
  }
  return result;
}

}  // namespace

SftResult deftx(const ParameterSet& base, const ModelSpec& spec,
                const TrainData& data, const SftConfig& cfg) {
  return run_two_phase(base, spec, data, cfg, cfg.denoise_enabled, -1.0);
}

SftResult lt_sft(const ParameterSet& base, const ModelSpec& spec,
                 const TrainData& data, SftConfig cfg) {
  cfg.denoise_enabled = false;
  return run_two_phase(base, spec, data, cfg, false, -1.0);
}

const char* ablation_variant_name(AblationVariant v) noexcept {
  switch (v) {
    case AblationVariant::None: return "none";
    case AblationVariant::NoHigherOrder: return "no_higher_order";
    case AblationVariant::NoPruneNoSft: return "no_prune_no_sft";
    case AblationVariant::NoSft: return "no_sft";
  }
  return "unknown";
}

AblationVariant parse_ablation_variant(const std::string& text) {
  if (text == "none") return AblationVariant::None;
  if (text == "no_higher_order") return AblationVariant::NoHigherOrder;
  if (text == "no_prune_no_sft") return AblationVariant::NoPruneNoSft;
  if (text == "no_sft") return AblationVariant::NoSft;
  raise(ErrorKind::Usage, "unknown ablation variant '" + text + "'");
}

AblationResult ablation(AblationVariant variant, const ParameterSet& base,
                        const ModelSpec& spec, const TrainData& data,
                        const SftConfig& cfg) {
  AblationResult result;
  switch (variant) {
    case AblationVariant::None:
    case AblationVariant::NoHigherOrder: {
      const double retain = variant == AblationVariant::NoHigherOrder ? 0.0 : -1.0;
      SftResult sft = run_two_phase(base, spec, data, cfg, cfg.denoise_enabled, retain);
      result.vector.payload = std::move(sft.vector);
      result.vector.kind = cfg.kind;
      result.vector.config_digest = cfg.digest();
      result.vector.model_digest = spec.digest();
      result.mask = std::move(sft.mask);
      result.head = std::move(sft.head);
      result.phase1_log = std::move(sft.phase1_log);
      result.phase2_log = std::move(sft.phase2_log);
      return result;
    }
    case AblationVariant::NoPruneNoSft: {
      Phase1Output phase1 = run_phase1(base, spec, data, cfg, cfg.denoise_enabled, -1.0);
      result.phase1_log = std::move(phase1.log);
      if (data.objective == Objective::Classify) {
        result.head = head_fragment(phase1.finetuned);
      }
      result.vector.payload = std::move(phase1.denoised);
      result.vector.kind = cfg.kind;
      result.vector.config_digest = cfg.digest();
      result.vector.model_digest = spec.digest();
      return result;
    }
    case AblationVariant::NoSft: {
      Phase1Output phase1 = run_phase1(base, spec, data, cfg, cfg.denoise_enabled, -1.0);
      result.phase1_log = std::move(phase1.log);
      const std::vector<std::string> eligible = eligible_tensor_names(base, cfg.freeze);
      BinaryMask mask = global_topk_mask(phase1.denoised, cfg.budget, eligible);
      mask.model_digest = spec.digest();
      // mask applied to the denoised delta, values copied verbatim
      SparseVector vec;
      vec.kind = cfg.kind;
      vec.budget = mask.cardinality();
      vec.config_digest = cfg.digest();
      vec.model_digest = spec.digest();
      for (const MaskSlice& slice : mask.slices) {
        const NamedTensor* entry = phase1.denoised.find(slice.name);
        SparseSlice out_slice;
        out_slice.name = slice.name;
        out_slice.cls = entry->cls;
        out_slice.shape = entry->tensor.shape;
        out_slice.indices = slice.indices;
        for (std::uint64_t idx : slice.indices) {
          out_slice.values.push_back(entry->tensor.data[idx]);
        }
        vec.slices.push_back(std::move(out_slice));
      }
      if (data.objective == Objective::Classify) {
        result.head = head_fragment(phase1.finetuned);
      }
      result.vector.payload = std::move(vec);
      result.vector.kind = cfg.kind;
      result.vector.config_digest = cfg.digest();
      result.vector.model_digest = spec.digest();
      result.mask = std::move(mask);
      return result;
    }
  }
  raise(ErrorKind::Usage, "unknown ablation variant");
}

}  // namespace deftx
