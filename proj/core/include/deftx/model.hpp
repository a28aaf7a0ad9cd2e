#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "deftx/rng.hpp"
#include "deftx/tensor.hpp"

namespace deftx {

// Reserved token ids shared by the generator, the batcher and the model.
namespace tokens {
inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kCls = 1;   // position 0 of every sequence
inline constexpr std::int32_t kMask = 2;
inline constexpr std::int32_t kEos = 3;
inline constexpr std::int32_t kFirstContent = 4;
}  // namespace tokens

struct ModelSpec {
  std::size_t vocab_size = 64;
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 64;
  std::size_t max_seq_len = 24;
  std::size_t n_classes = 3;

  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }
  // Digest over the architecture fields and the canonical tensor schema.
  std::uint64_t digest() const;
};

enum class TensorClass : std::uint8_t {
  WeightMatrix = 0,
  Bias = 1,
  LayerNorm = 2,
  Embedding = 3,
  Head = 4,
};

const char* tensor_class_name(TensorClass cls) noexcept;

struct NamedTensor {
  std::string name;
  TensorClass cls = TensorClass::WeightMatrix;
  Tensor tensor;
};

// Ordered, named tensor collection. Construction fixes the order, so two
// sets built from the same ModelSpec are index-compatible.
struct ParameterSet {
  std::vector<NamedTensor> entries;

  NamedTensor* find(std::string_view name);
  const NamedTensor* find(std::string_view name) const;
  std::size_t scalar_count() const;
};

bool index_compatible(const ParameterSet& a, const ParameterSet& b);
void require_index_compatible(const ParameterSet& a, const ParameterSet& b);
// Same schema, all values zero.
ParameterSet zeros_like(const ParameterSet& ref);

enum class Objective { Mlm, Classify };

struct Batch {
  static constexpr std::int32_t kIgnoreLabel = -1;

  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> token_ids;    // batch_size * seq_len, row-major
  std::vector<std::uint8_t> attention;    // 1 = real token, 0 = padding
  std::vector<std::int32_t> mlm_targets;  // per position; kIgnoreLabel = skip
  std::vector<std::int32_t> class_labels; // per example

  void validate(const ModelSpec& spec, Objective objective) const;
};

// Deterministic init: weight matrices and embeddings uniform with standard
// deviation 1/sqrt(fan_in), biases zero, layer-norm gains one.
ParameterSet init_params(const ModelSpec& spec, Rng& rng);

// Re-draws only the classifier-head tensors; everything else untouched.
void reset_head(ParameterSet& params, const ModelSpec& spec, Rng& rng);

// Mean cross-entropy over non-ignored positions (mlm) or examples
// (classify).
double forward_loss(const ParameterSet& params, const ModelSpec& spec,
                    const Batch& batch, Objective objective);

struct LossAndGrads {
  double loss = 0.0;
  ParameterSet grads;  // index-compatible with the input parameters
};

LossAndGrads backward(const ParameterSet& params, const ModelSpec& spec,
                      const Batch& batch, Objective objective);

// Classifier logits, batch_size x n_classes. Used by evaluation.
Tensor class_logits(const ParameterSet& params, const ModelSpec& spec,
                    const Batch& batch);

}  // namespace deftx
