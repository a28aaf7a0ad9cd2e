#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "deftx/data.hpp"
#include "deftx/error.hpp"
#include "deftx/model.hpp"
#include "deftx/synthdata.hpp"

#if DEFTX_HAVE_EIGEN
#include "oracles/reference_model.hpp"
#endif

using namespace deftx;

namespace {

ModelSpec tiny_spec() {
  ModelSpec spec;
  spec.vocab_size = 24;
  spec.d_model = 8;
  spec.n_layers = 1;
  spec.n_heads = 2;
  spec.d_ff = 16;
  spec.max_seq_len = 8;
  spec.n_classes = 3;
  return spec;
}

Batch mlm_batch(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  Batch batch;
  batch.batch_size = 3;
  batch.seq_len = spec.max_seq_len;
  const std::size_t n_pos = batch.batch_size * batch.seq_len;
  batch.token_ids.assign(n_pos, tokens::kPad);
  batch.attention.assign(n_pos, 0);
  batch.mlm_targets.assign(n_pos, Batch::kIgnoreLabel);
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    const std::size_t len = 5 + rng.next_below(batch.seq_len - 5);
    batch.token_ids[b * batch.seq_len] = tokens::kCls;
    batch.attention[b * batch.seq_len] = 1;
    for (std::size_t t = 1; t < len; ++t) {
      batch.token_ids[b * batch.seq_len + t] =
          tokens::kFirstContent +
          static_cast<std::int32_t>(rng.next_below(spec.vocab_size - tokens::kFirstContent));
      batch.attention[b * batch.seq_len + t] = 1;
    }
    // two targets per example
    for (int k = 0; k < 2; ++k) {
      const std::size_t t = 1 + rng.next_below(len - 1);
      batch.mlm_targets[b * batch.seq_len + t] = batch.token_ids[b * batch.seq_len + t];
      if (k == 0) batch.token_ids[b * batch.seq_len + t] = tokens::kMask;
    }
  }
  return batch;
}

Batch classify_batch(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  Batch batch = mlm_batch(spec, seed);
  batch.mlm_targets.clear();
  batch.class_labels.clear();
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    batch.class_labels.push_back(
        static_cast<std::int32_t>(rng.next_below(spec.n_classes)));
  }
  return batch;
}

// Closed-form scalar count, enumerated independently of init_params.
std::size_t expected_param_count(const ModelSpec& s) {
  const std::size_t d = s.d_model;
  std::size_t total = s.vocab_size * d + s.max_seq_len * d;  // embeddings
  const std::size_t per_layer = 2 * d        // ln1
                                + 4 * d * d  // wq wk wv wo
                                + 4 * d      // their biases
                                + 2 * d      // ln2
                                + s.d_ff * d + s.d_ff + d * s.d_ff + d;  // ffn
  total += s.n_layers * per_layer;
  total += 2 * d;                                      // final ln
  total += s.vocab_size * d + s.vocab_size;            // mlm head
  total += d * d + d + s.n_classes * d + s.n_classes;  // classifier head
  return total;
}

}  // namespace

TEST_CASE("init_params is deterministic and matches the closed-form count") {
  const ModelSpec spec = tiny_spec();
  Rng a(5);
  Rng b(5);
  const ParameterSet p1 = init_params(spec, a);
  const ParameterSet p2 = init_params(spec, b);
  REQUIRE(index_compatible(p1, p2));
  for (std::size_t t = 0; t < p1.entries.size(); ++t) {
    CHECK(p1.entries[t].tensor.data == p2.entries[t].tensor.data);
  }
  CHECK(p1.scalar_count() == expected_param_count(spec));

  for (const NamedTensor& entry : p1.entries) {
    if (entry.cls == TensorClass::Bias) {
      for (double v : entry.tensor.data) CHECK(v == 0.0);
    }
    if (entry.cls == TensorClass::LayerNorm) {
      const bool gain = entry.name.ends_with(".gain");
      for (double v : entry.tensor.data) CHECK(v == (gain ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("uniform logits give ln(V) loss") {
  const ModelSpec spec = tiny_spec();
  Rng rng(0);
  ParameterSet params = init_params(spec, rng);
  for (double& v : params.find("mlm.w")->tensor.data) v = 0.0;
  for (double& v : params.find("mlm.b")->tensor.data) v = 0.0;
  const Batch batch = mlm_batch(spec, 1);
  const double loss = forward_loss(params, spec, batch, Objective::Mlm);
  CHECK(loss ==
        doctest::Approx(std::log(static_cast<double>(spec.vocab_size))).epsilon(1e-12));

  for (double& v : params.find("cls.w2")->tensor.data) v = 0.0;
  for (double& v : params.find("cls.b2")->tensor.data) v = 0.0;
  const Batch cbatch = classify_batch(spec, 1);
  const double closs = forward_loss(params, spec, cbatch, Objective::Classify);
  CHECK(closs ==
        doctest::Approx(std::log(static_cast<double>(spec.n_classes))).epsilon(1e-12));
}

TEST_CASE("single target with known probability gives -ln p") {
  const ModelSpec spec = tiny_spec();
  Rng rng(0);
  ParameterSet params = init_params(spec, rng);
  for (double& v : params.find("mlm.w")->tensor.data) v = 0.0;
  const double p = 0.25;
  Tensor& bias = params.find("mlm.b")->tensor;
  const double rest = std::log((1.0 - p) / static_cast<double>(spec.vocab_size - 1));
  for (double& v : bias.data) v = rest;
  const std::int32_t target = 7;
  bias.data[static_cast<std::size_t>(target)] = std::log(p);

  Batch batch;
  batch.batch_size = 1;
  batch.seq_len = 4;
  batch.token_ids = {tokens::kCls, tokens::kMask, tokens::kFirstContent,
                     tokens::kFirstContent + 1};
  batch.attention = {1, 1, 1, 1};
  batch.mlm_targets = {Batch::kIgnoreLabel, target, Batch::kIgnoreLabel,
                       Batch::kIgnoreLabel};
  const double loss = forward_loss(params, spec, batch, Objective::Mlm);
  CHECK(loss == doctest::Approx(-std::log(p)).epsilon(1e-10));
}

#if DEFTX_HAVE_EIGEN
TEST_CASE("forward loss matches the straight-line reference implementation") {
  const ModelSpec spec = tiny_spec();
  Rng rng(0);
  const ParameterSet params = init_params(spec, rng);

  const Batch batch = mlm_batch(spec, 3);
  const double ours = forward_loss(params, spec, batch, Objective::Mlm);
  const double reference = testing::reference_loss(params, spec, batch, Objective::Mlm);
  CHECK(ours == doctest::Approx(reference).epsilon(1e-10));

  const Batch cbatch = classify_batch(spec, 4);
  const double cours = forward_loss(params, spec, cbatch, Objective::Classify);
  const double creference =
      testing::reference_loss(params, spec, cbatch, Objective::Classify);
  CHECK(cours == doctest::Approx(creference).epsilon(1e-10));

  // a trained-looking parameter set: nudge every tensor deterministically
  ParameterSet bumped = params;
  Rng bump(9);
  for (NamedTensor& entry : bumped.entries) {
    for (double& v : entry.tensor.data) v += 0.05 * (2.0 * bump.next_double() - 1.0);
  }
  const double ours2 = forward_loss(bumped, spec, batch, Objective::Mlm);
  const double reference2 = testing::reference_loss(bumped, spec, batch, Objective::Mlm);
  CHECK(ours2 == doctest::Approx(reference2).epsilon(1e-10));
}
#endif

TEST_CASE("analytic gradients match central finite differences") {
  const ModelSpec spec = tiny_spec();  // d_model 8, 1 layer, 2 heads
  Rng rng(0);
  ParameterSet params = init_params(spec, rng);

  const double h = 1e-5;
  const double tolerance = 1e-5;
  Rng pick(77);

  for (const Objective objective : {Objective::Mlm, Objective::Classify}) {
    const Batch batch =
        objective == Objective::Mlm ? mlm_batch(spec, 3) : classify_batch(spec, 4);
    const LossAndGrads lg = backward(params, spec, batch, objective);

    std::set<TensorClass> classes;
    for (const NamedTensor& entry : params.entries) classes.insert(entry.cls);
    for (const TensorClass cls : classes) {
      if (objective == Objective::Mlm && cls == TensorClass::Head) continue;
      std::vector<std::pair<std::size_t, std::size_t>> coords;  // (tensor, index)
      for (std::size_t t = 0; t < params.entries.size(); ++t) {
        if (params.entries[t].cls != cls) continue;
        for (std::size_t i = 0; i < params.entries[t].tensor.numel(); ++i) {
          coords.emplace_back(t, i);
        }
      }
      for (int sample = 0; sample < 25; ++sample) {
        const auto [t, i] = coords[pick.next_below(coords.size())];
        const double original = params.entries[t].tensor.data[i];
        params.entries[t].tensor.data[i] = original + h;
        const double up = forward_loss(params, spec, batch, objective);
        params.entries[t].tensor.data[i] = original - h;
        const double down = forward_loss(params, spec, batch, objective);
        params.entries[t].tensor.data[i] = original;
        const double fd = (up - down) / (2.0 * h);
        const double an = lg.grads.entries[t].tensor.data[i];
        // The floor absorbs pure FD roundoff (~1e-11 here) at coordinates
        // whose true gradient is essentially zero.
        const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-5});
        CHECK(std::fabs(fd - an) / denom <= tolerance);
      }
    }
  }
}

TEST_CASE("parameters with no influence on the loss get exactly zero gradient") {
  const ModelSpec spec = tiny_spec();
  Rng rng(0);
  const ParameterSet params = init_params(spec, rng);
  const Batch batch = mlm_batch(spec, 3);
  const LossAndGrads lg = backward(params, spec, batch, Objective::Mlm);

  // the classifier head plays no part in the mlm objective
  for (const NamedTensor& entry : lg.grads.entries) {
    if (entry.cls != TensorClass::Head) continue;
    for (double v : entry.tensor.data) CHECK(v == 0.0);
  }

  // token-embedding rows of ids absent from the batch
  std::set<std::int32_t> used(batch.token_ids.begin(), batch.token_ids.end());
  const Tensor& dtok = lg.grads.find("embed.token")->tensor;
  for (std::size_t id = 0; id < spec.vocab_size; ++id) {
    if (used.contains(static_cast<std::int32_t>(id))) continue;
    for (std::size_t c = 0; c < spec.d_model; ++c) {
      CHECK(dtok.at(id, c) == 0.0);
    }
  }
}

TEST_CASE("gradients aggregate linearly over examples") {
  const ModelSpec spec = tiny_spec();
  Rng rng(0);
  const ParameterSet params = init_params(spec, rng);
  const Batch b1 = classify_batch(spec, 5);
  const Batch b2 = classify_batch(spec, 6);

  Batch merged = b1;
  merged.batch_size = b1.batch_size + b2.batch_size;
  merged.token_ids.insert(merged.token_ids.end(), b2.token_ids.begin(),
                          b2.token_ids.end());
  merged.attention.insert(merged.attention.end(), b2.attention.begin(),
                          b2.attention.end());
  merged.class_labels.insert(merged.class_labels.end(), b2.class_labels.begin(),
                             b2.class_labels.end());

  const LossAndGrads g1 = backward(params, spec, b1, Objective::Classify);
  const LossAndGrads g2 = backward(params, spec, b2, Objective::Classify);
  const LossAndGrads gm = backward(params, spec, merged, Objective::Classify);

  const double w1 =
      static_cast<double>(b1.batch_size) / static_cast<double>(merged.batch_size);
  const double w2 = 1.0 - w1;
  CHECK(gm.loss == doctest::Approx(w1 * g1.loss + w2 * g2.loss).epsilon(1e-12));
  for (std::size_t t = 0; t < gm.grads.entries.size(); ++t) {
    const auto& a = g1.grads.entries[t].tensor.data;
    const auto& b = g2.grads.entries[t].tensor.data;
    const auto& m = gm.grads.entries[t].tensor.data;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double expect = w1 * a[i] + w2 * b[i];
      CHECK(std::fabs(m[i] - expect) <= 1e-9 * std::max(1.0, std::fabs(expect)));
    }
  }
}

TEST_CASE("mean loss is invariant to example permutation") {
  const ModelSpec spec = tiny_spec();
  Rng rng(0);
  const ParameterSet params = init_params(spec, rng);
  const Batch batch = classify_batch(spec, 8);

  Batch permuted = batch;
  const std::vector<std::size_t> order{2, 0, 1};
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    for (std::size_t t = 0; t < batch.seq_len; ++t) {
      permuted.token_ids[b * batch.seq_len + t] =
          batch.token_ids[order[b] * batch.seq_len + t];
      permuted.attention[b * batch.seq_len + t] =
          batch.attention[order[b] * batch.seq_len + t];
    }
    permuted.class_labels[b] = batch.class_labels[order[b]];
  }
  const double a = forward_loss(params, spec, batch, Objective::Classify);
  const double b = forward_loss(params, spec, permuted, Objective::Classify);
  CHECK(std::fabs(a - b) <= 1e-12 * std::max(1.0, std::fabs(a)));
}

TEST_CASE("batch validation catches malformed inputs") {
  const ModelSpec spec = tiny_spec();
  Rng rng(0);
  const ParameterSet params = init_params(spec, rng);

  Batch batch = mlm_batch(spec, 3);
  batch.token_ids[1] = static_cast<std::int32_t>(spec.vocab_size);
  CHECK_THROWS_AS(forward_loss(params, spec, batch, Objective::Mlm), Error);

  Batch ignored = mlm_batch(spec, 3);
  for (auto& t : ignored.mlm_targets) t = Batch::kIgnoreLabel;
  try {
    forward_loss(params, spec, ignored, Objective::Mlm);
    FAIL("expected empty-objective error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyObjective);
  }

  ModelSpec bad = spec;
  bad.d_model = 9;  // not divisible by n_heads
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("reset_head touches only head tensors") {
  const ModelSpec spec = tiny_spec();
  Rng rng(0);
  ParameterSet params = init_params(spec, rng);
  const ParameterSet before = params;
  Rng head_rng(123);
  reset_head(params, spec, head_rng);
  bool head_changed = false;
  for (std::size_t t = 0; t < params.entries.size(); ++t) {
    const bool is_head = params.entries[t].cls == TensorClass::Head;
    const bool same = params.entries[t].tensor.data == before.entries[t].tensor.data;
    if (!is_head) CHECK(same);
    if (is_head && !same) head_changed = true;
  }
  CHECK(head_changed);
}
