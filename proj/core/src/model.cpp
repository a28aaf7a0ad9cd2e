#include "deftx/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "deftx/digest.hpp"
#include "deftx/error.hpp"

namespace deftx {

namespace {

constexpr double kLayerNormEps = 1e-5;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
}

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
  const double pdf = 0.3989422804014326779 * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

struct TensorDecl {
  std::string name;
  TensorClass cls;
  std::vector<std::size_t> shape;
};

std::vector<TensorDecl> schema(const ModelSpec& s) {
  std::vector<TensorDecl> decls;
  const std::size_t d = s.d_model;
  decls.push_back({"embed.token", TensorClass::Embedding, {s.vocab_size, d}});
  decls.push_back({"embed.pos", TensorClass::Embedding, {s.max_seq_len, d}});
  for (std::size_t l = 0; l < s.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    decls.push_back({p + "ln1.gain", TensorClass::LayerNorm, {d}});
    decls.push_back({p + "ln1.bias", TensorClass::LayerNorm, {d}});
    decls.push_back({p + "attn.wq", TensorClass::WeightMatrix, {d, d}});
    decls.push_back({p + "attn.bq", TensorClass::Bias, {d}});
    decls.push_back({p + "attn.wk", TensorClass::WeightMatrix, {d, d}});
    decls.push_back({p + "attn.bk", TensorClass::Bias, {d}});
    decls.push_back({p + "attn.wv", TensorClass::WeightMatrix, {d, d}});
    decls.push_back({p + "attn.bv", TensorClass::Bias, {d}});
    decls.push_back({p + "attn.wo", TensorClass::WeightMatrix, {d, d}});
    decls.push_back({p + "attn.bo", TensorClass::Bias, {d}});
    decls.push_back({p + "ln2.gain", TensorClass::LayerNorm, {d}});
    decls.push_back({p + "ln2.bias", TensorClass::LayerNorm, {d}});
    decls.push_back({p + "ffn.w1", TensorClass::WeightMatrix, {s.d_ff, d}});
    decls.push_back({p + "ffn.b1", TensorClass::Bias, {s.d_ff}});
    decls.push_back({p + "ffn.w2", TensorClass::WeightMatrix, {d, s.d_ff}});
    decls.push_back({p + "ffn.b2", TensorClass::Bias, {d}});
  }
  decls.push_back({"final_ln.gain", TensorClass::LayerNorm, {d}});
  decls.push_back({"final_ln.bias", TensorClass::LayerNorm, {d}});
  decls.push_back({"mlm.w", TensorClass::WeightMatrix, {s.vocab_size, d}});
  decls.push_back({"mlm.b", TensorClass::Bias, {s.vocab_size}});
  decls.push_back({"cls.w1", TensorClass::Head, {d, d}});
  decls.push_back({"cls.b1", TensorClass::Head, {d}});
  decls.push_back({"cls.w2", TensorClass::Head, {s.n_classes, d}});
  decls.push_back({"cls.b2", TensorClass::Head, {s.n_classes}});
  return decls;
}

// y[p, o] = sum_i w[o, i] * x[p, i] + b[o]
void linear_forward(const double* x, std::size_t n_pos, const Tensor& w,
                    const Tensor& b, double* y) {
  const std::size_t out_dim = w.shape[0];
  const std::size_t in_dim = w.shape[1];
  for (std::size_t p = 0; p < n_pos; ++p) {
    const double* xp = x + p * in_dim;
    double* yp = y + p * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wrow = w.data.data() + o * in_dim;
      double sum = b.data[o];
      for (std::size_t i = 0; i < in_dim; ++i) sum += wrow[i] * xp[i];
      yp[o] = sum;
    }
  }
}

// Accumulates into dx, dw, db. dx may be null when x is a leaf.
void linear_backward(const double* x, const double* dy, std::size_t n_pos,
                     const Tensor& w, double* dx, Tensor& dw, Tensor& db) {
  const std::size_t out_dim = w.shape[0];
  const std::size_t in_dim = w.shape[1];
  for (std::size_t p = 0; p < n_pos; ++p) {
    const double* xp = x + p * in_dim;
    const double* dyp = dy + p * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double g = dyp[o];
      if (g == 0.0) continue;
      db.data[o] += g;
      double* dwrow = dw.data.data() + o * in_dim;
      for (std::size_t i = 0; i < in_dim; ++i) dwrow[i] += g * xp[i];
      if (dx != nullptr) {
        const double* wrow = w.data.data() + o * in_dim;
        double* dxp = dx + p * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) dxp[i] += g * wrow[i];
      }
    }
  }
}

struct LayerNormCache {
  std::vector<double> normalized;  // n_pos * dim
  std::vector<double> inv_std;     // n_pos
};

void layer_norm_forward(const double* x, std::size_t n_pos, const Tensor& gain,
                        const Tensor& bias, double* y, LayerNormCache& cache) {
  const std::size_t dim = gain.numel();
  cache.normalized.resize(n_pos * dim);
  cache.inv_std.resize(n_pos);
  for (std::size_t p = 0; p < n_pos; ++p) {
    const double* xp = x + p * dim;
    double mean = 0.0;
    for (std::size_t i = 0; i < dim; ++i) mean += xp[i];
    mean /= static_cast<double>(dim);
    double var = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double c = xp[i] - mean;
      var += c * c;
    }
    var /= static_cast<double>(dim);
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.inv_std[p] = inv_std;
    double* np = cache.normalized.data() + p * dim;
    double* yp = y + p * dim;
    for (std::size_t i = 0; i < dim; ++i) {
      np[i] = (xp[i] - mean) * inv_std;
      yp[i] = gain.data[i] * np[i] + bias.data[i];
    }
  }
}

void layer_norm_backward(const double* dy, std::size_t n_pos, const Tensor& gain,
                         const LayerNormCache& cache, double* dx, Tensor& dgain,
                         Tensor& dbias) {
  const std::size_t dim = gain.numel();
  for (std::size_t p = 0; p < n_pos; ++p) {
    const double* dyp = dy + p * dim;
    const double* np = cache.normalized.data() + p * dim;
    const double inv_std = cache.inv_std[p];
    double sum_g = 0.0;
    double sum_gn = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double g = dyp[i] * gain.data[i];
      sum_g += g;
      sum_gn += g * np[i];
      dgain.data[i] += dyp[i] * np[i];
      dbias.data[i] += dyp[i];
    }
    const double inv_dim = 1.0 / static_cast<double>(dim);
    double* dxp = dx + p * dim;
    for (std::size_t i = 0; i < dim; ++i) {
      const double g = dyp[i] * gain.data[i];
      dxp[i] += inv_std * (g - inv_dim * sum_g - np[i] * inv_dim * sum_gn);
    }
  }
}

struct LayerCache {
  std::vector<double> input;       // residual stream entering the layer
  LayerNormCache ln1;
  std::vector<double> ln1_out;
  std::vector<double> q, k, v;     // n_pos * d
  std::vector<double> probs;       // B * heads * T * T
  std::vector<double> context;     // n_pos * d
  std::vector<double> after_attn;  // residual stream after attention
  LayerNormCache ln2;
  std::vector<double> ln2_out;
  std::vector<double> ffn_pre;     // n_pos * d_ff, pre-activation
  std::vector<double> ffn_act;     // n_pos * d_ff
};

struct ForwardCache {
  std::size_t n_pos = 0;
  std::vector<double> embedded;
  std::vector<LayerCache> layers;
  LayerNormCache final_ln;
  std::vector<double> encoded;  // final_ln output
  // classify only
  std::vector<double> cls_hidden_pre;  // B * d
  std::vector<double> cls_hidden;      // B * d
};

const Tensor& named(const ParameterSet& params, const std::string& name) {
  const NamedTensor* entry = params.find(name);
  if (entry == nullptr) {
    raise(ErrorKind::Incompatibility, "missing tensor '" + name + "'");
  }
  return entry->tensor;
}

Tensor& named_mut(ParameterSet& params, const std::string& name) {
  NamedTensor* entry = params.find(name);
  if (entry == nullptr) {
    raise(ErrorKind::Incompatibility, "missing tensor '" + name + "'");
  }
  return entry->tensor;
}

void attention_forward(const ModelSpec& spec, const Batch& batch,
                       const std::vector<double>& q, const std::vector<double>& k,
                       const std::vector<double>& v, std::vector<double>& probs,
                       std::vector<double>& context) {
  const std::size_t bsz = batch.batch_size;
  const std::size_t t_len = batch.seq_len;
  const std::size_t d = spec.d_model;
  const std::size_t heads = spec.n_heads;
  const std::size_t hd = spec.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  probs.assign(bsz * heads * t_len * t_len, 0.0);
  context.assign(bsz * t_len * d, 0.0);
  std::vector<double> scores(t_len);
  for (std::size_t b = 0; b < bsz; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * hd;
      for (std::size_t i = 0; i < t_len; ++i) {
        const double* qi = q.data() + (b * t_len + i) * d + off;
        double max_score = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < t_len; ++j) {
          if (batch.attention[b * t_len + j] == 0) {
            scores[j] = -std::numeric_limits<double>::infinity();
            continue;
          }
          const double* kj = k.data() + (b * t_len + j) * d + off;
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
          scores[j] = s * scale;
          max_score = std::max(max_score, scores[j]);
        }
        double z = 0.0;
        double* prow = probs.data() + ((b * heads + h) * t_len + i) * t_len;
        for (std::size_t j = 0; j < t_len; ++j) {
          if (scores[j] == -std::numeric_limits<double>::infinity()) {
            prow[j] = 0.0;
          } else {
            prow[j] = std::exp(scores[j] - max_score);
            z += prow[j];
          }
        }
        const double inv_z = 1.0 / z;
        double* ctx = context.data() + (b * t_len + i) * d + off;
        for (std::size_t j = 0; j < t_len; ++j) {
          prow[j] *= inv_z;
          if (prow[j] == 0.0) continue;
          const double* vj = v.data() + (b * t_len + j) * d + off;
          for (std::size_t c = 0; c < hd; ++c) ctx[c] += prow[j] * vj[c];
        }
      }
    }
  }
}

void attention_backward(const ModelSpec& spec, const Batch& batch,
                        const std::vector<double>& q, const std::vector<double>& k,
                        const std::vector<double>& v, const std::vector<double>& probs,
                        const std::vector<double>& dcontext, std::vector<double>& dq,
                        std::vector<double>& dk, std::vector<double>& dv) {
  const std::size_t bsz = batch.batch_size;
  const std::size_t t_len = batch.seq_len;
  const std::size_t d = spec.d_model;
  const std::size_t heads = spec.n_heads;
  const std::size_t hd = spec.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  dq.assign(q.size(), 0.0);
  dk.assign(k.size(), 0.0);
  dv.assign(v.size(), 0.0);
  std::vector<double> dscores(t_len);
  for (std::size_t b = 0; b < bsz; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * hd;
      for (std::size_t i = 0; i < t_len; ++i) {
        const double* prow = probs.data() + ((b * heads + h) * t_len + i) * t_len;
        const double* dctx = dcontext.data() + (b * t_len + i) * d + off;
        // dprobs[j] = dctx . v_j ; dv_j += p_j * dctx
        double dot_pd = 0.0;
        for (std::size_t j = 0; j < t_len; ++j) {
          if (prow[j] == 0.0) {
            dscores[j] = 0.0;
            continue;
          }
          const double* vj = v.data() + (b * t_len + j) * d + off;
          double* dvj = dv.data() + (b * t_len + j) * d + off;
          double dp = 0.0;
          for (std::size_t c = 0; c < hd; ++c) {
            dp += dctx[c] * vj[c];
            dvj[c] += prow[j] * dctx[c];
          }
          dscores[j] = dp;
          dot_pd += prow[j] * dp;
        }
        // softmax backward: ds_j = p_j * (dp_j - sum_l p_l dp_l)
        const double* qi = q.data() + (b * t_len + i) * d + off;
        double* dqi = dq.data() + (b * t_len + i) * d + off;
        for (std::size_t j = 0; j < t_len; ++j) {
          if (prow[j] == 0.0) continue;
          const double ds = prow[j] * (dscores[j] - dot_pd) * scale;
          if (ds == 0.0) continue;
          const double* kj = k.data() + (b * t_len + j) * d + off;
          double* dkj = dk.data() + (b * t_len + j) * d + off;
          for (std::size_t c = 0; c < hd; ++c) {
            dqi[c] += ds * kj[c];
            dkj[c] += ds * qi[c];
          }
        }
      }
    }
  }
}

// Runs the encoder; optionally computes loss (+ the fused output-layer
// gradient seeds when `grads` is non-null).
double run_model(const ParameterSet& params, const ModelSpec& spec,
                 const Batch& batch, Objective objective, ForwardCache& cache,
                 ParameterSet* grads, std::vector<double>* dencoded_out,
                 Tensor* logits_out) {
  spec.validate();
  batch.validate(spec, objective);

  const std::size_t bsz = batch.batch_size;
  const std::size_t t_len = batch.seq_len;
  const std::size_t d = spec.d_model;
  const std::size_t n_pos = bsz * t_len;
  cache.n_pos = n_pos;

  const Tensor& tok_emb = named(params, "embed.token");
  const Tensor& pos_emb = named(params, "embed.pos");

  cache.embedded.assign(n_pos * d, 0.0);
  for (std::size_t b = 0; b < bsz; ++b) {
    for (std::size_t t = 0; t < t_len; ++t) {
      const std::int32_t id = batch.token_ids[b * t_len + t];
      const double* trow = tok_emb.data.data() + static_cast<std::size_t>(id) * d;
      const double* prow = pos_emb.data.data() + t * d;
      double* out = cache.embedded.data() + (b * t_len + t) * d;
      for (std::size_t c = 0; c < d; ++c) out[c] = trow[c] + prow[c];
    }
  }

  cache.layers.resize(spec.n_layers);
  std::vector<double> stream = cache.embedded;
  for (std::size_t l = 0; l < spec.n_layers; ++l) {
    LayerCache& lc = cache.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    lc.input = stream;

    lc.ln1_out.assign(n_pos * d, 0.0);
    layer_norm_forward(lc.input.data(), n_pos, named(params, p + "ln1.gain"),
                       named(params, p + "ln1.bias"), lc.ln1_out.data(), lc.ln1);

    lc.q.assign(n_pos * d, 0.0);
    lc.k.assign(n_pos * d, 0.0);
    lc.v.assign(n_pos * d, 0.0);
    linear_forward(lc.ln1_out.data(), n_pos, named(params, p + "attn.wq"),
                   named(params, p + "attn.bq"), lc.q.data());
    linear_forward(lc.ln1_out.data(), n_pos, named(params, p + "attn.wk"),
                   named(params, p + "attn.bk"), lc.k.data());
    linear_forward(lc.ln1_out.data(), n_pos, named(params, p + "attn.wv"),
                   named(params, p + "attn.bv"), lc.v.data());

    attention_forward(spec, batch, lc.q, lc.k, lc.v, lc.probs, lc.context);

    std::vector<double> attn_out(n_pos * d, 0.0);
    linear_forward(lc.context.data(), n_pos, named(params, p + "attn.wo"),
                   named(params, p + "attn.bo"), attn_out.data());
    lc.after_attn.resize(n_pos * d);
    for (std::size_t i = 0; i < n_pos * d; ++i) {
      lc.after_attn[i] = lc.input[i] + attn_out[i];
    }

    lc.ln2_out.assign(n_pos * d, 0.0);
    layer_norm_forward(lc.after_attn.data(), n_pos, named(params, p + "ln2.gain"),
                       named(params, p + "ln2.bias"), lc.ln2_out.data(), lc.ln2);

    lc.ffn_pre.assign(n_pos * spec.d_ff, 0.0);
    linear_forward(lc.ln2_out.data(), n_pos, named(params, p + "ffn.w1"),
                   named(params, p + "ffn.b1"), lc.ffn_pre.data());
    lc.ffn_act.resize(n_pos * spec.d_ff);
    for (std::size_t i = 0; i < lc.ffn_pre.size(); ++i) {
      lc.ffn_act[i] = gelu(lc.ffn_pre[i]);
    }
    std::vector<double> ffn_out(n_pos * d, 0.0);
    linear_forward(lc.ffn_act.data(), n_pos, named(params, p + "ffn.w2"),
                   named(params, p + "ffn.b2"), ffn_out.data());
    stream.resize(n_pos * d);
    for (std::size_t i = 0; i < n_pos * d; ++i) {
      stream[i] = lc.after_attn[i] + ffn_out[i];
    }
  }

  cache.encoded.assign(n_pos * d, 0.0);
  // `stream` is the residual input to the final layer norm; keep it for
  // backward by storing it in place of the last layer's output.
  cache.embedded.swap(stream);  // reuse: embedded now holds pre-final-ln
  layer_norm_forward(cache.embedded.data(), n_pos, named(params, "final_ln.gain"),
                     named(params, "final_ln.bias"), cache.encoded.data(),
                     cache.final_ln);

  double loss = 0.0;
  if (objective == Objective::Mlm) {
    const Tensor& mlm_w = named(params, "mlm.w");
    const Tensor& mlm_b = named(params, "mlm.b");
    const std::size_t vocab = spec.vocab_size;
    std::size_t n_targets = 0;
    for (std::size_t pos = 0; pos < n_pos; ++pos) {
      if (batch.mlm_targets[pos] != Batch::kIgnoreLabel) ++n_targets;
    }
    if (n_targets == 0) {
      raise(ErrorKind::EmptyObjective, "mlm batch has no unmasked targets");
    }
    const double inv_n = 1.0 / static_cast<double>(n_targets);
    if (dencoded_out != nullptr) dencoded_out->assign(n_pos * d, 0.0);
    Tensor* dmlm_w_ptr = grads != nullptr ? &named_mut(*grads, "mlm.w") : nullptr;
    Tensor* dmlm_b_ptr = grads != nullptr ? &named_mut(*grads, "mlm.b") : nullptr;
    std::vector<double> logits(vocab);
    for (std::size_t pos = 0; pos < n_pos; ++pos) {
      const std::int32_t target = batch.mlm_targets[pos];
      if (target == Batch::kIgnoreLabel) continue;
      const double* enc = cache.encoded.data() + pos * d;
      double max_logit = -std::numeric_limits<double>::infinity();
      for (std::size_t vtok = 0; vtok < vocab; ++vtok) {
        const double* wrow = mlm_w.data.data() + vtok * d;
        double s = mlm_b.data[vtok];
        for (std::size_t c = 0; c < d; ++c) s += wrow[c] * enc[c];
        logits[vtok] = s;
        max_logit = std::max(max_logit, s);
      }
      double z = 0.0;
      for (std::size_t vtok = 0; vtok < vocab; ++vtok) {
        z += std::exp(logits[vtok] - max_logit);
      }
      const double log_z = std::log(z) + max_logit;
      loss += (log_z - logits[static_cast<std::size_t>(target)]) * inv_n;
      if (grads != nullptr) {
        Tensor& dmlm_w = *dmlm_w_ptr;
        Tensor& dmlm_b = *dmlm_b_ptr;
        double* denc = dencoded_out->data() + pos * d;
        for (std::size_t vtok = 0; vtok < vocab; ++vtok) {
          double dlogit = std::exp(logits[vtok] - log_z) * inv_n;
          if (static_cast<std::int32_t>(vtok) == target) dlogit -= inv_n;
          if (dlogit == 0.0) continue;
          dmlm_b.data[vtok] += dlogit;
          double* dwrow = dmlm_w.data.data() + vtok * d;
          const double* wrow = mlm_w.data.data() + vtok * d;
          for (std::size_t c = 0; c < d; ++c) {
            dwrow[c] += dlogit * enc[c];
            denc[c] += dlogit * wrow[c];
          }
        }
      }
    }
  } else {
    const Tensor& w1 = named(params, "cls.w1");
    const Tensor& b1 = named(params, "cls.b1");
    const Tensor& w2 = named(params, "cls.w2");
    const Tensor& b2 = named(params, "cls.b2");
    const std::size_t n_classes = spec.n_classes;
    cache.cls_hidden_pre.assign(bsz * d, 0.0);
    cache.cls_hidden.assign(bsz * d, 0.0);
    // [CLS] representation is position 0 of each example.
    std::vector<double> cls_repr(bsz * d);
    for (std::size_t b = 0; b < bsz; ++b) {
      const double* enc = cache.encoded.data() + (b * t_len) * d;
      std::copy(enc, enc + d, cls_repr.data() + b * d);
    }
    linear_forward(cls_repr.data(), bsz, w1, b1, cache.cls_hidden_pre.data());
    for (std::size_t i = 0; i < bsz * d; ++i) {
      cache.cls_hidden[i] = std::tanh(cache.cls_hidden_pre[i]);
    }
    std::vector<double> logits(bsz * n_classes, 0.0);
    linear_forward(cache.cls_hidden.data(), bsz, w2, b2, logits.data());
    if (logits_out != nullptr) {
      *logits_out = Tensor({bsz, n_classes}, logits);
    }
    const double inv_n = 1.0 / static_cast<double>(bsz);
    std::vector<double> dlogits(bsz * n_classes, 0.0);
    for (std::size_t b = 0; b < bsz; ++b) {
      const double* lrow = logits.data() + b * n_classes;
      const std::int32_t label = batch.class_labels[b];
      double max_logit = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < n_classes; ++c) max_logit = std::max(max_logit, lrow[c]);
      double z = 0.0;
      for (std::size_t c = 0; c < n_classes; ++c) z += std::exp(lrow[c] - max_logit);
      const double log_z = std::log(z) + max_logit;
      loss += (log_z - lrow[static_cast<std::size_t>(label)]) * inv_n;
      if (grads != nullptr) {
        double* drow = dlogits.data() + b * n_classes;
        for (std::size_t c = 0; c < n_classes; ++c) {
          drow[c] = std::exp(lrow[c] - log_z) * inv_n;
        }
        drow[static_cast<std::size_t>(label)] -= inv_n;
      }
    }
    if (grads != nullptr) {
      std::vector<double> dhidden(bsz * d, 0.0);
      linear_backward(cache.cls_hidden.data(), dlogits.data(), bsz, w2,
                      dhidden.data(), named_mut(*grads, "cls.w2"),
                      named_mut(*grads, "cls.b2"));
      std::vector<double> dhidden_pre(bsz * d);
      for (std::size_t i = 0; i < bsz * d; ++i) {
        const double th = cache.cls_hidden[i];
        dhidden_pre[i] = dhidden[i] * (1.0 - th * th);
      }
      std::vector<double> cls_repr(bsz * d);
      for (std::size_t b = 0; b < bsz; ++b) {
        const double* enc = cache.encoded.data() + (b * t_len) * d;
        std::copy(enc, enc + d, cls_repr.data() + b * d);
      }
      std::vector<double> dcls_repr(bsz * d, 0.0);
      linear_backward(cls_repr.data(), dhidden_pre.data(), bsz, w1,
                      dcls_repr.data(), named_mut(*grads, "cls.w1"),
                      named_mut(*grads, "cls.b1"));
      dencoded_out->assign(n_pos * d, 0.0);
      for (std::size_t b = 0; b < bsz; ++b) {
        double* denc = dencoded_out->data() + (b * t_len) * d;
        const double* src = dcls_repr.data() + b * d;
        for (std::size_t c = 0; c < d; ++c) denc[c] += src[c];
      }
    }
  }

  if (!std::isfinite(loss)) {
    raise(ErrorKind::TrainingFailure, "non-finite loss");
  }
  return loss;
}

}  // namespace

void ModelSpec::validate() const {
  if (vocab_size < static_cast<std::size_t>(tokens::kFirstContent) || d_model == 0 ||
      n_layers == 0 || n_heads == 0 || d_ff == 0 || max_seq_len == 0 || n_classes == 0) {
    raise(ErrorKind::Incompatibility, "model spec fields must be >= 1");
  }
  if (d_model % n_heads != 0) {
    raise(ErrorKind::Incompatibility, "d_model must be divisible by n_heads");
  }
}

std::uint64_t ModelSpec::digest() const {
  Fnv64 h;
  h.u64(vocab_size).u64(d_model).u64(n_layers).u64(n_heads);
  h.u64(d_ff).u64(max_seq_len).u64(n_classes);
  for (const TensorDecl& decl : schema(*this)) {
    h.str(decl.name);
    h.u64(static_cast<std::uint64_t>(decl.cls));
    for (std::size_t e : decl.shape) h.u64(e);
  }
  return h.value();
}

const char* tensor_class_name(TensorClass cls) noexcept {
  switch (cls) {
    case TensorClass::WeightMatrix: return "weight-matrix";
    case TensorClass::Bias: return "bias";
    case TensorClass::LayerNorm: return "layer-norm";
    case TensorClass::Embedding: return "embedding";
    case TensorClass::Head: return "head";
  }
  return "unknown";
}

NamedTensor* ParameterSet::find(std::string_view name) {
  for (NamedTensor& entry : entries) {
    if (entry.name == name) return &entry;
  }
  return nullptr;
}

const NamedTensor* ParameterSet::find(std::string_view name) const {
  for (const NamedTensor& entry : entries) {
    if (entry.name == name) return &entry;
  }
  return nullptr;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const NamedTensor& entry : entries) n += entry.tensor.numel();
  return n;
}

bool index_compatible(const ParameterSet& a, const ParameterSet& b) {
  if (a.entries.size() != b.entries.size()) return false;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    if (a.entries[i].name != b.entries[i].name) return false;
    if (a.entries[i].cls != b.entries[i].cls) return false;
    if (a.entries[i].tensor.shape != b.entries[i].tensor.shape) return false;
  }
  return true;
}

void require_index_compatible(const ParameterSet& a, const ParameterSet& b) {
  if (!index_compatible(a, b)) {
    raise(ErrorKind::Incompatibility, "parameter sets are not index-compatible");
  }
}

ParameterSet zeros_like(const ParameterSet& ref) {
  ParameterSet out;
  out.entries.reserve(ref.entries.size());
  for (const NamedTensor& entry : ref.entries) {
    out.entries.push_back({entry.name, entry.cls, Tensor::zeros(entry.tensor.shape)});
  }
  return out;
}

void Batch::validate(const ModelSpec& spec, Objective objective) const {
  const std::size_t n_pos = batch_size * seq_len;
  if (batch_size == 0 || seq_len == 0 || seq_len > spec.max_seq_len) {
    raise(ErrorKind::Incompatibility, "bad batch geometry");
  }
  if (token_ids.size() != n_pos || attention.size() != n_pos) {
    raise(ErrorKind::Incompatibility, "batch buffers do not match geometry");
  }
  for (std::size_t i = 0; i < n_pos; ++i) {
    if (token_ids[i] < 0 ||
        static_cast<std::size_t>(token_ids[i]) >= spec.vocab_size) {
      raise(ErrorKind::Incompatibility, "token id out of range");
    }
  }
  for (std::size_t b = 0; b < batch_size; ++b) {
    if (attention[b * seq_len] == 0) {
      raise(ErrorKind::Incompatibility, "position 0 must be attendable");
    }
  }
  if (objective == Objective::Mlm) {
    if (mlm_targets.size() != n_pos) {
      raise(ErrorKind::Incompatibility, "mlm targets missing");
    }
    bool any = false;
    for (std::size_t i = 0; i < n_pos; ++i) {
      const std::int32_t t = mlm_targets[i];
      if (t == kIgnoreLabel) continue;
      if (t < 0 || static_cast<std::size_t>(t) >= spec.vocab_size) {
        raise(ErrorKind::Incompatibility, "mlm target out of range");
      }
      if (attention[i] == 0) {
        raise(ErrorKind::Incompatibility, "mlm target at padded position");
      }
      any = true;
    }
    if (!any) raise(ErrorKind::EmptyObjective, "all mlm targets ignored");
  } else {
    if (class_labels.size() != batch_size) {
      raise(ErrorKind::Incompatibility, "class labels missing");
    }
    for (std::int32_t label : class_labels) {
      if (label < 0 || static_cast<std::size_t>(label) >= spec.n_classes) {
        raise(ErrorKind::Incompatibility, "class label out of range");
      }
    }
  }
}

ParameterSet init_params(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  ParameterSet out;
  for (const TensorDecl& decl : schema(spec)) {
    Tensor t = Tensor::zeros(decl.shape);
    switch (decl.cls) {
      case TensorClass::WeightMatrix:
      case TensorClass::Head:
      case TensorClass::Embedding: {
        if (t.is_matrix()) {
          // std = 1/sqrt(fan_in); embeddings use d_model as fan-in.
          const std::size_t fan_in =
              decl.cls == TensorClass::Embedding ? spec.d_model : t.shape[1];
          const double bound = std::sqrt(3.0) / std::sqrt(static_cast<double>(fan_in));
          for (double& v : t.data) v = (2.0 * rng.next_double() - 1.0) * bound;
        }
        // 1-D head tensors are biases of the head; stay zero.
        break;
      }
      case TensorClass::Bias:
        break;  // zero
      case TensorClass::LayerNorm: {
        // gains one, biases zero
        if (decl.name.ends_with(".gain")) {
          for (double& v : t.data) v = 1.0;
        }
        break;
      }
    }
    out.entries.push_back({decl.name, decl.cls, std::move(t)});
  }
  return out;
}

void reset_head(ParameterSet& params, const ModelSpec& spec, Rng& rng) {
  const double bound = std::sqrt(3.0) / std::sqrt(static_cast<double>(spec.d_model));
  for (NamedTensor& entry : params.entries) {
    if (entry.cls != TensorClass::Head) continue;
    if (entry.tensor.is_matrix()) {
      for (double& v : entry.tensor.data) v = (2.0 * rng.next_double() - 1.0) * bound;
    } else {
      for (double& v : entry.tensor.data) v = 0.0;
    }
  }
}

double forward_loss(const ParameterSet& params, const ModelSpec& spec,
                    const Batch& batch, Objective objective) {
  ForwardCache cache;
  return run_model(params, spec, batch, objective, cache, nullptr, nullptr, nullptr);
}

LossAndGrads backward(const ParameterSet& params, const ModelSpec& spec,
                      const Batch& batch, Objective objective) {
  ForwardCache cache;
  LossAndGrads out;
  out.grads = zeros_like(params);
  std::vector<double> dencoded;
  out.loss = run_model(params, spec, batch, objective, cache, &out.grads,
                       &dencoded, nullptr);

  const std::size_t bsz = batch.batch_size;
  const std::size_t t_len = batch.seq_len;
  const std::size_t d = spec.d_model;
  const std::size_t n_pos = bsz * t_len;

  // final layer norm (cache.embedded holds its input after run_model).
  std::vector<double> dstream(n_pos * d, 0.0);
  layer_norm_backward(dencoded.data(), n_pos, named(params, "final_ln.gain"),
                      cache.final_ln, dstream.data(),
                      named_mut(out.grads, "final_ln.gain"),
                      named_mut(out.grads, "final_ln.bias"));

  for (std::size_t li = spec.n_layers; li-- > 0;) {
    LayerCache& lc = cache.layers[li];
    const std::string p = "layer" + std::to_string(li) + ".";

    // ffn branch
    std::vector<double> dffn_act(n_pos * spec.d_ff, 0.0);
    linear_backward(lc.ffn_act.data(), dstream.data(), n_pos,
                    named(params, p + "ffn.w2"), dffn_act.data(),
                    named_mut(out.grads, p + "ffn.w2"),
                    named_mut(out.grads, p + "ffn.b2"));
    std::vector<double> dffn_pre(n_pos * spec.d_ff);
    for (std::size_t i = 0; i < dffn_pre.size(); ++i) {
      dffn_pre[i] = dffn_act[i] * gelu_grad(lc.ffn_pre[i]);
    }
    std::vector<double> dln2_out(n_pos * d, 0.0);
    linear_backward(lc.ln2_out.data(), dffn_pre.data(), n_pos,
                    named(params, p + "ffn.w1"), dln2_out.data(),
                    named_mut(out.grads, p + "ffn.w1"),
                    named_mut(out.grads, p + "ffn.b1"));
    // dstream flows through the residual connection unchanged; add the
    // ln2 path into it.
    layer_norm_backward(dln2_out.data(), n_pos, named(params, p + "ln2.gain"),
                        lc.ln2, dstream.data(),
                        named_mut(out.grads, p + "ln2.gain"),
                        named_mut(out.grads, p + "ln2.bias"));

    // attention branch
    std::vector<double> dcontext(n_pos * d, 0.0);
    linear_backward(lc.context.data(), dstream.data(), n_pos,
                    named(params, p + "attn.wo"), dcontext.data(),
                    named_mut(out.grads, p + "attn.wo"),
                    named_mut(out.grads, p + "attn.bo"));
    std::vector<double> dq, dk, dv;
    attention_backward(spec, batch, lc.q, lc.k, lc.v, lc.probs, dcontext, dq, dk, dv);
    std::vector<double> dln1_out(n_pos * d, 0.0);
    linear_backward(lc.ln1_out.data(), dq.data(), n_pos, named(params, p + "attn.wq"),
                    dln1_out.data(), named_mut(out.grads, p + "attn.wq"),
                    named_mut(out.grads, p + "attn.bq"));
    linear_backward(lc.ln1_out.data(), dk.data(), n_pos, named(params, p + "attn.wk"),
                    dln1_out.data(), named_mut(out.grads, p + "attn.wk"),
                    named_mut(out.grads, p + "attn.bk"));
    linear_backward(lc.ln1_out.data(), dv.data(), n_pos, named(params, p + "attn.wv"),
                    dln1_out.data(), named_mut(out.grads, p + "attn.wv"),
                    named_mut(out.grads, p + "attn.bv"));
    layer_norm_backward(dln1_out.data(), n_pos, named(params, p + "ln1.gain"),
                        lc.ln1, dstream.data(),
                        named_mut(out.grads, p + "ln1.gain"),
                        named_mut(out.grads, p + "ln1.bias"));
  }

  // embeddings
  Tensor& dtok = named_mut(out.grads, "embed.token");
  Tensor& dpos = named_mut(out.grads, "embed.pos");
  for (std::size_t b = 0; b < bsz; ++b) {
    for (std::size_t t = 0; t < t_len; ++t) {
      const std::int32_t id = batch.token_ids[b * t_len + t];
      const double* src = dstream.data() + (b * t_len + t) * d;
      double* trow = dtok.data.data() + static_cast<std::size_t>(id) * d;
      double* prow = dpos.data.data() + t * d;
      for (std::size_t c = 0; c < d; ++c) {
        trow[c] += src[c];
        prow[c] += src[c];
      }
    }
  }

  for (const NamedTensor& entry : out.grads.entries) {
    if (!all_finite(entry.tensor)) {
      raise(ErrorKind::TrainingFailure, "non-finite gradient in " + entry.name);
    }
  }
  return out;
}

Tensor class_logits(const ParameterSet& params, const ModelSpec& spec,
                    const Batch& batch) {
  ForwardCache cache;
  Tensor logits;
  run_model(params, spec, batch, Objective::Classify, cache, nullptr, nullptr,
            &logits);
  return logits;
}

}  // namespace deftx
