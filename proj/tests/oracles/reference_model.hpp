#pragma once

// Straight-line Eigen reimplementation of the encoder forward pass. Test
// oracle only: written directly from the layer math, no code shared with
// the library implementation.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "deftx/model.hpp"

namespace deftx::testing {

inline Eigen::MatrixXd tensor_matrix(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t.at(r, c);
    }
  }
  return m;
}

inline Eigen::VectorXd tensor_vector(const Tensor& t) {
  Eigen::VectorXd v(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    v(static_cast<Eigen::Index>(i)) = t.data[i];
  }
  return v;
}

inline Eigen::MatrixXd reference_layer_norm(const Eigen::MatrixXd& x,
                                            const Eigen::VectorXd& gain,
                                            const Eigen::VectorXd& bias) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    out.row(r) =
        ((x.row(r).array() - mean) * inv) * gain.transpose().array() +
        bias.transpose().array();
  }
  return out;
}

inline Eigen::MatrixXd reference_encode_example(const ParameterSet& params,
                                                const ModelSpec& spec,
                                                const Batch& batch, std::size_t b) {
  const auto tensor = [&](const std::string& name) -> const Tensor& {
    return params.find(name)->tensor;
  };
  const std::size_t t_len = batch.seq_len;
  const std::size_t d = spec.d_model;

  const Eigen::MatrixXd tok = tensor_matrix(tensor("embed.token"));
  const Eigen::MatrixXd pos = tensor_matrix(tensor("embed.pos"));
  Eigen::MatrixXd x(t_len, d);
  for (std::size_t t = 0; t < t_len; ++t) {
    const std::int32_t id = batch.token_ids[b * t_len + t];
    x.row(static_cast<Eigen::Index>(t)) =
        tok.row(id) + pos.row(static_cast<Eigen::Index>(t));
  }

  for (std::size_t l = 0; l < spec.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const Eigen::MatrixXd x1 = reference_layer_norm(
        x, tensor_vector(tensor(p + "ln1.gain")), tensor_vector(tensor(p + "ln1.bias")));
    const Eigen::MatrixXd q =
        (x1 * tensor_matrix(tensor(p + "attn.wq")).transpose()).rowwise() +
        tensor_vector(tensor(p + "attn.bq")).transpose();
    const Eigen::MatrixXd k =
        (x1 * tensor_matrix(tensor(p + "attn.wk")).transpose()).rowwise() +
        tensor_vector(tensor(p + "attn.bk")).transpose();
    const Eigen::MatrixXd v =
        (x1 * tensor_matrix(tensor(p + "attn.wv")).transpose()).rowwise() +
        tensor_vector(tensor(p + "attn.bv")).transpose();

    const std::size_t heads = spec.n_heads;
    const std::size_t hd = spec.head_dim();
    Eigen::MatrixXd context = Eigen::MatrixXd::Zero(t_len, d);
    for (std::size_t h = 0; h < heads; ++h) {
      const Eigen::Index off = static_cast<Eigen::Index>(h * hd);
      const Eigen::MatrixXd qh = q.middleCols(off, static_cast<Eigen::Index>(hd));
      const Eigen::MatrixXd kh = k.middleCols(off, static_cast<Eigen::Index>(hd));
      const Eigen::MatrixXd vh = v.middleCols(off, static_cast<Eigen::Index>(hd));
      Eigen::MatrixXd scores =
          qh * kh.transpose() / std::sqrt(static_cast<double>(hd));
      for (std::size_t j = 0; j < t_len; ++j) {
        if (batch.attention[b * t_len + j] == 0) {
          scores.col(static_cast<Eigen::Index>(j)).setConstant(
              -std::numeric_limits<double>::infinity());
        }
      }
      for (std::size_t i = 0; i < t_len; ++i) {
        const Eigen::Index row = static_cast<Eigen::Index>(i);
        const double mx = scores.row(row).maxCoeff();
        Eigen::VectorXd e(t_len);
        for (std::size_t j = 0; j < t_len; ++j) {
          const double s = scores(row, static_cast<Eigen::Index>(j));
          e(static_cast<Eigen::Index>(j)) =
              std::isinf(s) ? 0.0 : std::exp(s - mx);
        }
        const Eigen::VectorXd probs = e / e.sum();
        context.row(row).middleCols(off, static_cast<Eigen::Index>(hd)) =
            (probs.transpose() * vh);
      }
    }
    const Eigen::MatrixXd attn_out =
        (context * tensor_matrix(tensor(p + "attn.wo")).transpose()).rowwise() +
        tensor_vector(tensor(p + "attn.bo")).transpose();
    x = x + attn_out;

    const Eigen::MatrixXd x2 = reference_layer_norm(
        x, tensor_vector(tensor(p + "ln2.gain")), tensor_vector(tensor(p + "ln2.bias")));
    Eigen::MatrixXd hidden =
        (x2 * tensor_matrix(tensor(p + "ffn.w1")).transpose()).rowwise() +
        tensor_vector(tensor(p + "ffn.b1")).transpose();
    for (Eigen::Index i = 0; i < hidden.rows(); ++i) {
      for (Eigen::Index j = 0; j < hidden.cols(); ++j) {
        const double z = hidden(i, j);
        hidden(i, j) = 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0)));
      }
    }
    const Eigen::MatrixXd ffn_out =
        (hidden * tensor_matrix(tensor(p + "ffn.w2")).transpose()).rowwise() +
        tensor_vector(tensor(p + "ffn.b2")).transpose();
    x = x + ffn_out;
  }

  return reference_layer_norm(x, tensor_vector(tensor("final_ln.gain")),
                              tensor_vector(tensor("final_ln.bias")));
}

inline double reference_loss(const ParameterSet& params, const ModelSpec& spec,
                             const Batch& batch, Objective objective) {
  const auto tensor = [&](const std::string& name) -> const Tensor& {
    return params.find(name)->tensor;
  };
  const std::size_t t_len = batch.seq_len;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    const Eigen::MatrixXd encoded = reference_encode_example(params, spec, batch, b);
    if (objective == Objective::Mlm) {
      const Eigen::MatrixXd w = tensor_matrix(tensor("mlm.w"));
      const Eigen::VectorXd bias = tensor_vector(tensor("mlm.b"));
      for (std::size_t t = 0; t < t_len; ++t) {
        const std::int32_t target = batch.mlm_targets[b * t_len + t];
        if (target == Batch::kIgnoreLabel) continue;
        const Eigen::VectorXd logits =
            w * encoded.row(static_cast<Eigen::Index>(t)).transpose() + bias;
        const double mx = logits.maxCoeff();
        const double lse = mx + std::log((logits.array() - mx).exp().sum());
        total += lse - logits(target);
        ++count;
      }
    } else {
      const Eigen::VectorXd cls0 = encoded.row(0).transpose();
      const Eigen::VectorXd hidden =
          (tensor_matrix(tensor("cls.w1")) * cls0 + tensor_vector(tensor("cls.b1")))
              .array()
              .tanh();
      const Eigen::VectorXd logits =
          tensor_matrix(tensor("cls.w2")) * hidden + tensor_vector(tensor("cls.b2"));
      const double mx = logits.maxCoeff();
      const double lse = mx + std::log((logits.array() - mx).exp().sum());
      total += lse - logits(batch.class_labels[b]);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace deftx::testing
