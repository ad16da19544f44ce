#pragma once

// Attentive graph convolution over one context subgraph:
//   H(l)  = ReLU(N H(l-1) W(l)),  N = D^-1/2 (A + I) D^-1/2
//   s_i   = u . ReLU(v_i * o)     (v_i: row i of H(x), o: owner knowledge embedding)
//   alpha = softmax(s) over real vertices
//   sg    = sum_i alpha_i v_i
// Only the leading `real_count` vertices take part; padding rows are ignored.

#include "dkge/types.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace dkge {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct AgcnParams {
  std::vector<MatrixX<Scalar>> weights;  // one d x d matrix per hidden layer
  VectorX<Scalar> attention;             // u

  Eigen::Index dim() const { return attention.size(); }
  std::size_t layers() const { return weights.size(); }

  static AgcnParams zeros(Eigen::Index d, std::size_t layers) {
    AgcnParams p;
    p.weights.assign(layers, MatrixX<Scalar>::Zero(d, d));
    p.attention = VectorX<Scalar>::Zero(d);
    return p;
  }

  void validate() const {
    if (weights.empty() || weights.size() > 2) {
      throw ContractError("AGCN needs 1 or 2 hidden layers, got " + std::to_string(weights.size()));
    }
    for (const auto& w : weights) {
      if (w.rows() != dim() || w.cols() != dim()) throw ContractError("AGCN weight matrices must be d x d");
    }
  }

  AgcnParams& operator+=(const AgcnParams& other) {
    for (std::size_t l = 0; l < weights.size(); ++l) weights[l] += other.weights[l];
    attention += other.attention;
    return *this;
  }
};

template <typename Scalar>
struct AgcnCache {
  MatrixX<Scalar> normalized;                    // real block of N
  std::vector<MatrixX<Scalar>> propagated;       // N H(l-1), l = 1..x
  std::vector<MatrixX<Scalar>> pre_activations;  // N H(l-1) W(l)
  std::vector<MatrixX<Scalar>> activations;      // H(0..x), real rows
  MatrixX<Scalar> attention_input;               // rows v_i * o
  VectorX<Scalar> scores;                        // real vertices
  VectorX<Scalar> alpha;                         // padded length, zero past real_count
  Eigen::Index real_count = 0;
  Eigen::Index padded_count = 0;
};

template <typename Scalar>
struct AgcnForward {
  VectorX<Scalar> embedding;
  AgcnCache<Scalar> cache;
};

template <typename Scalar>
struct AgcnGradients {
  MatrixX<Scalar> input;  // d/d h0, padded rows are zero
  AgcnParams<Scalar> params;
  VectorX<Scalar> owner;
};

template <typename Derived>
MatrixX<typename Derived::Scalar> normalize_adjacency(const Eigen::MatrixBase<Derived>& adjacency) {
  using Scalar = typename Derived::Scalar;
  if (adjacency.rows() != adjacency.cols()) throw ContractError("adjacency must be square");
  if (!(adjacency.transpose() == adjacency)) throw ContractError("adjacency must be symmetric");
  MatrixX<Scalar> a_hat = adjacency;
  a_hat.diagonal().array() += Scalar(1);
  const VectorX<Scalar> inv_sqrt_degree = a_hat.rowwise().sum().array().rsqrt().matrix();
  return inv_sqrt_degree.asDiagonal() * a_hat * inv_sqrt_degree.asDiagonal();
}

// `h0` holds the real vertices only and `normalized` is their block of N.
template <typename Scalar>
AgcnForward<Scalar> agcn_forward_normalized(const MatrixX<Scalar>& h0, const MatrixX<Scalar>& normalized,
                                            const AgcnParams<Scalar>& params, const VectorX<Scalar>& owner,
                                            Eigen::Index padded_count = -1) {
  const Eigen::Index n = h0.rows();
  const Eigen::Index d = params.dim();
  if (n < 1) throw ContractError("AGCN input has no real vertex");
  if (h0.cols() != d || owner.size() != d) throw ContractError("AGCN dimension mismatch");
  if (normalized.rows() != n || normalized.cols() != n) throw ContractError("AGCN adjacency/feature size mismatch");

  AgcnForward<Scalar> out;
  auto& c = out.cache;
  c.real_count = n;
  c.padded_count = padded_count < n ? n : padded_count;
  c.normalized = normalized;
  c.activations.reserve(params.layers() + 1);
  c.activations.push_back(h0);
  for (const auto& w : params.weights) {
    c.propagated.push_back(c.normalized * c.activations.back());
    c.pre_activations.push_back(c.propagated.back() * w);
    c.activations.push_back(c.pre_activations.back().cwiseMax(Scalar(0)));
  }
  const MatrixX<Scalar>& v = c.activations.back();
  c.attention_input = (v.array().rowwise() * owner.transpose().array()).matrix();
  c.scores = c.attention_input.cwiseMax(Scalar(0)) * params.attention;

  const Scalar top = c.scores.maxCoeff();
  VectorX<Scalar> expd = (c.scores.array() - top).exp().matrix();
  c.alpha = VectorX<Scalar>::Zero(c.padded_count);
  c.alpha.head(n) = expd / expd.sum();
  out.embedding = v.transpose() * c.alpha.head(n);
  return out;
}

// General entry point: `adjacency` may be zero-padded past `real_count`.
template <typename Scalar>
AgcnForward<Scalar> agcn_forward(const MatrixX<Scalar>& h0, const MatrixX<Scalar>& adjacency,
                                 const AgcnParams<Scalar>& params, const VectorX<Scalar>& owner,
                                 Eigen::Index real_count) {
  if (adjacency.rows() != h0.rows() || adjacency.cols() != h0.rows()) {
    throw ContractError("AGCN adjacency must be n x n for n feature rows");
  }
  if (real_count < 1) throw ContractError("AGCN input has no real vertex");
  if (real_count > h0.rows()) throw ContractError("AGCN real vertex count exceeds input size");
  const MatrixX<Scalar> normalized = normalize_adjacency(adjacency.topLeftCorner(real_count, real_count));
  return agcn_forward_normalized<Scalar>(h0.topRows(real_count), normalized, params, owner, h0.rows());
}

// With `parameter_gradients` false the weight and attention gradients are
// left empty; input and owner gradients are always produced.
template <typename Scalar>
AgcnGradients<Scalar> agcn_backward(const AgcnCache<Scalar>& c, const AgcnParams<Scalar>& params,
                                    const VectorX<Scalar>& owner, const VectorX<Scalar>& grad_out,
                                    bool parameter_gradients = true) {
  const Eigen::Index n = c.real_count;
  const Eigen::Index d = params.dim();
  if (grad_out.size() != d || owner.size() != d || c.activations.size() != params.layers() + 1 ||
      c.activations.back().rows() != n || c.activations.back().cols() != d) {
    throw ContractError("AGCN cache does not match parameters");
  }
  const MatrixX<Scalar>& v = c.activations.back();
  const VectorX<Scalar> alpha = c.alpha.head(n);

  MatrixX<Scalar> d_v = alpha * grad_out.transpose();
  const VectorX<Scalar> d_alpha = v * grad_out;
  const VectorX<Scalar> d_scores = (alpha.array() * (d_alpha.array() - alpha.dot(d_alpha))).matrix();

  AgcnGradients<Scalar> g;
  if (parameter_gradients) {
    g.params.attention = c.attention_input.cwiseMax(Scalar(0)).transpose() * d_scores;
    g.params.weights.resize(params.layers());
  }
  const MatrixX<Scalar> d_q =
      ((d_scores * params.attention.transpose()).array() * (c.attention_input.array() > Scalar(0)).template cast<Scalar>())
          .matrix();
  d_v += (d_q.array().rowwise() * owner.transpose().array()).matrix();
  g.owner = (d_q.array() * v.array()).colwise().sum().transpose().matrix();

  MatrixX<Scalar> d_h = std::move(d_v);
  for (std::size_t l = params.layers(); l-- > 0;) {
    const MatrixX<Scalar> d_z =
        (d_h.array() * (c.pre_activations[l].array() > Scalar(0)).template cast<Scalar>()).matrix();
    if (parameter_gradients) g.params.weights[l] = c.propagated[l].transpose() * d_z;
    d_h = c.normalized.transpose() * (d_z * params.weights[l].transpose());
  }
  g.input = MatrixX<Scalar>::Zero(c.padded_count, d);
  g.input.topRows(n) = d_h;
  return g;
}

}  // namespace dkge
