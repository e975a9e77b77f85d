#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "nsgr/autodiff.hpp"
#include "nsgr/errors.hpp"
#include "nsgr/params.hpp"
#include "nsgr/tensor.hpp"

namespace nsgr {

enum class Activation { None, Sigmoid, Softmax };

// Fully connected stack: widths = (input, hidden..., output). Hidden layers
// use ReLU; the output layer applies `output`.
struct MlpSpec {
  std::vector<std::size_t> widths;
  Activation output = Activation::None;

  MlpSpec() = default;
  MlpSpec(std::vector<std::size_t> w, Activation out = Activation::None)
      : widths(std::move(w)), output(out) {}

  std::size_t layers() const { return widths.empty() ? 0 : widths.size() - 1; }

  void validate() const {
    if (widths.size() < 2) throw ConfigError("mlp: need at least one layer (input and output width)");
    for (std::size_t w : widths)
      if (w == 0) throw ConfigError("mlp: zero layer width");
  }
};

inline std::string layer_weight_name(const std::string& prefix, std::size_t layer) {
  return prefix + ".W" + std::to_string(layer);
}
inline std::string layer_bias_name(const std::string& prefix, std::size_t layer) {
  return prefix + ".b" + std::to_string(layer);
}

inline void init_mlp(ParamStore& params, const std::string& prefix, const MlpSpec& spec, Rng& rng,
                     double stddev = 0.01) {
  spec.validate();
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    params.create_normal(layer_weight_name(prefix, l), spec.widths[l], spec.widths[l + 1], rng, stddev);
    params.create_normal(layer_bias_name(prefix, l), 1, spec.widths[l + 1], rng, stddev);
  }
}

inline Var mlp_forward(const MlpSpec& spec, ParamStore& params, const std::string& prefix, Var input) {
  spec.validate();
  if (input.cols() != spec.widths[0])
    throw ConfigError("mlp '" + prefix + "' layer 0 expects input width " + std::to_string(spec.widths[0]) +
                      ", got " + std::to_string(input.cols()));
  Var h = std::move(input);
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    h = add_rowvec(matmul(h, params.var(layer_weight_name(prefix, l))), params.var(layer_bias_name(prefix, l)));
    if (l + 1 < spec.layers()) h = relu(h);
  }
  switch (spec.output) {
    case Activation::None: return h;
    case Activation::Sigmoid: return sigmoid(h);
    case Activation::Softmax: return softmax_rows(h);
  }
  return h;
}

// ---- attention ----
// Single head. Projections Wq/Wk/Wv map onto a shared model dimension; there
// is no output projection and no positional encoding.

struct AttentionSpec {
  std::size_t query_dim = 0;
  std::size_t key_dim = 0;
  std::size_t model_dim = 0;
};

inline void init_attention(ParamStore& params, const std::string& prefix, const AttentionSpec& spec,
                           Rng& rng, double stddev = 0.01) {
  if (spec.query_dim == 0 || spec.key_dim == 0 || spec.model_dim == 0)
    throw ConfigError("attention '" + prefix + "': zero dimension");
  params.create_normal(prefix + ".Wq", spec.query_dim, spec.model_dim, rng, stddev);
  params.create_normal(prefix + ".Wk", spec.key_dim, spec.model_dim, rng, stddev);
  params.create_normal(prefix + ".Wv", spec.key_dim, spec.model_dim, rng, stddev);
}

// softmax(Q K^T / sqrt(d)) V with an optional additive score bias (used for
// causal masking). Queries and keys may differ; each output row is the
// attention readout for the matching query row.
inline Var cross_attention(const Var& queries, const Var& keys, ParamStore& params,
                           const std::string& prefix, const Tensor* score_bias = nullptr) {
  if (queries.rows() == 0) throw DomainError("attention '" + prefix + "': no query rows");
  if (keys.rows() == 0) throw DomainError("attention '" + prefix + "': no key rows");
  Var q = matmul(queries, params.var(prefix + ".Wq"));
  Var k = matmul(keys, params.var(prefix + ".Wk"));
  Var v = matmul(keys, params.var(prefix + ".Wv"));
  Var scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  if (score_bias != nullptr) scores = add(scores, constant(*score_bias));
  return matmul(softmax_rows(scores), v);
}

// Self-attention over a row set; permutation-equivariant by construction.
inline Var self_attention(const Var& inputs, ParamStore& params, const std::string& prefix) {
  return cross_attention(inputs, inputs, params, prefix);
}

// Single-query attention over a key set.
inline Var target_attention(const Var& query, const Var& keys, ParamStore& params,
                            const std::string& prefix) {
  if (query.rows() != 1) throw DomainError("target_attention '" + prefix + "': query must be a single row");
  return cross_attention(query, keys, params, prefix);
}

inline Tensor causal_score_bias(std::size_t n) {
  Tensor bias(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) bias.at(i, j) = -1e30;
  return bias;
}

// ---- gradient audit ----

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t coords_checked = 0;
};

// Compares reverse-mode gradients of a scalar loss against central finite
// differences. Large tensors are spot-checked on sampled coordinates.
inline GradCheckReport grad_check(const std::function<Var()>& loss_fn, ParamStore& params,
                                  double epsilon, Rng& rng, std::size_t max_coords_per_tensor = 8) {
  if (epsilon < 1e-5 || epsilon > 1e-2)
    throw ConfigError("grad_check: epsilon must lie in [1e-5, 1e-2]");

  params.zero_grads();
  Var loss = loss_fn();
  if (!loss.value().all_finite()) throw DiagnosticError("grad_check: non-finite loss");
  backward(loss);

  std::map<std::string, Tensor> analytic;
  for (const std::string& name : params.names())
    if (params.trainable(name)) analytic.emplace(name, params.grad(name));

  GradCheckReport report;
  for (auto& [name, grad] : analytic) {
    Tensor& value = params.value(name);
    std::vector<std::size_t> coords(value.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords_per_tensor);
    }
    for (std::size_t c : coords) {
      const double saved = value.data[c];
      value.data[c] = saved + epsilon;
      const double f_plus = loss_fn().scalar();
      value.data[c] = saved - epsilon;
      const double f_minus = loss_fn().scalar();
      value.data[c] = saved;
      const double fd = (f_plus - f_minus) / (2.0 * epsilon);
      const double rel = std::abs(grad.data[c] - fd) / (std::abs(fd) + 1e-8);
      ++report.coords_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = name;
      }
    }
  }
  return report;
}

}  // namespace nsgr
