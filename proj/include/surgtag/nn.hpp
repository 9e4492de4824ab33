#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "surgtag/tensor.hpp"

namespace surgtag {

/// Seeded PRNG with a portable, serializable state. Real-valued draws are
/// derived from raw 64-bit outputs so results do not depend on the standard
/// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 42) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::size_t index(std::size_t n);  // [0, n)

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[index(i)]);
  }

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

/// A named, trainable tensor. Frozen parameters take part in the forward pass
/// but never receive optimizer updates.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool frozen = false;
};

/// Ordered parameter registry; registration order defines the checkpoint layout.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Tensor value, bool frozen = false);
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights.
  Tensor add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng);
  Tensor add_constant(const std::string& name, Shape shape, double value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grad();
  /// Replace the tensor stored under `name` (shape changes allowed).
  void replace(const std::string& name, Tensor value);

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;

  static LayerNormParams create(ParameterStore& store, const std::string& prefix, std::size_t dim);
  static LayerNormParams bind(const ParameterStore& store, const std::string& prefix);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

struct LinearParams {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static LinearParams create(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                             Rng& rng);
  static LinearParams bind(const ParameterStore& store, const std::string& prefix);
  Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }
};

/// Two-layer GELU MLP, hidden width = 4 * dim.
struct MlpParams {
  LinearParams fc1;
  LinearParams fc2;

  static MlpParams create(ParameterStore& store, const std::string& prefix, std::size_t dim, Rng& rng);
  static MlpParams bind(const ParameterStore& store, const std::string& prefix);
  Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
};

/// Bias-free q/k/v/o projections, each [D, D].
struct AttentionWeights {
  Tensor wq;
  Tensor wk;
  Tensor wv;
  Tensor wo;

  static AttentionWeights create(ParameterStore& store, const std::string& prefix, std::size_t dim, Rng& rng);
  static AttentionWeights bind(const ParameterStore& store, const std::string& prefix);
};

/// Scaled dot-product attention with `heads` heads over inputs shaped
/// [..., S, D]. q, k and v share leading dims; k and v share S. `mask`, when
/// given, is an additive [S_q, S_k] tensor applied to every head.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionWeights& weights,
                            std::size_t heads, const Tensor* mask = nullptr);

/// Additive mask with -1e9 above the diagonal.
Tensor causal_mask(std::size_t length);

}  // namespace surgtag
