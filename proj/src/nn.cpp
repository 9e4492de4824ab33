#include "surgtag/nn.hpp"

#include <cmath>
#include <sstream>

#include "surgtag/errors.hpp"

namespace surgtag {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  // Box-Muller; uses two fresh draws per call so the stream stays simple.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw ValidationError("Rng::index(0)");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v = engine_();
  while (v >= limit) v = engine_();
  return static_cast<std::size_t>(v % bound);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (is.fail()) throw FormatError("invalid rng state");
}

Tensor ParameterStore::add(const std::string& name, Tensor value, bool frozen) {
  if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
  value.set_requires_grad(!frozen);
  index_[name] = params_.size();
  params_.push_back({name, value, frozen});
  return value;
}

Tensor ParameterStore::add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.uniform(-bound, bound);
  return add(name, Tensor::from(std::move(shape), std::move(values)));
}

Tensor ParameterStore::add_constant(const std::string& name, Shape shape, double value) {
  return add(name, Tensor::full(std::move(shape), value));
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return params_[it->second];
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void ParameterStore::replace(const std::string& name, Tensor value) {
  Parameter& p = get(name);
  value.set_requires_grad(!p.frozen);
  p.tensor = std::move(value);
}

LayerNormParams LayerNormParams::create(ParameterStore& store, const std::string& prefix, std::size_t dim) {
  return {store.add_constant(prefix + ".gamma", {dim}, 1.0), store.add_constant(prefix + ".beta", {dim}, 0.0)};
}

LinearParams LinearParams::create(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                                  Rng& rng) {
  return {store.add_uniform(prefix + ".weight", {in, out}, in, rng), store.add_constant(prefix + ".bias", {out}, 0.0)};
}

MlpParams MlpParams::create(ParameterStore& store, const std::string& prefix, std::size_t dim, Rng& rng) {
  return {LinearParams::create(store, prefix + ".fc1", dim, 4 * dim, rng),
          LinearParams::create(store, prefix + ".fc2", 4 * dim, dim, rng)};
}

AttentionWeights AttentionWeights::create(ParameterStore& store, const std::string& prefix, std::size_t dim,
                                          Rng& rng) {
  AttentionWeights w;
  w.wq = store.add_uniform(prefix + ".wq", {dim, dim}, dim, rng);
  w.wk = store.add_uniform(prefix + ".wk", {dim, dim}, dim, rng);
  w.wv = store.add_uniform(prefix + ".wv", {dim, dim}, dim, rng);
  w.wo = store.add_uniform(prefix + ".wo", {dim, dim}, dim, rng);
  return w;
}

LayerNormParams LayerNormParams::bind(const ParameterStore& store, const std::string& prefix) {
  return {store.get(prefix + ".gamma").tensor, store.get(prefix + ".beta").tensor};
}

LinearParams LinearParams::bind(const ParameterStore& store, const std::string& prefix) {
  return {store.get(prefix + ".weight").tensor, store.get(prefix + ".bias").tensor};
}

MlpParams MlpParams::bind(const ParameterStore& store, const std::string& prefix) {
  return {LinearParams::bind(store, prefix + ".fc1"), LinearParams::bind(store, prefix + ".fc2")};
}

AttentionWeights AttentionWeights::bind(const ParameterStore& store, const std::string& prefix) {
  return {store.get(prefix + ".wq").tensor, store.get(prefix + ".wk").tensor, store.get(prefix + ".wv").tensor,
          store.get(prefix + ".wo").tensor};
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionWeights& weights,
                            std::size_t heads, const Tensor* mask) {
  if (q.ndim() < 2 || k.ndim() < 2 || v.ndim() < 2) {
    throw DimensionError("attention inputs must be [..., S, D]");
  }
  const std::size_t d = q.shape().back();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: dim " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  for (const Tensor* w : {&weights.wq, &weights.wk, &weights.wv, &weights.wo}) {
    if (w->shape() != Shape{d, d}) {
      throw ConfigError("attention: projection " + shape_str(w->shape()) + " must be [" + std::to_string(d) + "," +
                        std::to_string(d) + "]");
    }
  }
  const Shape lead(q.shape().begin(), q.shape().end() - 2);
  if (k.shape() != v.shape() || k.shape().back() != d ||
      !std::equal(lead.begin(), lead.end(), k.shape().begin()) || k.ndim() != q.ndim()) {
    throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                         shape_str(v.shape()) + " are inconsistent");
  }
  const std::size_t batch = shape_numel(lead);
  const std::size_t sq = q.shape()[q.ndim() - 2];
  const std::size_t sk = k.shape()[k.ndim() - 2];
  const std::size_t dh = d / heads;

  auto split = [&](const Tensor& x, const Tensor& w, std::size_t s) {
    Tensor proj = matmul(reshape(x, {batch, s, d}), w);
    return permute(reshape(proj, {batch, s, heads, dh}), {0, 2, 1, 3});  // [B,H,S,dh]
  };
  Tensor qh = split(q, weights.wq, sq);
  Tensor kh = split(k, weights.wk, sk);
  Tensor vh = split(v, weights.wv, sk);
  Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
  if (mask != nullptr) {
    if (mask->shape() != Shape{sq, sk}) throw DimensionError("attention: mask must be " + shape_str({sq, sk}));
    scores = add(scores, *mask);
  }
  Tensor attn = softmax(scores, 3);
  Tensor merged = reshape(permute(matmul(attn, vh), {0, 2, 1, 3}), {batch, sq, d});
  Shape out_shape = lead;
  out_shape.push_back(sq);
  out_shape.push_back(d);
  return reshape(matmul(merged, weights.wo), out_shape);
}

Tensor causal_mask(std::size_t length) {
  std::vector<double> m(length * length, 0.0);
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = i + 1; j < length; ++j) m[i * length + j] = -1e9;
  }
  return Tensor::from({length, length}, std::move(m));
}

}  // namespace surgtag
