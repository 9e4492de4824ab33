#include "surgtag/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "surgtag/errors.hpp"

namespace surgtag {

using detail::Node;

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

thread_local bool grad_enabled = true;

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void check_shape(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape));
  }
}

// Gradient buffer of an input for the running pass, or nullptr when the input
// does not take part in differentiation.
double* grad_of(const std::shared_ptr<Node>& in) {
  return in->requires_grad ? in->pass_grad.data() : nullptr;
}

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool any_f32 = false;
  bool any_grad = false;
  for (const Tensor* t : inputs) {
    any_f32 = any_f32 || t->dtype() == Dtype::f32;
    any_grad = any_grad || t->requires_grad();
  }
  node->dtype = any_f32 ? Dtype::f32 : Dtype::f64;
  if (any_f32) {
    for (double& v : node->data) v = round_f32(v);
  }
  if (any_grad && grad_enabled) {
    node->requires_grad = true;
    for (const Tensor* t : inputs) node->inputs.push_back(t->node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor::wrap(std::move(node));
}

Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool any_f32 = false;
  bool any_grad = false;
  for (const Tensor& t : inputs) {
    any_f32 = any_f32 || t.dtype() == Dtype::f32;
    any_grad = any_grad || t.requires_grad();
  }
  node->dtype = any_f32 ? Dtype::f32 : Dtype::f64;
  if (any_f32) {
    for (double& v : node->data) v = round_f32(v);
  }
  if (any_grad && grad_enabled) {
    node->requires_grad = true;
    for (const Tensor& t : inputs) node->inputs.push_back(t.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor::wrap(std::move(node));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ValidationError(std::string(op) + ": undefined tensor");
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::wrap(std::shared_ptr<Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::zeros(Shape shape, Dtype dtype, bool requires_grad) {
  return from(shape, std::vector<double>(shape_numel(shape), 0.0), dtype, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, Dtype dtype) {
  return from(shape, std::vector<double>(shape_numel(shape), value), dtype, false);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, Dtype dtype, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->dtype = dtype;
  if (dtype == Dtype::f32) {
    for (double& v : node->data) v = round_f32(v);
  }
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

Tensor Tensor::scalar(double value, Dtype dtype) { return from({}, {value}, dtype, false); }

const Shape& Tensor::shape() const {
  static const Shape empty;
  return node_ ? node_->shape : empty;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= ndim()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }
Dtype Tensor::dtype() const { return node_ ? node_->dtype : Dtype::f64; }

std::span<const double> Tensor::data() const {
  if (!node_) return {};
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw ValidationError("mutable_data on undefined tensor");
  if (node_->backward) throw ValidationError("mutable_data on an op result");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != ndim()) throw DimensionError("index rank mismatch for " + shape_str(shape()));
  auto strides = strides_of(shape());
  std::size_t off = 0;
  std::size_t i = 0;
  for (std::size_t v : index) {
    if (v >= node_->shape[i]) throw DimensionError("index out of range for " + shape_str(shape()));
    off += v * strides[i++];
  }
  return node_->data[off];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_) throw ValidationError("set_requires_grad on undefined tensor");
  node_->requires_grad = flag;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) return {};
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

void Tensor::backward() const {
  if (!node_) throw ValidationError("backward on undefined tensor");
  if (numel() != 1) throw DimensionError("backward needs a scalar root, got " + shape_str(shape()));
  if (!node_->requires_grad) throw ValidationError("backward on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* in = node->inputs[next++].get();
      if (in->requires_grad && seen.insert(in).second) stack.emplace_back(in, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->pass_grad.assign(n->data.size(), 0.0);
  node_->pass_grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
  for (Node* n : order) {
    if (n->grad.empty()) {
      n->grad = std::move(n->pass_grad);
    } else {
      for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += n->pass_grad[i];
    }
    n->pass_grad = {};
  }
}

Tensor Tensor::detach() const {
  require_defined(*this, "detach");
  return from(shape(), node_->data, dtype(), false);
}

Tensor Tensor::to(Dtype target) const {
  require_defined(*this, "to");
  return from(shape(), node_->data, target, false);
}

bool GradMode::enabled() { return grad_enabled; }
void GradMode::set_enabled(bool enabled) { grad_enabled = enabled; }

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }

bool all_finite(const Tensor& t) {
  auto d = t.data();
  return std::all_of(d.begin(), d.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2 || as.back() != bs[bs.size() - 2]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  }
  Shape batch_a(as.begin(), as.end() - 2);
  Shape batch_b(bs.begin(), bs.end() - 2);
  Shape batch;
  bool a_shared = false;
  bool b_shared = false;
  if (batch_a == batch_b) {
    batch = batch_a;
  } else if (batch_b.empty()) {
    batch = batch_a;
    b_shared = true;
  } else if (batch_a.empty()) {
    batch = batch_b;
    a_shared = true;
  } else {
    throw DimensionError("matmul: batch dims of " + shape_str(as) + " and " + shape_str(bs) + " do not broadcast");
  }
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t n = bs.back();
  const std::size_t nb = shape_numel(batch);
  const std::size_t a_step = a_shared ? 0 : m * k;
  const std::size_t b_step = b_shared ? 0 : k * n;

  std::vector<double> out(nb * m * n, 0.0);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t bi = 0; bi < nb; ++bi) {
    const double* A = ad.data() + bi * a_step;
    const double* B = bd.data() + bi * b_step;
    double* C = out.data() + bi * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = C + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A[i * k + p];
        const double* brow = B + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  return make_result(std::move(out_shape), std::move(out), {&a, &b}, [=](Node& self) {
    const auto& A_all = self.inputs[0]->data;
    const auto& B_all = self.inputs[1]->data;
    double* dA_all = grad_of(self.inputs[0]);
    double* dB_all = grad_of(self.inputs[1]);
    for (std::size_t bi = 0; bi < nb; ++bi) {
      const double* G = self.pass_grad.data() + bi * m * n;
      const double* A = A_all.data() + bi * a_step;
      const double* B = B_all.data() + bi * b_step;
      if (dA_all) {
        double* dA = dA_all + bi * a_step;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
            dA[i * k + p] += acc;
          }
        }
      }
      if (dB_all) {
        double* dB = dB_all + bi * b_step;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += av * G[i * n + j];
          }
        }
      }
    }
  });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  require_defined(a, "permute");
  const Shape& in_shape = a.shape();
  if (axes.size() != in_shape.size()) throw DimensionError("permute: axes rank mismatch for " + shape_str(in_shape));
  std::vector<bool> used(axes.size(), false);
  Shape out_shape(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= axes.size() || used[axes[i]]) throw DimensionError("permute: invalid axes");
    used[axes[i]] = true;
    out_shape[i] = in_shape[axes[i]];
  }
  const auto in_strides = strides_of(in_shape);
  const std::size_t total = a.numel();
  // source[o] = input offset feeding output element o
  auto source = std::make_shared<std::vector<std::size_t>>(total);
  std::vector<std::size_t> idx(axes.size(), 0);
  for (std::size_t o = 0; o < total; ++o) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < axes.size(); ++d) off += idx[d] * in_strides[axes[d]];
    (*source)[o] = off;
    for (std::size_t d = axes.size(); d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<double> out(total);
  auto ad = a.data();
  for (std::size_t o = 0; o < total; ++o) out[o] = ad[(*source)[o]];
  return make_result(std::move(out_shape), std::move(out), {&a}, [source](Node& self) {
    double* dA = grad_of(self.inputs[0]);
    if (!dA) return;
    for (std::size_t o = 0; o < source->size(); ++o) dA[(*source)[o]] += self.pass_grad[o];
  });
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  if (a.ndim() < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(a.shape()));
  std::vector<std::size_t> axes(a.ndim());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(a, axes);
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  check_shape(shape);
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {&a}, [](Node& self) {
    double* dA = grad_of(self.inputs[0]);
    if (!dA) return;
    for (std::size_t i = 0; i < self.pass_grad.size(); ++i) dA[i] += self.pass_grad[i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape() && !is_suffix(b.shape(), a.shape())) {
    throw DimensionError(std::string(op) + ": cannot combine " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a_in, const Tensor& b_in) {
  const bool swap = a_in.defined() && b_in.defined() &&
                    (a_in.numel() < b_in.numel() || (a_in.numel() == b_in.numel() && a_in.ndim() < b_in.ndim()));
  const Tensor& a = swap ? b_in : a_in;
  const Tensor& b = swap ? a_in : b_in;
  check_broadcast(a, b, "add");
  const std::size_t bn = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i % bn];
  return make_result(a.shape(), std::move(out), {&a, &b}, [bn](Node& self) {
    double* dA = grad_of(self.inputs[0]);
    double* dB = grad_of(self.inputs[1]);
    const auto& g = self.pass_grad;
    if (dA) {
      for (std::size_t i = 0; i < g.size(); ++i) dA[i] += g[i];
    }
    if (dB) {
      for (std::size_t i = 0; i < g.size(); ++i) dB[i % bn] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "sub");
  const std::size_t bn = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i % bn];
  return make_result(a.shape(), std::move(out), {&a, &b}, [bn](Node& self) {
    double* dA = grad_of(self.inputs[0]);
    double* dB = grad_of(self.inputs[1]);
    const auto& g = self.pass_grad;
    if (dA) {
      for (std::size_t i = 0; i < g.size(); ++i) dA[i] += g[i];
    }
    if (dB) {
      for (std::size_t i = 0; i < g.size(); ++i) dB[i % bn] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a_in, const Tensor& b_in) {
  const bool swap = a_in.defined() && b_in.defined() &&
                    (a_in.numel() < b_in.numel() || (a_in.numel() == b_in.numel() && a_in.ndim() < b_in.ndim()));
  const Tensor& a = swap ? b_in : a_in;
  const Tensor& b = swap ? a_in : b_in;
  check_broadcast(a, b, "mul");
  const std::size_t bn = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i % bn];
  return make_result(a.shape(), std::move(out), {&a, &b}, [bn](Node& self) {
    const auto& A = self.inputs[0]->data;
    const auto& B = self.inputs[1]->data;
    double* dA = grad_of(self.inputs[0]);
    double* dB = grad_of(self.inputs[1]);
    const auto& g = self.pass_grad;
    if (dA) {
      for (std::size_t i = 0; i < g.size(); ++i) dA[i] += g[i] * B[i % bn];
    }
    if (dB) {
      for (std::size_t i = 0; i < g.size(); ++i) dB[i % bn] += g[i] * A[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), {&a}, [factor](Node& self) {
    double* dA = grad_of(self.inputs[0]);
    if (!dA) return;
    for (std::size_t i = 0; i < self.pass_grad.size(); ++i) dA[i] += self.pass_grad[i] * factor;
  });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor gelu(const Tensor& a) {
  require_defined(a, "gelu");
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  std::vector<double> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * ad[i] * (1.0 + std::erf(ad[i] * inv_sqrt2));
  return make_result(a.shape(), std::move(out), {&a}, [](Node& self) {
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    double* dA = grad_of(self.inputs[0]);
    if (!dA) return;
    const auto& x = self.inputs[0]->data;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x[i] * x[i]);
      dA[i] += self.pass_grad[i] * (cdf + x[i] * pdf);
    }
  });
}

namespace {

double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(sigmoid(z)) without overflow.
double log_sigmoid(double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

}  // namespace

Tensor sigmoid(const Tensor& a) {
  require_defined(a, "sigmoid");
  std::vector<double> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(ad[i]);
  return make_result(a.shape(), std::move(out), {&a}, [](Node& self) {
    double* dA = grad_of(self.inputs[0]);
    if (!dA) return;
    for (std::size_t i = 0; i < self.data.size(); ++i) {
      const double s = self.data[i];
      dA[i] += self.pass_grad[i] * s * (1.0 - s);
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_defined(x, "softmax");
  if (axis >= x.ndim()) throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  const Shape& s = x.shape();
  const std::size_t len = s[axis];
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = xd[base];
      for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, xd[base + l * inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double e = std::exp(xd[base + l * inner] - mx);
        out[base + l * inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= total;
    }
  }
  return make_result(s, std::move(out), {&x}, [outer, inner, len](Node& self) {
    double* dX = grad_of(self.inputs[0]);
    if (!dX) return;
    const auto& y = self.data;
    const auto& g = self.pass_grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < len; ++l) dot += g[base + l * inner] * y[base + l * inner];
        for (std::size_t l = 0; l < len; ++l) {
          const std::size_t i = base + l * inner;
          dX[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined(x, "layer_norm");
  require_defined(gamma, "layer_norm");
  require_defined(beta, "layer_norm");
  if (x.ndim() < 1) throw DimensionError("layer_norm on a scalar");
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()) +
                         " must be [" + std::to_string(d) + "]");
  }
  const std::size_t rows = x.numel() / d;
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gd[j] + bd[j];
    }
  }
  return make_result(x.shape(), std::move(out), {&x, &gamma, &beta}, [=](Node& self) {
    double* dX = grad_of(self.inputs[0]);
    double* dG = grad_of(self.inputs[1]);
    double* dB = grad_of(self.inputs[2]);
    const auto& G = self.inputs[1]->data;
    const auto& g = self.pass_grad;
    std::vector<double> dxhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* h = xhat->data() + r * d;
      const double* gr = g.data() + r * d;
      if (dG || dB) {
        for (std::size_t j = 0; j < d; ++j) {
          if (dG) dG[j] += gr[j] * h[j];
          if (dB) dB[j] += gr[j];
        }
      }
      if (!dX) continue;
      double mean_dh = 0.0;
      double mean_dh_h = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        dxhat[j] = gr[j] * G[j];
        mean_dh += dxhat[j];
        mean_dh_h += dxhat[j] * h[j];
      }
      mean_dh /= static_cast<double>(d);
      mean_dh_h /= static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j) dX[r * d + j] += (*rstd)[r] * (dxhat[j] - mean_dh - h[j] * mean_dh_h);
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result({}, {total}, {&a}, [](Node& self) {
    double* dA = grad_of(self.inputs[0]);
    if (!dA) return;
    const double g = self.pass_grad[0];
    for (std::size_t i = 0; i < self.inputs[0]->data.size(); ++i) dA[i] += g;
  });
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  double total = 0.0;
  for (double v : a.data()) total += v;
  const double n = static_cast<double>(a.numel());
  return make_result({}, {total / n}, {&a}, [n](Node& self) {
    double* dA = grad_of(self.inputs[0]);
    if (!dA) return;
    const double g = self.pass_grad[0] / n;
    for (std::size_t i = 0; i < self.inputs[0]->data.size(); ++i) dA[i] += g;
  });
}

Tensor mean_axis(const Tensor& a, std::size_t axis) {
  require_defined(a, "mean_axis");
  if (axis >= a.ndim()) throw DimensionError("mean_axis: axis " + std::to_string(axis) + " invalid for " + shape_str(a.shape()));
  const Shape& s = a.shape();
  const std::size_t len = s[axis];
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  auto ad = a.data();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      const double* src = ad.data() + (o * len + l) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t in = 0; in < inner; ++in) dst[in] += src[in];
    }
  }
  const double n = static_cast<double>(len);
  for (double& v : out) v /= n;
  return make_result(std::move(out_shape), std::move(out), {&a}, [=](Node& self) {
    double* dA = grad_of(self.inputs[0]);
    if (!dA) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t l = 0; l < len; ++l) {
        for (std::size_t in = 0; in < inner; ++in) dA[(o * len + l) * inner + in] += self.pass_grad[o * inner + in] / n;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Axis-0 structure

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  for (const Tensor& p : parts) require_defined(p, "concat_rows");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw DimensionError("concat_rows on scalars");
  Shape out_shape = first;
  out_shape[0] = 0;
  std::vector<std::size_t> offsets;
  std::vector<double> out;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      throw DimensionError("concat_rows: " + shape_str(s) + " does not match " + shape_str(first));
    }
    offsets.push_back(out.size());
    out_shape[0] += s[0];
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return make_result(std::move(out_shape), std::move(out), parts, [offsets](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      double* dP = grad_of(self.inputs[k]);
      if (!dP) continue;
      const std::size_t n = self.inputs[k]->data.size();
      for (std::size_t i = 0; i < n; ++i) dP[i] += self.pass_grad[offsets[k] + i];
    }
  });
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("stack: no parts");
  for (const Tensor& p : parts) require_defined(p, "stack");
  const Shape& first = parts.front().shape();
  for (const Tensor& p : parts) {
    if (p.shape() != first) throw DimensionError("stack: " + shape_str(p.shape()) + " does not match " + shape_str(first));
  }
  Shape out_shape{parts.size()};
  out_shape.insert(out_shape.end(), first.begin(), first.end());
  std::vector<double> out;
  out.reserve(shape_numel(out_shape));
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  const std::size_t n = shape_numel(first);
  return make_result(std::move(out_shape), std::move(out), parts, [n](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      double* dP = grad_of(self.inputs[k]);
      if (!dP) continue;
      for (std::size_t i = 0; i < n; ++i) dP[i] += self.pass_grad[k * n + i];
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_defined(a, "slice_rows");
  if (a.ndim() < 1 || begin >= end || end > a.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                         shape_str(a.shape()));
  }
  const std::size_t row = a.numel() / a.dim(0);
  Shape out_shape = a.shape();
  out_shape[0] = end - begin;
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                          a.data().begin() + static_cast<std::ptrdiff_t>(end * row));
  return make_result(std::move(out_shape), std::move(out), {&a}, [offset = begin * row](Node& self) {
    double* dA = grad_of(self.inputs[0]);
    if (!dA) return;
    for (std::size_t i = 0; i < self.pass_grad.size(); ++i) dA[offset + i] += self.pass_grad[i];
  });
}

Tensor select(const Tensor& a, std::size_t index) {
  require_defined(a, "select");
  if (a.ndim() < 2) throw DimensionError("select needs rank >= 2, got " + shape_str(a.shape()));
  Shape out_shape(a.shape().begin() + 1, a.shape().end());
  return reshape(slice_rows(a, index, index + 1), out_shape);
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  require_defined(table, "gather_rows");
  if (table.ndim() != 2) throw DimensionError("gather_rows: table must be 2-D, got " + shape_str(table.shape()));
  if (ids.empty()) throw DimensionError("gather_rows: no ids");
  const std::size_t rows = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  std::vector<double> out(idv.size() * d);
  auto td = table.data();
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] >= rows) throw ValidationError("gather_rows: id " + std::to_string(idv[i]) + " out of range");
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(idv[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return make_result({idv.size(), d}, std::move(out), {&table}, [idv, d](Node& self) {
    double* dT = grad_of(self.inputs[0]);
    if (!dT) return;
    for (std::size_t i = 0; i < idv.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) dT[idv[i] * d + j] += self.pass_grad[i * d + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Losses

namespace {

void check_targets(const Tensor& logits, const Tensor& targets, const char* op) {
  require_defined(logits, op);
  require_defined(targets, op);
  if (logits.shape() != targets.shape()) {
    throw DimensionError(std::string(op) + ": logits " + shape_str(logits.shape()) + " vs targets " +
                         shape_str(targets.shape()));
  }
  for (double t : targets.data()) {
    if (t != 0.0 && t != 1.0) throw ValidationError(std::string(op) + ": targets must be 0 or 1");
  }
}

}  // namespace

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  check_targets(logits, targets, "bce_with_logits");
  auto z = logits.data();
  auto t = targets.data();
  const double k = static_cast<double>(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    // log(1 + exp(-s z)), s = +-1
    const double sz = t[i] == 1.0 ? z[i] : -z[i];
    total += -log_sigmoid(sz);
  }
  return make_result({}, {total / k}, {&logits, &targets}, [k](Node& self) {
    double* dZ = grad_of(self.inputs[0]);
    if (!dZ) return;
    const auto& Z = self.inputs[0]->data;
    const auto& T = self.inputs[1]->data;
    const double g = self.pass_grad[0] / k;
    for (std::size_t i = 0; i < Z.size(); ++i) dZ[i] += g * (stable_sigmoid(Z[i]) - T[i]);
  });
}

Tensor asl_with_logits(const Tensor& logits, const Tensor& targets, double gamma_neg, double gamma_pos,
                       double clip) {
  check_targets(logits, targets, "asl_with_logits");
  auto z = logits.data();
  auto t = targets.data();
  const double k = static_cast<double>(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double p = stable_sigmoid(z[i]);
    if (t[i] == 1.0) {
      total += -std::pow(1.0 - p, gamma_pos) * log_sigmoid(z[i]);
    } else {
      const double q = std::max(p - clip, 0.0);
      if (q > 0.0) total += -std::pow(q, gamma_neg) * std::log1p(-q);
    }
  }
  return make_result({}, {total / k}, {&logits, &targets}, [=](Node& self) {
    double* dZ = grad_of(self.inputs[0]);
    if (!dZ) return;
    const auto& Z = self.inputs[0]->data;
    const auto& T = self.inputs[1]->data;
    const double g = self.pass_grad[0] / k;
    for (std::size_t i = 0; i < Z.size(); ++i) {
      const double p = stable_sigmoid(Z[i]);
      if (T[i] == 1.0) {
        const double w = std::pow(1.0 - p, gamma_pos);
        dZ[i] += g * w * (gamma_pos * p * log_sigmoid(Z[i]) - (1.0 - p));
      } else {
        const double q = p - clip;
        if (q <= 0.0) continue;
        const double log1mq = std::log1p(-q);
        const double dq = (gamma_neg > 0.0 ? gamma_neg * std::pow(q, gamma_neg - 1.0) * log1mq : 0.0) -
                          std::pow(q, gamma_neg) / (1.0 - q);
        dZ[i] += g * (-dq) * p * (1.0 - p);
      }
    }
  });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets) {
  require_defined(logits, "cross_entropy");
  if (logits.ndim() != 2) throw DimensionError("cross_entropy_rows: logits must be [L,V], got " + shape_str(logits.shape()));
  const std::size_t rows = logits.dim(0);
  const std::size_t v = logits.dim(1);
  if (targets.size() != rows) throw DimensionError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) + " rows");
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  for (std::size_t t : tg) {
    if (t >= v) throw ValidationError("cross_entropy: target index " + std::to_string(t) + " out of range [0," + std::to_string(v) + ")");
  }
  auto z = logits.data();
  auto probs = std::make_shared<std::vector<double>>(z.size());
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = z.data() + r * v;
    const double mx = *std::max_element(row, row + v);
    double total = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      const double e = std::exp(row[j] - mx);
      (*probs)[r * v + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < v; ++j) (*probs)[r * v + j] /= total;
    out[r] = (mx + std::log(total)) - row[tg[r]];
  }
  return make_result({rows}, std::move(out), {&logits}, [=](Node& self) {
    double* dZ = grad_of(self.inputs[0]);
    if (!dZ) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = self.pass_grad[r];
      for (std::size_t j = 0; j < v; ++j) dZ[r * v + j] += g * ((*probs)[r * v + j] - (j == tg[r] ? 1.0 : 0.0));
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::size_t target) {
  require_defined(logits, "cross_entropy");
  if (logits.ndim() != 1) throw DimensionError("cross_entropy: logits must be [V], got " + shape_str(logits.shape()));
  const std::size_t ids[1] = {target};
  return reshape(cross_entropy_rows(reshape(logits, {1, logits.dim(0)}), ids), {});
}

}  // namespace surgtag
