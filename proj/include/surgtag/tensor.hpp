#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace surgtag {

/// Element precision. Storage is always double; f32 tensors hold values that
/// are exactly representable in binary32 (every op result is rounded).
enum class Dtype { f32, f64 };

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  Dtype dtype = Dtype::f64;
  bool requires_grad = false;
  std::vector<double> grad;       // accumulated across backward() calls
  std::vector<double> pass_grad;  // scratch for the running backward pass
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
};

}  // namespace detail

/// Dense row-major tensor with reverse-mode gradient support.
///
/// A Tensor is a cheap handle; copies share the same storage. Op results are
/// immutable, leaves (parameters) may be edited through mutable_data().
/// backward() computes the gradient of a scalar root for this pass and then
/// adds it into the `grad` buffer of every reachable tensor that requires
/// grad, so two backward() calls without zero_grad() leave exactly twice the
/// single-pass gradient.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, Dtype dtype = Dtype::f64, bool requires_grad = false);
  static Tensor full(Shape shape, double value, Dtype dtype = Dtype::f64);
  static Tensor from(Shape shape, std::vector<double> values, Dtype dtype = Dtype::f64,
                     bool requires_grad = false);
  static Tensor scalar(double value, Dtype dtype = Dtype::f64);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  Dtype dtype() const;

  std::span<const double> data() const;
  /// Write access for leaf tensors (parameters, inputs). Throws on op results.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  void backward() const;

  /// Same values, new leaf without history.
  Tensor detach() const;
  /// Deep copy as a leaf with the given precision.
  Tensor to(Dtype dtype) const;

  const detail::Node* node() const { return node_.get(); }
  static Tensor wrap(std::shared_ptr<detail::Node> node);
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Thread-local switch: while disabled, ops record no graph (inference).
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Contraction over the last two axes. Leading batch dims must match or be
// absent on one side.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // swaps the last two axes
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& a, Shape shape);

// Elementwise. `b` may equal a's shape or a trailing suffix of it, in which
// case it is repeated over a's leading dims.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor mean_axis(const Tensor& a, std::size_t axis);

// Axis-0 structure.
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor stack(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor select(const Tensor& a, std::size_t index);
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);

// Losses; all return scalar tensors.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);
Tensor asl_with_logits(const Tensor& logits, const Tensor& targets, double gamma_neg = 4.0,
                       double gamma_pos = 0.0, double clip = 0.05);
Tensor cross_entropy(const Tensor& logits, std::size_t target);
/// Per-row -log softmax(logits[i])[targets[i]] for logits [L,V]; returns [L].
Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);

bool all_finite(const Tensor& t);

}  // namespace surgtag
