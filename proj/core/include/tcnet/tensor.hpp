#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace tcnet {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// One recorded operation / value. Nodes form the tape: parents point at the
// inputs of the op that produced this value, and backprop accumulates
// vector-Jacobian products into them.
struct TensorNode {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<double> grad;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;
  bool backward_done = false;

  std::size_t size() const { return values.size(); }
  std::vector<double>& grad_buffer();
};

// Dense n-dimensional real tensor, value-semantic handle onto a tape node.
// Values are immutable once produced; 64-bit throughout.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);
  // Leaf that participates in gradient accumulation.
  static Tensor param(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->values.size(); }
  std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }
  const std::vector<double>& values() const { return node_->values; }
  double operator[](std::size_t i) const { return node_->values[i]; }
  double item() const;
  bool requires_grad() const { return node_->requires_grad; }

  // Gradient accumulated by the last backward pass; zero-filled if this leaf
  // was never reached.
  Tensor grad() const;
  void zero_grad();
  // Overwrites a parameter leaf in place (optimizer use only).
  void set_values(std::vector<double> values);

  Tensor detach() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<TensorNode> node_;
};

// ---- elementwise (trailing-axis broadcasting, extent-1 expansion only) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor tanh_op(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor log_op(const Tensor& a);
Tensor sqrt_op(const Tensor& a);
Tensor pow_op(const Tensor& a, double exponent);
Tensor abs_op(const Tensor& a);
Tensor sin_op(const Tensor& a);
Tensor cos_op(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor atan2_op(const Tensor& y, const Tensor& x);
// Wraps angles into (-pi, pi]; gradient passes through unchanged.
Tensor wrap_angle(const Tensor& a);

// ---- linear algebra / convolution ----
// a: [..., k] x b: [k, n] -> [..., n]
Tensor matmul(const Tensor& a, const Tensor& b);
// input: [B, Cin, L], weight: [Cout, Cin, kernel], valid cross-correlation.
Tensor conv1d(const Tensor& input, const Tensor& weight, std::size_t stride = 1);
// input: [B, C, L], weight: [C, kernel]; each channel with its own kernel.
Tensor conv1d_depthwise(const Tensor& input, const Tensor& weight, std::size_t stride = 1);

// ---- structure ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a, const std::vector<std::size_t>& perm);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

// ---- reductions ----
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_axis(const Tensor& a, std::size_t axis, bool keepdim = false);
Tensor mean_axis(const Tensor& a, std::size_t axis, bool keepdim = false);
// Exact max; gradient routes to the first argmax element.
Tensor max_axis(const Tensor& a, std::size_t axis, bool keepdim = false);
// Smooth max-like reduction used wherever a gradient is required.
Tensor logsumexp_axis(const Tensor& a, std::size_t axis, bool keepdim = false);
Tensor softmax(const Tensor& a, std::size_t axis);

// ---- spectral primitive ----
// Real-input DFT magnitudes of (signal .* window), bins 0..n/2. `window` may
// be undefined for a rectangular window. Differentiable in both inputs.
Tensor dft_magnitude(const Tensor& signal, const Tensor& window = Tensor());
// Full-spectrum (re, im) pair, length n each; verification surface.
std::pair<Tensor, Tensor> dft_real_imag(const Tensor& signal, const Tensor& window = Tensor());

// ---- autodiff driver ----
// Reverse pass from a scalar loss. Populates .grad() on every requires_grad
// leaf reachable from `loss`. A second backward on the same node throws.
void backward(const Tensor& loss);

// Max over elements of |analytic - central difference| / max(1, |central|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double step = 1e-5);

// ---- string-kind dispatcher (tooling surface) ----
struct OpAttrs {
  std::size_t axis = 0;
  std::size_t stride = 1;
  std::size_t start = 0;
  std::size_t end = 0;
  double exponent = 2.0;
  Shape shape;
  std::vector<std::size_t> perm;
};

Tensor tensor_op(const std::string& kind, const std::vector<Tensor>& inputs,
                 const OpAttrs& attrs = OpAttrs());
std::vector<std::string> tensor_op_kinds();

}  // namespace tcnet
