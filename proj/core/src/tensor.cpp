#include "tcnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace tcnet {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::shared_ptr<TensorNode> make_value_node(Shape shape, std::vector<double> values) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  return n;
}

// Result node of an op. Parents/backprop are kept only when a gradient can
// ever be requested, so inference-only graphs stay flat.
std::shared_ptr<TensorNode> make_op_node(Shape shape, std::vector<double> values,
                                         std::vector<std::shared_ptr<TensorNode>> parents,
                                         std::function<void(TensorNode&)> backprop) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->is_leaf = false;
  for (const auto& p : parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

void check_defined(const Tensor& t, const char* who) {
  if (!t.defined()) throw std::invalid_argument(std::string(who) + ": undefined tensor");
}

[[noreturn]] void shape_error(const std::string& kind, const Shape& a, const Shape& b) {
  throw std::invalid_argument("shape mismatch in " + kind + ": " + shape_str(a) + " vs " +
                              shape_str(b));
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

std::vector<double>& TensorNode::grad_buffer() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape) {
  std::size_t n = shape_numel(shape);
  return Tensor(make_value_node(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape shape, double v) {
  std::size_t n = shape_numel(shape);
  return Tensor(make_value_node(std::move(shape), std::vector<double>(n, v)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  for (auto e : shape)
    if (e == 0) throw std::invalid_argument("Tensor: zero extent in shape " + shape_str(shape));
  if (shape_numel(shape) != values.size())
    throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  return Tensor(make_value_node(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double v) { return Tensor(make_value_node({}, {v})); }

Tensor Tensor::param(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.node()->requires_grad = true;
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item: tensor has " + std::to_string(size()) + " elements");
  return node_->values[0];
}

Tensor Tensor::grad() const {
  if (node_->grad.size() == node_->values.size())
    return from(node_->shape, node_->grad);
  return zeros(node_->shape);
}

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::set_values(std::vector<double> values) {
  if (values.size() != node_->values.size())
    throw std::invalid_argument("set_values: size mismatch");
  node_->values = std::move(values);
}

Tensor Tensor::detach() const {
  return from(node_->shape, node_->values);
}

// ---------------------------------------------------------------------------
// broadcast machinery
// ---------------------------------------------------------------------------

namespace {

struct Bcast {
  Shape out;
  // per-out-dim element strides into each operand (0 on expanded dims)
  std::vector<std::size_t> sa, sb;
};

Bcast broadcast(const std::string& kind, const Shape& a, const Shape& b) {
  std::size_t r = std::max(a.size(), b.size());
  Bcast bc;
  bc.out.resize(r);
  std::vector<std::size_t> ea(r, 1), eb(r, 1);
  for (std::size_t i = 0; i < a.size(); ++i) ea[r - a.size() + i] = a[i];
  for (std::size_t i = 0; i < b.size(); ++i) eb[r - b.size() + i] = b[i];
  for (std::size_t i = 0; i < r; ++i) {
    if (ea[i] == eb[i]) bc.out[i] = ea[i];
    else if (ea[i] == 1) bc.out[i] = eb[i];
    else if (eb[i] == 1) bc.out[i] = ea[i];
    else shape_error(kind, a, b);
  }
  bc.sa.assign(r, 0);
  bc.sb.assign(r, 0);
  std::size_t stride = 1;
  for (std::size_t i = r; i-- > 0;) {
    if (ea[i] != 1) bc.sa[i] = stride;
    stride *= ea[i];
  }
  stride = 1;
  for (std::size_t i = r; i-- > 0;) {
    if (eb[i] != 1) bc.sb[i] = stride;
    stride *= eb[i];
  }
  return bc;
}

// Odometer walk over the broadcast output; fa/fb are flat operand offsets.
template <typename Fn>
void bcast_for_each(const Bcast& bc, Fn&& fn) {
  std::size_t total = shape_numel(bc.out);
  std::size_t r = bc.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t fa = 0, fb = 0;
  for (std::size_t o = 0; o < total; ++o) {
    fn(o, fa, fb);
    for (std::size_t i = r; i-- > 0;) {
      ++idx[i];
      fa += bc.sa[i];
      fb += bc.sb[i];
      if (idx[i] < bc.out[i]) break;
      fa -= bc.sa[i] * bc.out[i];
      fb -= bc.sb[i] * bc.out[i];
      idx[i] = 0;
    }
  }
}

using BinFn = double (*)(double, double);
// partials w.r.t. a and b given (a, b, out)
using BinGrad = double (*)(double, double, double);

Tensor binary_map(const std::string& kind, const Tensor& a, const Tensor& b, BinFn f,
                  BinGrad dfa, BinGrad dfb) {
  check_defined(a, kind.c_str());
  check_defined(b, kind.c_str());
  const auto& av = a.values();
  const auto& bv = b.values();
  if (a.shape() == b.shape()) {
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
    auto an = a.node();
    auto bn = b.node();
    auto bp = [an, bn, dfa, dfb](TensorNode& n) {
      const auto& g = n.grad;
      if (an->requires_grad) {
        auto& ga = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * dfa(an->values[i], bn->values[i], n.values[i]);
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
          gb[i] += g[i] * dfb(an->values[i], bn->values[i], n.values[i]);
      }
    };
    return Tensor(make_op_node(a.shape(), std::move(out), {an, bn}, bp));
  }
  Bcast bc = broadcast(kind, a.shape(), b.shape());
  std::vector<double> out(shape_numel(bc.out));
  bcast_for_each(bc, [&](std::size_t o, std::size_t fa, std::size_t fb) {
    out[o] = f(av[fa], bv[fb]);
  });
  auto an = a.node();
  auto bn = b.node();
  auto bp = [an, bn, bc, dfa, dfb](TensorNode& n) {
    const auto& g = n.grad;
    std::vector<double>* ga = an->requires_grad ? &an->grad_buffer() : nullptr;
    std::vector<double>* gb = bn->requires_grad ? &bn->grad_buffer() : nullptr;
    bcast_for_each(bc, [&](std::size_t o, std::size_t fa, std::size_t fb) {
      if (ga) (*ga)[fa] += g[o] * dfa(an->values[fa], bn->values[fb], n.values[o]);
      if (gb) (*gb)[fb] += g[o] * dfb(an->values[fa], bn->values[fb], n.values[o]);
    });
  };
  return Tensor(make_op_node(bc.out, std::move(out), {an, bn}, bp));
}

using UnFn = double (*)(double);
using UnGrad = double (*)(double, double);  // (a, out) -> d out/d a

Tensor unary_map(const char* kind, const Tensor& a, UnFn f, UnGrad df) {
  check_defined(a, kind);
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  auto an = a.node();
  auto bp = [an, df](TensorNode& n) {
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      ga[i] += n.grad[i] * df(an->values[i], n.values[i]);
  };
  return Tensor(make_op_node(a.shape(), std::move(out), {an}, bp));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_map(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_map(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_map(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  return binary_map(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Tensor neg(const Tensor& a) {
  return unary_map(
      "neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor add_scalar(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
Tensor mul_scalar(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }

Tensor tanh_op(const Tensor& a) {
  return unary_map(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double o) { return 1.0 - o * o; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_map(
      "sigmoid", a,
      [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double o) { return o * (1.0 - o); });
}

Tensor exp_op(const Tensor& a) {
  return unary_map(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double o) { return o; });
}

Tensor log_op(const Tensor& a) {
  return unary_map(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt_op(const Tensor& a) {
  return unary_map(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double o) { return 0.5 / o; });
}

Tensor abs_op(const Tensor& a) {
  return unary_map(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x >= 0 ? 1.0 : -1.0; });
}

Tensor sin_op(const Tensor& a) {
  return unary_map(
      "sin", a, [](double x) { return std::sin(x); },
      [](double x, double) { return std::cos(x); });
}

Tensor cos_op(const Tensor& a) {
  return unary_map(
      "cos", a, [](double x) { return std::cos(x); },
      [](double x, double) { return -std::sin(x); });
}

Tensor softplus(const Tensor& a) {
  return unary_map(
      "softplus", a,
      [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) {
        return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      });
}

Tensor wrap_angle(const Tensor& a) {
  return unary_map(
      "wrap_angle", a, [](double x) { return std::remainder(x, 2.0 * kPi); },
      [](double, double) { return 1.0; });
}

Tensor pow_op(const Tensor& a, double exponent) {
  check_defined(a, "power");
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::pow(av[i], exponent);
  auto an = a.node();
  auto bp = [an, exponent](TensorNode& n) {
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      ga[i] += n.grad[i] * exponent * std::pow(an->values[i], exponent - 1.0);
  };
  return Tensor(make_op_node(a.shape(), std::move(out), {an}, bp));
}

Tensor atan2_op(const Tensor& y, const Tensor& x) {
  return binary_map(
      "atan2", y, x, [](double yy, double xx) { return std::atan2(yy, xx); },
      [](double yy, double xx, double) { return xx / (xx * xx + yy * yy); },
      [](double yy, double xx, double) { return -yy / (xx * xx + yy * yy); });
}

// ---------------------------------------------------------------------------
// matmul / conv
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  if (b.rank() != 2 || a.rank() < 1) shape_error("matmul", a.shape(), b.shape());
  std::size_t k = a.shape().back();
  if (k != b.shape()[0]) shape_error("matmul", a.shape(), b.shape());
  std::size_t n = b.shape()[1];
  std::size_t rows = a.size() / k;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(rows * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t kk = 0; kk < k; ++kk) {
      double x = av[r * k + kk];
      if (x == 0.0) continue;
      const double* brow = &bv[kk * n];
      double* orow = &out[r * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  auto an = a.node();
  auto bn = b.node();
  auto bp = [an, bn, rows, k, n](TensorNode& node) {
    const auto& g = node.grad;
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      const auto& bv2 = bn->values;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t kk = 0; kk < k; ++kk) {
          double acc = 0.0;
          const double* grow = &g[r * n];
          const double* brow = &bv2[kk * n];
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[r * k + kk] += acc;
        }
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      const auto& av2 = an->values;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t kk = 0; kk < k; ++kk) {
          double x = av2[r * k + kk];
          if (x == 0.0) continue;
          const double* grow = &g[r * n];
          double* gbrow = &gb[kk * n];
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += x * grow[j];
        }
    }
  };
  return Tensor(make_op_node(std::move(out_shape), std::move(out), {an, bn}, bp));
}

Tensor conv1d(const Tensor& input, const Tensor& weight, std::size_t stride) {
  check_defined(input, "conv1d");
  check_defined(weight, "conv1d");
  if (stride < 1) throw std::invalid_argument("conv1d: stride must be >= 1");
  if (input.rank() != 3 || weight.rank() != 3) shape_error("conv1d", input.shape(), weight.shape());
  std::size_t batch = input.extent(0), cin = input.extent(1), len = input.extent(2);
  std::size_t cout = weight.extent(0), wk = weight.extent(2);
  if (weight.extent(1) != cin || wk > len) shape_error("conv1d", input.shape(), weight.shape());
  std::size_t lout = (len - wk) / stride + 1;
  std::vector<double> out(batch * cout * lout, 0.0);
  const auto& iv = input.values();
  const auto& wv = weight.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t oc = 0; oc < cout; ++oc)
      for (std::size_t j = 0; j < lout; ++j) {
        double acc = 0.0;
        for (std::size_t ic = 0; ic < cin; ++ic) {
          const double* sig = &iv[(b * cin + ic) * len + j * stride];
          const double* ker = &wv[(oc * cin + ic) * wk];
          for (std::size_t t = 0; t < wk; ++t) acc += sig[t] * ker[t];
        }
        out[(b * cout + oc) * lout + j] = acc;
      }
  auto in_n = input.node();
  auto w_n = weight.node();
  auto bp = [in_n, w_n, batch, cin, cout, len, wk, lout, stride](TensorNode& node) {
    const auto& g = node.grad;
    if (in_n->requires_grad) {
      auto& gi = in_n->grad_buffer();
      const auto& wv2 = w_n->values;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t oc = 0; oc < cout; ++oc)
          for (std::size_t j = 0; j < lout; ++j) {
            double gv = g[(b * cout + oc) * lout + j];
            if (gv == 0.0) continue;
            for (std::size_t ic = 0; ic < cin; ++ic) {
              double* sig = &gi[(b * cin + ic) * len + j * stride];
              const double* ker = &wv2[(oc * cin + ic) * wk];
              for (std::size_t t = 0; t < wk; ++t) sig[t] += gv * ker[t];
            }
          }
    }
    if (w_n->requires_grad) {
      auto& gw = w_n->grad_buffer();
      const auto& iv2 = in_n->values;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t oc = 0; oc < cout; ++oc)
          for (std::size_t j = 0; j < lout; ++j) {
            double gv = g[(b * cout + oc) * lout + j];
            if (gv == 0.0) continue;
            for (std::size_t ic = 0; ic < cin; ++ic) {
              const double* sig = &iv2[(b * cin + ic) * len + j * stride];
              double* ker = &gw[(oc * cin + ic) * wk];
              for (std::size_t t = 0; t < wk; ++t) ker[t] += gv * sig[t];
            }
          }
    }
  };
  return Tensor(make_op_node({batch, cout, lout}, std::move(out), {in_n, w_n}, bp));
}

Tensor conv1d_depthwise(const Tensor& input, const Tensor& weight, std::size_t stride) {
  check_defined(input, "conv1d_depthwise");
  check_defined(weight, "conv1d_depthwise");
  if (stride < 1) throw std::invalid_argument("conv1d_depthwise: stride must be >= 1");
  if (input.rank() != 3 || weight.rank() != 2 || input.extent(1) != weight.extent(0))
    shape_error("conv1d_depthwise", input.shape(), weight.shape());
  std::size_t batch = input.extent(0), chans = input.extent(1), len = input.extent(2);
  std::size_t wk = weight.extent(1);
  if (wk > len) shape_error("conv1d_depthwise", input.shape(), weight.shape());
  std::size_t lout = (len - wk) / stride + 1;
  std::vector<double> out(batch * chans * lout, 0.0);
  const auto& iv = input.values();
  const auto& wv = weight.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < chans; ++c)
      for (std::size_t j = 0; j < lout; ++j) {
        const double* sig = &iv[(b * chans + c) * len + j * stride];
        const double* ker = &wv[c * wk];
        double acc = 0.0;
        for (std::size_t t = 0; t < wk; ++t) acc += sig[t] * ker[t];
        out[(b * chans + c) * lout + j] = acc;
      }
  auto in_n = input.node();
  auto w_n = weight.node();
  auto bp = [in_n, w_n, batch, chans, len, wk, lout, stride](TensorNode& node) {
    const auto& g = node.grad;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < chans; ++c)
        for (std::size_t j = 0; j < lout; ++j) {
          double gv = g[(b * chans + c) * lout + j];
          if (gv == 0.0) continue;
          if (in_n->requires_grad) {
            auto& gi = in_n->grad_buffer();
            const double* ker = &w_n->values[c * wk];
            double* sig = &gi[(b * chans + c) * len + j * stride];
            for (std::size_t t = 0; t < wk; ++t) sig[t] += gv * ker[t];
          }
          if (w_n->requires_grad) {
            auto& gw = w_n->grad_buffer();
            const double* sig = &in_n->values[(b * chans + c) * len + j * stride];
            double* ker = &gw[c * wk];
            for (std::size_t t = 0; t < wk; ++t) ker[t] += gv * sig[t];
          }
        }
  };
  return Tensor(make_op_node({batch, chans, lout}, std::move(out), {in_n, w_n}, bp));
}

// ---------------------------------------------------------------------------
// structure ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  check_defined(a, "reshape");
  if (shape_numel(shape) != a.size())
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                shape_str(shape));
  auto an = a.node();
  auto bp = [an](TensorNode& n) {
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
  };
  return Tensor(make_op_node(std::move(shape), a.values(), {an}, bp));
}

Tensor transpose(const Tensor& a, const std::vector<std::size_t>& perm) {
  check_defined(a, "transpose");
  if (perm.size() != a.rank()) throw std::invalid_argument("transpose: bad permutation");
  std::size_t r = a.rank();
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.shape()[perm[i]];
  // strides of input
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * a.shape()[i + 1];
  std::vector<std::size_t> walk(r);
  for (std::size_t i = 0; i < r; ++i) walk[i] = in_stride[perm[i]];
  std::size_t total = a.size();
  std::vector<double> out(total);
  std::vector<std::size_t> src_of(total);
  std::vector<std::size_t> idx(r, 0);
  std::size_t f = 0;
  const auto& av = a.values();
  for (std::size_t o = 0; o < total; ++o) {
    out[o] = av[f];
    src_of[o] = f;
    for (std::size_t i = r; i-- > 0;) {
      ++idx[i];
      f += walk[i];
      if (idx[i] < out_shape[i]) break;
      f -= walk[i] * out_shape[i];
      idx[i] = 0;
    }
  }
  auto an = a.node();
  auto bp = [an, src_of](TensorNode& n) {
    auto& ga = an->grad_buffer();
    for (std::size_t o = 0; o < n.grad.size(); ++o) ga[src_of[o]] += n.grad[o];
  };
  return Tensor(make_op_node(std::move(out_shape), std::move(out), {an}, bp));
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t end) {
  check_defined(a, "slice");
  if (axis >= a.rank() || start >= end || end > a.extent(axis))
    throw std::invalid_argument("slice: invalid range [" + std::to_string(start) + "," +
                                std::to_string(end) + ") on axis " + std::to_string(axis) +
                                " of " + shape_str(a.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
  std::size_t ext = a.extent(axis), next = end - start;
  Shape out_shape = a.shape();
  out_shape[axis] = next;
  std::vector<double> out(outer * next * inner);
  const auto& av = a.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < next; ++j)
      std::copy_n(&av[(o * ext + start + j) * inner], inner, &out[(o * next + j) * inner]);
  auto an = a.node();
  auto bp = [an, outer, inner, ext, next, start](TensorNode& n) {
    auto& ga = an->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < next; ++j) {
        const double* g = &n.grad[(o * next + j) * inner];
        double* dst = &ga[(o * ext + start + j) * inner];
        for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
      }
  };
  return Tensor(make_op_node(std::move(out_shape), std::move(out), {an}, bp));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  for (const auto& p : parts) check_defined(p, "concat");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw std::invalid_argument("concat: bad axis");
  std::size_t cat_ext = 0;
  for (const auto& p : parts) {
    if (p.rank() != s0.size()) shape_error("concat", s0, p.shape());
    for (std::size_t i = 0; i < s0.size(); ++i)
      if (i != axis && p.shape()[i] != s0[i]) shape_error("concat", s0, p.shape());
    cat_ext += p.extent(axis);
  }
  Shape out_shape = s0;
  out_shape[axis] = cat_ext;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<double> out(shape_numel(out_shape));
  std::size_t off = 0;
  std::vector<std::size_t> exts;
  std::vector<std::shared_ptr<TensorNode>> nodes;
  for (const auto& p : parts) {
    std::size_t e = p.extent(axis);
    const auto& pv = p.values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(&pv[o * e * inner], e * inner, &out[(o * cat_ext + off) * inner]);
    off += e;
    exts.push_back(e);
    nodes.push_back(p.node());
  }
  auto bp = [nodes, exts, outer, inner, cat_ext](TensorNode& n) {
    std::size_t off2 = 0;
    for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
      std::size_t e = exts[pi];
      if (nodes[pi]->requires_grad) {
        auto& gp = nodes[pi]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          const double* g = &n.grad[(o * cat_ext + off2) * inner];
          double* dst = &gp[o * e * inner];
          for (std::size_t i = 0; i < e * inner; ++i) dst[i] += g[i];
        }
      }
      off2 += e;
    }
  };
  return Tensor(make_op_node(std::move(out_shape), std::move(out), std::move(nodes), bp));
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  check_defined(a, "sum");
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  auto an = a.node();
  auto bp = [an](TensorNode& n) {
    auto& ga = an->grad_buffer();
    double g = n.grad[0];
    for (auto& v : ga) v += g;
  };
  return Tensor(make_op_node({}, {acc}, {an}, bp));
}

Tensor mean_all(const Tensor& a) {
  check_defined(a, "mean");
  double inv = 1.0 / static_cast<double>(a.size());
  return mul_scalar(sum_all(a), inv);
}

namespace {

struct AxisSplit {
  std::size_t outer = 1, ext = 1, inner = 1;
  Shape out_shape;
};

AxisSplit split_axis(const char* kind, const Tensor& a, std::size_t axis, bool keepdim) {
  if (axis >= a.rank()) throw std::invalid_argument(std::string(kind) + ": bad axis");
  AxisSplit sp;
  for (std::size_t i = 0; i < axis; ++i) sp.outer *= a.shape()[i];
  sp.ext = a.shape()[axis];
  for (std::size_t i = axis + 1; i < a.rank(); ++i) sp.inner *= a.shape()[i];
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i == axis) {
      if (keepdim) sp.out_shape.push_back(1);
    } else {
      sp.out_shape.push_back(a.shape()[i]);
    }
  }
  return sp;
}

}  // namespace

Tensor sum_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  check_defined(a, "sum");
  AxisSplit sp = split_axis("sum", a, axis, keepdim);
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const auto& av = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.ext; ++j) {
      const double* src = &av[(o * sp.ext + j) * sp.inner];
      double* dst = &out[o * sp.inner];
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  auto an = a.node();
  auto bp = [an, sp](TensorNode& n) {
    auto& ga = an->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < sp.ext; ++j) {
        double* dst = &ga[(o * sp.ext + j) * sp.inner];
        const double* g = &n.grad[o * sp.inner];
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += g[i];
      }
  };
  return Tensor(make_op_node(sp.out_shape, std::move(out), {an}, bp));
}

Tensor mean_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  check_defined(a, "mean");
  double inv = 1.0 / static_cast<double>(a.extent(axis));
  return mul_scalar(sum_axis(a, axis, keepdim), inv);
}

Tensor max_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  check_defined(a, "max");
  AxisSplit sp = split_axis("max", a, axis, keepdim);
  std::vector<double> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(sp.outer * sp.inner);
  const auto& av = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double best = av[o * sp.ext * sp.inner + i];
      std::size_t bj = 0;
      for (std::size_t j = 1; j < sp.ext; ++j) {
        double v = av[(o * sp.ext + j) * sp.inner + i];
        if (v > best) {
          best = v;
          bj = j;
        }
      }
      out[o * sp.inner + i] = best;
      arg[o * sp.inner + i] = bj;
    }
  auto an = a.node();
  auto bp = [an, sp, arg](TensorNode& n) {
    auto& ga = an->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        std::size_t j = arg[o * sp.inner + i];
        ga[(o * sp.ext + j) * sp.inner + i] += n.grad[o * sp.inner + i];
      }
  };
  return Tensor(make_op_node(sp.out_shape, std::move(out), {an}, bp));
}

Tensor logsumexp_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  check_defined(a, "logsumexp");
  AxisSplit sp = split_axis("logsumexp", a, axis, keepdim);
  std::vector<double> out(sp.outer * sp.inner);
  const auto& av = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double m = av[o * sp.ext * sp.inner + i];
      for (std::size_t j = 1; j < sp.ext; ++j)
        m = std::max(m, av[(o * sp.ext + j) * sp.inner + i]);
      double acc = 0.0;
      for (std::size_t j = 0; j < sp.ext; ++j)
        acc += std::exp(av[(o * sp.ext + j) * sp.inner + i] - m);
      out[o * sp.inner + i] = m + std::log(acc);
    }
  auto an = a.node();
  auto out_copy = out;
  auto bp = [an, sp, out_copy](TensorNode& n) {
    auto& ga = an->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        double lse = out_copy[o * sp.inner + i];
        double g = n.grad[o * sp.inner + i];
        for (std::size_t j = 0; j < sp.ext; ++j) {
          std::size_t f = (o * sp.ext + j) * sp.inner + i;
          ga[f] += g * std::exp(an->values[f] - lse);
        }
      }
  };
  return Tensor(make_op_node(sp.out_shape, std::move(out), {an}, bp));
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  check_defined(a, "softmax");
  AxisSplit sp = split_axis("softmax", a, axis, true);
  std::vector<double> out(a.size());
  const auto& av = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double m = av[o * sp.ext * sp.inner + i];
      for (std::size_t j = 1; j < sp.ext; ++j)
        m = std::max(m, av[(o * sp.ext + j) * sp.inner + i]);
      double z = 0.0;
      for (std::size_t j = 0; j < sp.ext; ++j)
        z += std::exp(av[(o * sp.ext + j) * sp.inner + i] - m);
      for (std::size_t j = 0; j < sp.ext; ++j) {
        std::size_t f = (o * sp.ext + j) * sp.inner + i;
        out[f] = std::exp(av[f] - m) / z;
      }
    }
  auto an = a.node();
  auto bp = [an, sp](TensorNode& n) {
    auto& ga = an->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < sp.ext; ++j) {
          std::size_t f = (o * sp.ext + j) * sp.inner + i;
          dot += n.grad[f] * n.values[f];
        }
        for (std::size_t j = 0; j < sp.ext; ++j) {
          std::size_t f = (o * sp.ext + j) * sp.inner + i;
          ga[f] += n.values[f] * (n.grad[f] - dot);
        }
      }
  };
  return Tensor(make_op_node(a.shape(), std::move(out), {an}, bp));
}

// ---------------------------------------------------------------------------
// DFT
// ---------------------------------------------------------------------------

namespace {

// Columns are frequency bins: basis[t*bins + k] = cos/-sin(2*pi*k*t/n).
std::pair<Tensor, Tensor> dft_basis(std::size_t n, std::size_t bins) {
  std::vector<double> c(n * bins), s(n * bins);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t k = 0; k < bins; ++k) {
      double ang = 2.0 * kPi * static_cast<double>(k) * static_cast<double>(t) /
                   static_cast<double>(n);
      c[t * bins + k] = std::cos(ang);
      s[t * bins + k] = -std::sin(ang);
    }
  return {Tensor::from({n, bins}, std::move(c)), Tensor::from({n, bins}, std::move(s))};
}

Tensor apply_window(const Tensor& signal, const Tensor& window) {
  if (!window.defined()) return signal;
  if (window.shape() != signal.shape())
    shape_error("dft window", signal.shape(), window.shape());
  return mul(signal, window);
}

}  // namespace

std::pair<Tensor, Tensor> dft_real_imag(const Tensor& signal, const Tensor& window) {
  check_defined(signal, "dft");
  if (signal.rank() != 1 || signal.size() < 2)
    throw std::invalid_argument("dft: need a 1-d signal of length >= 2, got " +
                                shape_str(signal.shape()));
  std::size_t n = signal.size();
  Tensor w = apply_window(signal, window);
  auto [cb, sb] = dft_basis(n, n);
  Tensor row = reshape(w, {1, n});
  Tensor re = reshape(matmul(row, cb), {n});
  Tensor im = reshape(matmul(row, sb), {n});
  return {re, im};
}

Tensor dft_magnitude(const Tensor& signal, const Tensor& window) {
  check_defined(signal, "dft_magnitude");
  if (signal.rank() != 1 || signal.size() < 2)
    throw std::invalid_argument("dft_magnitude: need a 1-d signal of length >= 2, got " +
                                shape_str(signal.shape()));
  std::size_t n = signal.size();
  std::size_t bins = n / 2 + 1;
  Tensor w = apply_window(signal, window);
  auto [cb, sb] = dft_basis(n, bins);
  Tensor row = reshape(w, {1, n});
  Tensor re = matmul(row, cb);
  Tensor im = matmul(row, sb);
  Tensor power = add(mul(re, re), mul(im, im));
  return reshape(sqrt_op(power), {bins});
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
  check_defined(loss, "backward");
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  auto root = loss.node();
  if (!root->requires_grad)
    throw std::invalid_argument("backward: loss does not depend on any requires_grad leaf");
  if (root->backward_done)
    throw std::runtime_error("backward: second backward pass without a new forward");
  root->backward_done = true;

  // iterative DFS topo sort over the requires_grad subgraph
  std::vector<TensorNode*> topo;
  std::unordered_set<TensorNode*> seen;
  struct Frame {
    TensorNode* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop && n->grad.size() == n->values.size()) n->backprop(*n);
    if (!n->is_leaf) n->grad.clear();  // grads retained on leaves only
  }
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step) {
  check_defined(x, "grad_check");
  if (step <= 0) throw std::invalid_argument("grad_check: step must be > 0");
  Tensor probe = Tensor::param(x.shape(), x.values());
  Tensor y = f(probe);
  if (y.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  if (!std::isfinite(y.item()))
    throw std::invalid_argument("grad_check: f(x) is not finite");
  backward(y);
  std::vector<double> analytic = probe.grad().values();

  std::vector<double> vals = x.values();
  double worst = 0.0;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    double keep = vals[i];
    vals[i] = keep + step;
    double fp = f(Tensor::from(x.shape(), vals)).item();
    vals[i] = keep - step;
    double fm = f(Tensor::from(x.shape(), vals)).item();
    vals[i] = keep;
    double numeric = (fp - fm) / (2.0 * step);
    double err = std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// string-kind dispatch
// ---------------------------------------------------------------------------

namespace {

using OpFn = Tensor (*)(const std::vector<Tensor>&, const OpAttrs&);

const Tensor& arg(const std::vector<Tensor>& in, std::size_t i, const char* kind) {
  if (i >= in.size())
    throw std::invalid_argument(std::string(kind) + ": expects at least " + std::to_string(i + 1) +
                                " inputs");
  return in[i];
}

const std::map<std::string, OpFn>& op_table() {
  static const std::map<std::string, OpFn> table = {
      {"add", [](const std::vector<Tensor>& in, const OpAttrs&) { return add(arg(in, 0, "add"), arg(in, 1, "add")); }},
      {"sub", [](const std::vector<Tensor>& in, const OpAttrs&) { return sub(arg(in, 0, "sub"), arg(in, 1, "sub")); }},
      {"mul", [](const std::vector<Tensor>& in, const OpAttrs&) { return mul(arg(in, 0, "mul"), arg(in, 1, "mul")); }},
      {"div", [](const std::vector<Tensor>& in, const OpAttrs&) { return divide(arg(in, 0, "div"), arg(in, 1, "div")); }},
      {"neg", [](const std::vector<Tensor>& in, const OpAttrs&) { return neg(arg(in, 0, "neg")); }},
      {"tanh", [](const std::vector<Tensor>& in, const OpAttrs&) { return tanh_op(arg(in, 0, "tanh")); }},
      {"sigmoid", [](const std::vector<Tensor>& in, const OpAttrs&) { return sigmoid(arg(in, 0, "sigmoid")); }},
      {"exp", [](const std::vector<Tensor>& in, const OpAttrs&) { return exp_op(arg(in, 0, "exp")); }},
      {"log", [](const std::vector<Tensor>& in, const OpAttrs&) { return log_op(arg(in, 0, "log")); }},
      {"sqrt", [](const std::vector<Tensor>& in, const OpAttrs&) { return sqrt_op(arg(in, 0, "sqrt")); }},
      {"abs", [](const std::vector<Tensor>& in, const OpAttrs&) { return abs_op(arg(in, 0, "abs")); }},
      {"sin", [](const std::vector<Tensor>& in, const OpAttrs&) { return sin_op(arg(in, 0, "sin")); }},
      {"cos", [](const std::vector<Tensor>& in, const OpAttrs&) { return cos_op(arg(in, 0, "cos")); }},
      {"wrap_angle", [](const std::vector<Tensor>& in, const OpAttrs&) { return wrap_angle(arg(in, 0, "wrap_angle")); }},
      {"softplus", [](const std::vector<Tensor>& in, const OpAttrs&) { return softplus(arg(in, 0, "softplus")); }},
      {"power", [](const std::vector<Tensor>& in, const OpAttrs& at) { return pow_op(arg(in, 0, "power"), at.exponent); }},
      {"atan2", [](const std::vector<Tensor>& in, const OpAttrs&) { return atan2_op(arg(in, 0, "atan2"), arg(in, 1, "atan2")); }},
      {"matmul", [](const std::vector<Tensor>& in, const OpAttrs&) { return matmul(arg(in, 0, "matmul"), arg(in, 1, "matmul")); }},
      {"conv1d", [](const std::vector<Tensor>& in, const OpAttrs& at) { return conv1d(arg(in, 0, "conv1d"), arg(in, 1, "conv1d"), at.stride); }},
      {"conv1d_depthwise", [](const std::vector<Tensor>& in, const OpAttrs& at) { return conv1d_depthwise(arg(in, 0, "conv1d_depthwise"), arg(in, 1, "conv1d_depthwise"), at.stride); }},
      {"reshape", [](const std::vector<Tensor>& in, const OpAttrs& at) { return reshape(arg(in, 0, "reshape"), at.shape); }},
      {"transpose", [](const std::vector<Tensor>& in, const OpAttrs& at) { return transpose(arg(in, 0, "transpose"), at.perm); }},
      {"slice", [](const std::vector<Tensor>& in, const OpAttrs& at) { return slice(arg(in, 0, "slice"), at.axis, at.start, at.end); }},
      {"concat", [](const std::vector<Tensor>& in, const OpAttrs& at) { return concat(in, at.axis); }},
      {"sum", [](const std::vector<Tensor>& in, const OpAttrs&) { return sum_all(arg(in, 0, "sum")); }},
      {"mean", [](const std::vector<Tensor>& in, const OpAttrs&) { return mean_all(arg(in, 0, "mean")); }},
      {"sum_axis", [](const std::vector<Tensor>& in, const OpAttrs& at) { return sum_axis(arg(in, 0, "sum_axis"), at.axis); }},
      {"mean_axis", [](const std::vector<Tensor>& in, const OpAttrs& at) { return mean_axis(arg(in, 0, "mean_axis"), at.axis); }},
      {"max_axis", [](const std::vector<Tensor>& in, const OpAttrs& at) { return max_axis(arg(in, 0, "max_axis"), at.axis); }},
      {"logsumexp", [](const std::vector<Tensor>& in, const OpAttrs& at) { return logsumexp_axis(arg(in, 0, "logsumexp"), at.axis); }},
      {"softmax", [](const std::vector<Tensor>& in, const OpAttrs& at) { return softmax(arg(in, 0, "softmax"), at.axis); }},
      {"dft_magnitude", [](const std::vector<Tensor>& in, const OpAttrs&) {
         return dft_magnitude(arg(in, 0, "dft_magnitude"), in.size() > 1 ? in[1] : Tensor());
       }},
  };
  return table;
}

}  // namespace

Tensor tensor_op(const std::string& kind, const std::vector<Tensor>& inputs, const OpAttrs& attrs) {
  const auto& table = op_table();
  auto it = table.find(kind);
  if (it == table.end()) throw std::invalid_argument("tensor_op: unknown kind '" + kind + "'");
  return it->second(inputs, attrs);
}

std::vector<std::string> tensor_op_kinds() {
  std::vector<std::string> kinds;
  for (const auto& [k, _] : op_table()) kinds.push_back(k);
  return kinds;
}

}  // namespace tcnet
