#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "secp/common.hpp"

namespace secp {

// Dense row-major shape. Activations are NCHW.
using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline void check_shape_valid(const Shape& s) {
  for (int d : s) {
    if (d < 1) throw ConfigError("invalid shape " + shape_str(s) + ": extents must be >= 1");
  }
}

/// Integer label mask, row-major. [H,W] for samples, [N,H,W] as loss target.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> v;

  Mask() = default;
  Mask(Shape s, std::uint8_t fill = 0) : shape(std::move(s)), v(shape_numel(shape), fill) {
    check_shape_valid(shape);
  }
  std::size_t size() const { return v.size(); }
  std::uint8_t& at(int i, int j) { return v[static_cast<std::size_t>(i) * shape[1] + j]; }
  std::uint8_t at(int i, int j) const { return v[static_cast<std::size_t>(i) * shape[1] + j]; }
  bool operator==(const Mask& o) const { return shape == o.shape && v == o.v; }
};

namespace detail {

template <typename S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated iff requires_grad, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;  // scatters this->grad into parents

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
  }
};

}  // namespace detail

// Reverse-mode tensor. A Tensor is a shared handle to a graph node; ops are
// free functions that compute values eagerly and record a backprop closure.
// One backward() pass per graph: intermediate nodes are not re-zeroed.
template <typename S>
class Tensor {
  static_assert(std::is_floating_point_v<S>, "Tensor scalar must be float or double");

 public:
  using Node = detail::TensorNode<S>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static Tensor filled(Shape shape, S fill, bool requires_grad = false) {
    check_shape_valid(shape);
    auto n = std::make_shared<Node>();
    n->value.assign(shape_numel(shape), fill);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return Tensor(std::move(n));
  }

  static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
    check_shape_valid(shape);
    if (shape_numel(shape) != data.size()) {
      throw ConfigError("data length " + std::to_string(data.size()) + " does not match shape " +
                        shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return Tensor(std::move(n));
  }

  /// Uniform values in [lo, hi), drawn from a deterministic stream.
  static Tensor uniform(Shape shape, Rng& rng, S lo, S hi, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (S& x : t.node_->value) x = static_cast<S>(rng.uniform(lo, hi));
    return t;
  }

  /// Internal op constructor: requires_grad is inherited from parents; when
  /// no parent needs gradients the graph edge is dropped entirely.
  static Tensor make_op(Shape shape, std::vector<S> value, std::vector<Tensor> parents,
                        std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool needs = false;
    for (const Tensor& p : parents) needs = needs || p.requires_grad();
    n->requires_grad = needs;
    if (needs) {
      n->parents.reserve(parents.size());
      for (Tensor& p : parents) n->parents.push_back(std::move(p.node_));
      n->backprop = std::move(backprop);
    }
    return Tensor(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const S> data() const { return node_->value; }
  /// Mutable value access; meant for leaves (parameters, inputs) only.
  std::span<S> data() { return node_->value; }

  std::span<const S> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on)
      node_->ensure_grad();
    else
      node_->grad.clear();
  }

  S item() const {
    if (size() != 1) throw UsageError("item() requires a 1-element tensor, got " + shape_str(shape()));
    return node_->value[0];
  }

  template <typename... I>
  S& at(I... idx) {
    return node_->value[flat_index(idx...)];
  }
  template <typename... I>
  S at(I... idx) const {
    return node_->value[flat_index(idx...)];
  }
  template <typename... I>
  S grad_at(I... idx) const {
    if (node_->grad.empty()) throw UsageError("grad_at() on tensor without gradient");
    return node_->grad[flat_index(idx...)];
  }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  /// Reverse-mode pass from a scalar. Gradients accumulate into every
  /// requires_grad node reachable through the graph.
  void backward() {
    if (!node_) throw UsageError("backward() on undefined tensor");
    if (node_->value.size() != 1) {
      throw UsageError("backward() requires a scalar output, got " + shape_str(shape()));
    }
    if (!node_->requires_grad) return;  // nothing upstream wants gradients

    // reverse post-order DFS = topological order, consumers before producers
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    struct Frame {
      Node* n;
      std::size_t next;
    };
    std::vector<Frame> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.n->parents.size()) {
        Node* p = f.n->parents[f.next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(f.n);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backprop) (*it)->backprop(**it);
    }
  }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  template <typename... I>
  std::size_t flat_index(I... idx) const {
    const int is[] = {static_cast<int>(idx)...};
    const std::size_t nd = sizeof...(idx);
    if (nd != node_->shape.size()) throw UsageError("index rank mismatch for " + shape_str(shape()));
    std::size_t flat = 0;
    for (std::size_t d = 0; d < nd; ++d) {
      if (is[d] < 0 || is[d] >= node_->shape[d]) throw UsageError("index out of range");
      flat = flat * static_cast<std::size_t>(node_->shape[d]) + static_cast<std::size_t>(is[d]);
    }
    return flat;
  }

  std::shared_ptr<Node> node_;
};

template <typename S>
bool all_finite(const Tensor<S>& t) {
  for (S x : t.data())
    if (!std::isfinite(x)) return false;
  return true;
}

template <typename S>
bool same_values(const Tensor<S>& a, const Tensor<S>& b) {
  return a.shape() == b.shape() &&
         std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

namespace detail {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatCM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Patch matrix is (Cin*k*k) x (Ho*Wo), column-major so GEMM against the
// row-major weight map stays a plain product.
template <typename S>
void im2col(const S* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            MatCM<S>& cols) {
  cols.resize(C * k * k, Ho * Wo);
  for (int c = 0; c < C * k * k; ++c) {
    const int ic = c / (k * k);
    const int kh = c % (k * k) / k;
    const int kw = c % k;
    const S* plane = x + static_cast<std::size_t>(ic) * H * W;
    for (int oh = 0; oh < Ho; ++oh) {
      const int ih = oh * stride + kh - pad;
      const bool row_ok = ih >= 0 && ih < H;
      for (int ow = 0; ow < Wo; ++ow) {
        const int iw = ow * stride + kw - pad;
        cols(c, oh * Wo + ow) = (row_ok && iw >= 0 && iw < W) ? plane[ih * W + iw] : S(0);
      }
    }
  }
}

template <typename S>
void col2im_add(const MatCM<S>& cols, int C, int H, int W, int k, int stride, int pad, int Ho,
                int Wo, S* dx) {
  for (int c = 0; c < C * k * k; ++c) {
    const int ic = c / (k * k);
    const int kh = c % (k * k) / k;
    const int kw = c % k;
    S* plane = dx + static_cast<std::size_t>(ic) * H * W;
    for (int oh = 0; oh < Ho; ++oh) {
      const int ih = oh * stride + kh - pad;
      if (ih < 0 || ih >= H) continue;
      for (int ow = 0; ow < Wo; ++ow) {
        const int iw = ow * stride + kw - pad;
        if (iw >= 0 && iw < W) plane[ih * W + iw] += cols(c, oh * Wo + ow);
      }
    }
  }
}

// Source taps and weights for one axis of an align-corners=false bilinear
// resize from length `in` to length `out`.
struct BilinearAxis {
  std::vector<int> lo, hi;
  std::vector<double> w_lo, w_hi;
};

inline BilinearAxis bilinear_axis(int in, int out) {
  BilinearAxis a;
  a.lo.resize(out);
  a.hi.resize(out);
  a.w_lo.resize(out);
  a.w_hi.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double src = (o + 0.5) * scale - 0.5;
    double lo = std::floor(src);
    const double t = src - lo;
    int i0 = static_cast<int>(lo);
    int i1 = i0 + 1;
    i0 = std::clamp(i0, 0, in - 1);
    i1 = std::clamp(i1, 0, in - 1);
    a.lo[o] = i0;
    a.hi[o] = i1;
    a.w_lo[o] = 1.0 - t;
    a.w_hi[o] = t;
  }
  return a;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  std::vector<S> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > S(0) ? x.data()[i] : S(0);
  return Tensor<S>::make_op(x.shape(), std::move(out), {x},
                            [](typename Tensor<S>::Node& self) {
                              auto& p = *self.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              for (std::size_t i = 0; i < p.value.size(); ++i)
                                if (p.value[i] > S(0)) p.grad[i] += self.grad[i];
                            });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  std::vector<S> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = S(1) / (S(1) + std::exp(-x.data()[i]));
  return Tensor<S>::make_op(x.shape(), std::move(out), {x},
                            [](typename Tensor<S>::Node& self) {
                              auto& p = *self.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              for (std::size_t i = 0; i < p.value.size(); ++i) {
                                const S s = self.value[i];
                                p.grad[i] += self.grad[i] * s * (S(1) - s);
                              }
                            });
}

template <typename S>
Tensor<S> square(const Tensor<S>& x) {
  std::vector<S> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * x.data()[i];
  return Tensor<S>::make_op(x.shape(), std::move(out), {x},
                            [](typename Tensor<S>::Node& self) {
                              auto& p = *self.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              for (std::size_t i = 0; i < p.value.size(); ++i)
                                p.grad[i] += self.grad[i] * S(2) * p.value[i];
                            });
}

/// Sum of all elements, as a [1] tensor.
template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S acc = 0;
  for (S v : x.data()) acc += v;
  return Tensor<S>::make_op({1}, {acc}, {x},
                            [](typename Tensor<S>::Node& self) {
                              auto& p = *self.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              const S g = self.grad[0];
                              for (S& d : p.grad) d += g;
                            });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
  std::vector<S> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  return Tensor<S>::make_op(x.shape(), std::move(out), {x},
                            [factor](typename Tensor<S>::Node& self) {
                              auto& p = *self.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              for (std::size_t i = 0; i < p.value.size(); ++i)
                                p.grad[i] += self.grad[i] * factor;
                            });
}

// ---------------------------------------------------------------------------
// Convolution and friends
// ---------------------------------------------------------------------------

/// 2-D cross-correlation (no kernel flip). input [N,Cin,H,W], weight
/// [Cout,Cin,k,k] with k odd, bias [Cout]. Output extents must divide
/// exactly: H' = (H + 2*pad - k)/stride + 1.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                 int stride = 1, int padding = 0) {
  if (input.ndim() != 4 || weight.ndim() != 4 || bias.ndim() != 1) {
    throw ConfigError("conv2d expects input[N,C,H,W], weight[Cout,Cin,k,k], bias[Cout]; got " +
                      shape_str(input.shape()) + ", " + shape_str(weight.shape()) + ", " +
                      shape_str(bias.shape()));
  }
  const int N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int Cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != Cin) {
    throw ConfigError("conv2d channel mismatch: input " + shape_str(input.shape()) + " vs weight " +
                      shape_str(weight.shape()));
  }
  if (weight.dim(3) != k || k % 2 == 0) {
    throw ConfigError("conv2d kernel must be square with odd extent, got " +
                      shape_str(weight.shape()));
  }
  if (bias.dim(0) != Cout) {
    throw ConfigError("conv2d bias length " + std::to_string(bias.dim(0)) + " != Cout " +
                      std::to_string(Cout));
  }
  if (stride < 1 || padding < 0) throw ConfigError("conv2d: stride must be >= 1, padding >= 0");
  const int hspan = H + 2 * padding - k;
  const int wspan = W + 2 * padding - k;
  if (hspan < 0 || wspan < 0 || hspan % stride != 0 || wspan % stride != 0) {
    throw ConfigError("conv2d: output extent not integer for input " + shape_str(input.shape()) +
                      ", k=" + std::to_string(k) + ", stride=" + std::to_string(stride) +
                      ", pad=" + std::to_string(padding));
  }
  const int Ho = hspan / stride + 1;
  const int Wo = wspan / stride + 1;
  const int P = Ho * Wo;
  const int Kp = Cin * k * k;

  std::vector<S> out(static_cast<std::size_t>(N) * Cout * P);
  Eigen::Map<const detail::MatRM<S>> wmat(weight.data().data(), Cout, Kp);
  Eigen::Map<const detail::VecX<S>> bvec(bias.data().data(), Cout);
  detail::MatCM<S> cols;
  for (int n = 0; n < N; ++n) {
    detail::im2col(input.data().data() + static_cast<std::size_t>(n) * Cin * H * W, Cin, H, W, k,
                   stride, padding, Ho, Wo, cols);
    Eigen::Map<detail::MatRM<S>> omat(out.data() + static_cast<std::size_t>(n) * Cout * P, Cout, P);
    omat.noalias() = wmat * cols;
    omat.colwise() += bvec;
  }

  auto backprop = [N, Cin, H, W, Cout, k, stride, padding, Ho, Wo, P,
                   Kp](typename Tensor<S>::Node& self) {
    auto& in = *self.parents[0];
    auto& wn = *self.parents[1];
    auto& bn = *self.parents[2];
    Eigen::Map<const detail::MatRM<S>> wmat(wn.value.data(), Cout, Kp);
    detail::MatCM<S> cols, dcols;
    for (int n = 0; n < N; ++n) {
      Eigen::Map<const detail::MatRM<S>> g(self.grad.data() + static_cast<std::size_t>(n) * Cout * P,
                                           Cout, P);
      if (wn.requires_grad) {
        wn.ensure_grad();
        detail::im2col(in.value.data() + static_cast<std::size_t>(n) * Cin * H * W, Cin, H, W, k,
                       stride, padding, Ho, Wo, cols);
        Eigen::Map<detail::MatRM<S>> dw(wn.grad.data(), Cout, Kp);
        dw.noalias() += g * cols.transpose();
      }
      if (bn.requires_grad) {
        bn.ensure_grad();
        Eigen::Map<detail::VecX<S>> db(bn.grad.data(), Cout);
        db.noalias() += g.rowwise().sum();
      }
      if (in.requires_grad) {
        in.ensure_grad();
        dcols.noalias() = wmat.transpose() * g;
        detail::col2im_add(dcols, Cin, H, W, k, stride, padding, Ho, Wo,
                           in.grad.data() + static_cast<std::size_t>(n) * Cin * H * W);
      }
    }
  };
  return Tensor<S>::make_op({N, Cout, Ho, Wo}, std::move(out), {input, weight, bias},
                            std::move(backprop));
}

/// 2x2 max pooling with stride 2. Ties route the gradient to the first
/// maximal element in row-major window order.
template <typename S>
Tensor<S> max_pool2x2(const Tensor<S>& input) {
  if (input.ndim() != 4) throw ConfigError("max_pool2x2 expects [N,C,H,W], got " + shape_str(input.shape()));
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    throw ConfigError("max_pool2x2 requires even extents, got " + shape_str(input.shape()));
  }
  const int Ho = H / 2, Wo = W / 2;
  std::vector<S> out(static_cast<std::size_t>(N) * C * Ho * Wo);
  std::vector<std::int32_t> argmax(out.size());
  const S* x = input.data().data();
  std::size_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const S* plane = x + static_cast<std::size_t>(nc) * H * W;
    for (int oh = 0; oh < Ho; ++oh) {
      for (int ow = 0; ow < Wo; ++ow, ++o) {
        const int base = 2 * oh * W + 2 * ow;
        int best = base;
        S bv = plane[base];
        for (int d : {base + 1, base + W, base + W + 1}) {
          if (plane[d] > bv) {
            bv = plane[d];
            best = d;
          }
        }
        out[o] = bv;
        argmax[o] = static_cast<std::int32_t>(nc) * H * W + best;
      }
    }
  }
  return Tensor<S>::make_op(
      {N, C, Ho, Wo}, std::move(out), {input},
      [argmax = std::move(argmax)](typename Tensor<S>::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < argmax.size(); ++i) p.grad[argmax[i]] += self.grad[i];
      });
}

/// Bilinear 2x upsampling, align-corners=false. Separable: rows then columns.
template <typename S>
Tensor<S> upsample_bilinear2x(const Tensor<S>& input) {
  if (input.ndim() != 4) {
    throw ConfigError("upsample_bilinear2x expects [N,C,H,W], got " + shape_str(input.shape()));
  }
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int Ho = 2 * H, Wo = 2 * W;
  const auto ax_h = detail::bilinear_axis(H, Ho);
  const auto ax_w = detail::bilinear_axis(W, Wo);

  std::vector<S> out(static_cast<std::size_t>(N) * C * Ho * Wo);
  std::vector<S> tmp(static_cast<std::size_t>(H) * Wo);
  const S* x = input.data().data();
  for (int nc = 0; nc < N * C; ++nc) {
    const S* plane = x + static_cast<std::size_t>(nc) * H * W;
    for (int h = 0; h < H; ++h)
      for (int ow = 0; ow < Wo; ++ow)
        tmp[h * Wo + ow] = static_cast<S>(ax_w.w_lo[ow]) * plane[h * W + ax_w.lo[ow]] +
                           static_cast<S>(ax_w.w_hi[ow]) * plane[h * W + ax_w.hi[ow]];
    S* oplane = out.data() + static_cast<std::size_t>(nc) * Ho * Wo;
    for (int oh = 0; oh < Ho; ++oh)
      for (int ow = 0; ow < Wo; ++ow)
        oplane[oh * Wo + ow] = static_cast<S>(ax_h.w_lo[oh]) * tmp[ax_h.lo[oh] * Wo + ow] +
                               static_cast<S>(ax_h.w_hi[oh]) * tmp[ax_h.hi[oh] * Wo + ow];
  }

  auto backprop = [N, C, H, W, Ho, Wo, ax_h, ax_w](typename Tensor<S>::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    std::vector<S> dtmp(static_cast<std::size_t>(H) * Wo);
    for (int nc = 0; nc < N * C; ++nc) {
      std::fill(dtmp.begin(), dtmp.end(), S(0));
      const S* g = self.grad.data() + static_cast<std::size_t>(nc) * Ho * Wo;
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          const S gv = g[oh * Wo + ow];
          dtmp[ax_h.lo[oh] * Wo + ow] += static_cast<S>(ax_h.w_lo[oh]) * gv;
          dtmp[ax_h.hi[oh] * Wo + ow] += static_cast<S>(ax_h.w_hi[oh]) * gv;
        }
      S* dplane = p.grad.data() + static_cast<std::size_t>(nc) * H * W;
      for (int h = 0; h < H; ++h)
        for (int ow = 0; ow < Wo; ++ow) {
          const S dv = dtmp[h * Wo + ow];
          dplane[h * W + ax_w.lo[ow]] += static_cast<S>(ax_w.w_lo[ow]) * dv;
          dplane[h * W + ax_w.hi[ow]] += static_cast<S>(ax_w.w_hi[ow]) * dv;
        }
    }
  };
  return Tensor<S>::make_op({N, C, Ho, Wo}, std::move(out), {input}, std::move(backprop));
}

/// Mean over the spatial extent: [N,C,H,W] -> [N,C].
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& input) {
  if (input.ndim() != 4) {
    throw ConfigError("global_avg_pool expects [N,C,H,W], got " + shape_str(input.shape()));
  }
  const int N = input.dim(0), C = input.dim(1);
  const int HW = input.dim(2) * input.dim(3);
  std::vector<S> out(static_cast<std::size_t>(N) * C);
  const S* x = input.data().data();
  for (int nc = 0; nc < N * C; ++nc) {
    S acc = 0;
    for (int i = 0; i < HW; ++i) acc += x[static_cast<std::size_t>(nc) * HW + i];
    out[nc] = acc / static_cast<S>(HW);
  }
  return Tensor<S>::make_op({N, C}, std::move(out), {input},
                            [HW](typename Tensor<S>::Node& self) {
                              auto& p = *self.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              for (std::size_t nc = 0; nc < self.value.size(); ++nc) {
                                const S g = self.grad[nc] / static_cast<S>(HW);
                                for (int i = 0; i < HW; ++i) p.grad[nc * HW + i] += g;
                              }
                            });
}

/// Fully connected layer: input [N,F], weight [G,F], bias [G] -> [N,G].
template <typename S>
Tensor<S> linear(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias) {
  if (input.ndim() != 2 || weight.ndim() != 2 || bias.ndim() != 1 ||
      input.dim(1) != weight.dim(1) || weight.dim(0) != bias.dim(0)) {
    throw ConfigError("linear shape mismatch: input " + shape_str(input.shape()) + ", weight " +
                      shape_str(weight.shape()) + ", bias " + shape_str(bias.shape()));
  }
  const int N = input.dim(0), F = input.dim(1), G = weight.dim(0);
  std::vector<S> out(static_cast<std::size_t>(N) * G);
  Eigen::Map<const detail::MatRM<S>> xm(input.data().data(), N, F);
  Eigen::Map<const detail::MatRM<S>> wm(weight.data().data(), G, F);
  Eigen::Map<const detail::VecX<S>> bv(bias.data().data(), G);
  Eigen::Map<detail::MatRM<S>> om(out.data(), N, G);
  om.noalias() = xm * wm.transpose();
  om.rowwise() += bv.transpose();
  return Tensor<S>::make_op(
      {N, G}, std::move(out), {input, weight, bias},
      [N, F, G](typename Tensor<S>::Node& self) {
        auto& in = *self.parents[0];
        auto& wn = *self.parents[1];
        auto& bn = *self.parents[2];
        Eigen::Map<const detail::MatRM<S>> g(self.grad.data(), N, G);
        if (in.requires_grad) {
          in.ensure_grad();
          Eigen::Map<const detail::MatRM<S>> wm(wn.value.data(), G, F);
          Eigen::Map<detail::MatRM<S>> dx(in.grad.data(), N, F);
          dx.noalias() += g * wm;
        }
        if (wn.requires_grad) {
          wn.ensure_grad();
          Eigen::Map<const detail::MatRM<S>> xm(in.value.data(), N, F);
          Eigen::Map<detail::MatRM<S>> dw(wn.grad.data(), G, F);
          dw.noalias() += g.transpose() * xm;
        }
        if (bn.requires_grad) {
          bn.ensure_grad();
          Eigen::Map<detail::VecX<S>> db(bn.grad.data(), G);
          db.noalias() += g.colwise().sum().transpose();
        }
      });
}

/// Channel concatenation of [N,Ca,H,W] and [N,Cb,H,W].
template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.ndim() != 4 || b.ndim() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) ||
      a.dim(3) != b.dim(3)) {
    throw ConfigError("concat_channels extent mismatch: " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
  const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
  const std::size_t hw = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  std::vector<S> out(static_cast<std::size_t>(N) * (Ca + Cb) * hw);
  for (int n = 0; n < N; ++n) {
    std::copy_n(a.data().data() + n * Ca * hw, Ca * hw, out.data() + n * (Ca + Cb) * hw);
    std::copy_n(b.data().data() + n * Cb * hw, Cb * hw, out.data() + (n * (Ca + Cb) + Ca) * hw);
  }
  return Tensor<S>::make_op(
      {N, Ca + Cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
      [N, Ca, Cb, hw](typename Tensor<S>::Node& self) {
        auto& an = *self.parents[0];
        auto& bn = *self.parents[1];
        for (int n = 0; n < N; ++n) {
          const S* g = self.grad.data() + n * (Ca + Cb) * hw;
          if (an.requires_grad) {
            an.ensure_grad();
            for (std::size_t i = 0; i < Ca * hw; ++i) an.grad[n * Ca * hw + i] += g[i];
          }
          if (bn.requires_grad) {
            bn.ensure_grad();
            for (std::size_t i = 0; i < Cb * hw; ++i) bn.grad[n * Cb * hw + i] += g[Ca * hw + i];
          }
        }
      });
}

/// Per-channel scaling: x [N,C,H,W] * s [N,C] broadcast over H,W.
template <typename S>
Tensor<S> scale_channels(const Tensor<S>& x, const Tensor<S>& s) {
  if (x.ndim() != 4 || s.ndim() != 2 || x.dim(0) != s.dim(0) || x.dim(1) != s.dim(1)) {
    throw ConfigError("scale_channels mismatch: " + shape_str(x.shape()) + " vs " +
                      shape_str(s.shape()));
  }
  const int NC = x.dim(0) * x.dim(1);
  const int HW = x.dim(2) * x.dim(3);
  std::vector<S> out(x.size());
  for (int nc = 0; nc < NC; ++nc) {
    const S f = s.data()[nc];
    for (int i = 0; i < HW; ++i)
      out[static_cast<std::size_t>(nc) * HW + i] = x.data()[static_cast<std::size_t>(nc) * HW + i] * f;
  }
  return Tensor<S>::make_op(
      x.shape(), std::move(out), {x, s},
      [NC, HW](typename Tensor<S>::Node& self) {
        auto& xn = *self.parents[0];
        auto& sn = *self.parents[1];
        for (int nc = 0; nc < NC; ++nc) {
          const std::size_t off = static_cast<std::size_t>(nc) * HW;
          if (xn.requires_grad) {
            xn.ensure_grad();
            const S f = sn.value[nc];
            for (int i = 0; i < HW; ++i) xn.grad[off + i] += self.grad[off + i] * f;
          }
          if (sn.requires_grad) {
            sn.ensure_grad();
            S acc = 0;
            for (int i = 0; i < HW; ++i) acc += self.grad[off + i] * xn.value[off + i];
            sn.grad[nc] += acc;
          }
        }
      });
}

/// Softmax over the channel axis of [N,K,H,W], max-stabilized per pixel.
template <typename S>
Tensor<S> softmax_channels(const Tensor<S>& x) {
  if (x.ndim() != 4) throw ConfigError("softmax_channels expects [N,K,H,W], got " + shape_str(x.shape()));
  const int N = x.dim(0), K = x.dim(1);
  const std::size_t HW = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  std::vector<S> out(x.size());
  for (int n = 0; n < N; ++n) {
    const S* xs = x.data().data() + n * K * HW;
    S* os = out.data() + n * K * HW;
    for (std::size_t p = 0; p < HW; ++p) {
      S m = xs[p];
      for (int c = 1; c < K; ++c) m = std::max(m, xs[c * HW + p]);
      S z = 0;
      for (int c = 0; c < K; ++c) {
        const S e = std::exp(xs[c * HW + p] - m);
        os[c * HW + p] = e;
        z += e;
      }
      for (int c = 0; c < K; ++c) os[c * HW + p] /= z;
    }
  }
  return Tensor<S>::make_op(
      x.shape(), std::move(out), {x},
      [N, K, HW](typename Tensor<S>::Node& self) {
        auto& p0 = *self.parents[0];
        if (!p0.requires_grad) return;
        p0.ensure_grad();
        for (int n = 0; n < N; ++n) {
          const S* s = self.value.data() + n * K * HW;
          const S* g = self.grad.data() + n * K * HW;
          S* d = p0.grad.data() + n * K * HW;
          for (std::size_t p = 0; p < HW; ++p) {
            S dot = 0;
            for (int c = 0; c < K; ++c) dot += g[c * HW + p] * s[c * HW + p];
            for (int c = 0; c < K; ++c) d[c * HW + p] += s[c * HW + p] * (g[c * HW + p] - dot);
          }
        }
      });
}

/// Mean multi-class cross-entropy over all N*H*W pixels. logits [N,K,H,W],
/// target values in 0..K-1. Gradient is (softmax - onehot)/(N*H*W).
template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, const Mask& target) {
  if (logits.ndim() != 4) {
    throw ConfigError("softmax_cross_entropy expects logits [N,K,H,W], got " +
                      shape_str(logits.shape()));
  }
  const int N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  if (target.shape != Shape{N, H, W}) {
    throw ConfigError("softmax_cross_entropy target shape " + shape_str(target.shape) +
                      " does not match logits " + shape_str(logits.shape()));
  }
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  const std::size_t total = static_cast<std::size_t>(N) * HW;
  S loss = 0;
  for (int n = 0; n < N; ++n) {
    const S* xs = logits.data().data() + n * K * HW;
    for (std::size_t p = 0; p < HW; ++p) {
      const int t = target.v[n * HW + p];
      if (t >= K) {
        throw DataError("softmax_cross_entropy: target value " + std::to_string(t) +
                        " out of range 0.." + std::to_string(K - 1));
      }
      S m = xs[p];
      for (int c = 1; c < K; ++c) m = std::max(m, xs[c * HW + p]);
      S z = 0;
      for (int c = 0; c < K; ++c) z += std::exp(xs[c * HW + p] - m);
      loss += m + std::log(z) - xs[static_cast<std::size_t>(t) * HW + p];
    }
  }
  loss /= static_cast<S>(total);
  auto backprop = [N, K, HW, total, target](typename Tensor<S>::Node& self) {
    auto& ln = *self.parents[0];
    if (!ln.requires_grad) return;
    ln.ensure_grad();
    const S g0 = self.grad[0] / static_cast<S>(total);
    std::vector<S> sm(K);
    for (int n = 0; n < N; ++n) {
      const S* xs = ln.value.data() + n * K * HW;
      S* d = ln.grad.data() + n * K * HW;
      for (std::size_t p = 0; p < HW; ++p) {
        S m = xs[p];
        for (int c = 1; c < K; ++c) m = std::max(m, xs[c * HW + p]);
        S z = 0;
        for (int c = 0; c < K; ++c) {
          sm[c] = std::exp(xs[c * HW + p] - m);
          z += sm[c];
        }
        const int t = target.v[n * HW + p];
        for (int c = 0; c < K; ++c) d[c * HW + p] += g0 * (sm[c] / z - (c == t ? S(1) : S(0)));
      }
    }
  };
  return Tensor<S>::make_op({1}, {loss}, {logits}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// Parameters and gradient checking
// ---------------------------------------------------------------------------

/// Named trainable tensor. Freezing stops gradient flow into the tensor and
/// excludes it from optimizer updates.
template <typename S>
struct Parameter {
  Tensor<S> tensor;
  std::string name;
  bool frozen = false;
};

template <typename S>
void set_frozen(Parameter<S>& p, bool frozen) {
  p.frozen = frozen;
  p.tensor.set_requires_grad(!frozen);
}

/// Worst relative error between reverse-mode gradients and central
/// differences, probing at most `coords_per_param` randomly chosen elements
/// per parameter (0 = all). Used for whole-network checks where the full
/// sweep would be quadratic.
template <typename S>
S grad_check_sampled(const std::function<Tensor<S>()>& loss_fn,
                     std::span<Parameter<S>* const> params, S eps, Rng* rng,
                     int coords_per_param) {
  Tensor<S> loss = loss_fn();
  if (loss.size() != 1) {
    throw UsageError("grad_check requires a scalar-valued graph, got " + shape_str(loss.shape()));
  }
  for (Parameter<S>* p : params) p->tensor.zero_grad();
  loss.backward();
  std::vector<std::vector<S>> analytic;
  analytic.reserve(params.size());
  for (Parameter<S>* p : params) {
    analytic.emplace_back(p->tensor.grad().begin(), p->tensor.grad().end());
  }

  S worst = 0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter<S>& prm = *params[pi];
    if (prm.frozen || !prm.tensor.requires_grad()) continue;
    std::vector<std::size_t> coords;
    const std::size_t n = prm.tensor.size();
    if (coords_per_param > 0 && static_cast<std::size_t>(coords_per_param) < n) {
      for (int c = 0; c < coords_per_param; ++c)
        coords.push_back(static_cast<std::size_t>(rng->uniform_int(0, static_cast<int>(n) - 1)));
    } else {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    }
    for (std::size_t i : coords) {
      S& slot = prm.tensor.data()[i];
      const S orig = slot;
      slot = orig + eps;
      const S f1 = loss_fn().item();
      slot = orig - eps;
      const S f2 = loss_fn().item();
      slot = orig;
      const S numeric = (f1 - f2) / (2 * eps);
      const S a = analytic[pi].empty() ? S(0) : analytic[pi][i];
      const S rel = std::abs(a - numeric) /
                    std::max({std::abs(a), std::abs(numeric), static_cast<S>(1e-3)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

/// Full-sweep gradient check over every element of every unfrozen parameter.
/// loss_fn must rebuild the scalar graph from the parameters' current values.
template <typename S>
S grad_check(const std::function<Tensor<S>()>& loss_fn, std::span<Parameter<S>* const> params,
             S eps) {
  return grad_check_sampled<S>(loss_fn, params, eps, nullptr, 0);
}

}  // namespace secp
