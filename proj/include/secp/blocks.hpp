#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "secp/tensor.hpp"

namespace secp {

template <typename S>
struct Conv2dLayer {
  Parameter<S> weight;  // [Cout,Cin,k,k]
  Parameter<S> bias;    // [Cout]
  int stride = 1;
  int padding = 0;
};

template <typename S>
struct LinearLayer {
  Parameter<S> weight;  // [G,F]
  Parameter<S> bias;    // [G]
};

/// (conv3x3 -> relu) twice with "same" padding; Cin->Cout then Cout->Cout.
template <typename S>
struct DoubleConvParams {
  Conv2dLayer<S> conv1;
  Conv2dLayer<S> conv2;
};

/// Squeeze-and-excitation gate: GAP -> reduce FC -> relu -> expand FC ->
/// sigmoid -> per-channel scale. reduce [C/r, C], expand [C, C/r].
template <typename S>
struct SEBlockParams {
  LinearLayer<S> reduce;
  LinearLayer<S> expand;
  int ratio = 16;
};

/// SEC fusion of two adjacent encoder levels: a 1x1 channel-matching conv on
/// the deeper map, 2x upsample, concat with the shallower map, a 3x3 fusion
/// conv halving the concatenation, then an SE gate.
template <typename S>
struct SECParams {
  Conv2dLayer<S> match;  // 1x1, C2 -> C1
  Conv2dLayer<S> fuse;   // 3x3, 2*C1 -> C1
  SEBlockParams<S> se;
};

/// level1: shallower encoder features [N,C1,H,W]; level2: deeper SEC/SE
/// output [N,C2,H/2,W/2].
template <typename S>
struct SECInputs {
  Tensor<S> level1;
  Tensor<S> level2;
};

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace detail {

// He-uniform over fan-in; biases start at zero.
template <typename S>
Parameter<S> init_weight(Shape shape, int fan_in, const std::string& name, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  return Parameter<S>{Tensor<S>::uniform(std::move(shape), rng, static_cast<S>(-bound),
                                         static_cast<S>(bound), true),
                      name};
}

}  // namespace detail

template <typename S>
Conv2dLayer<S> make_conv2d(int cin, int cout, int k, int padding, const std::string& name,
                           Rng& rng) {
  Conv2dLayer<S> c;
  c.weight = detail::init_weight<S>({cout, cin, k, k}, cin * k * k, name + ".weight", rng);
  c.bias = Parameter<S>{Tensor<S>::zeros({cout}, true), name + ".bias"};
  c.padding = padding;
  return c;
}

template <typename S>
LinearLayer<S> make_linear(int in, int out, const std::string& name, Rng& rng) {
  LinearLayer<S> l;
  l.weight = detail::init_weight<S>({out, in}, in, name + ".weight", rng);
  l.bias = Parameter<S>{Tensor<S>::zeros({out}, true), name + ".bias"};
  return l;
}

template <typename S>
DoubleConvParams<S> make_double_conv(int cin, int cout, const std::string& name, Rng& rng) {
  return {make_conv2d<S>(cin, cout, 3, 1, name + ".conv1", rng),
          make_conv2d<S>(cout, cout, 3, 1, name + ".conv2", rng)};
}

/// Bottleneck width of the SE gate for `channels`, honoring the requested
/// ratio but never squeezing below 4 units (or below 1:1 on narrow nets).
inline int se_hidden_width(int channels, int ratio) {
  int hidden = ratio > 0 ? channels / ratio : channels;
  hidden = std::max(hidden, 4);
  return std::min(hidden, channels);
}

template <typename S>
SEBlockParams<S> make_se_block(int channels, int ratio, const std::string& name, Rng& rng) {
  if (ratio < 1 || channels % ratio != 0) {
    throw ConfigError("se_block: ratio " + std::to_string(ratio) + " does not divide " +
                      std::to_string(channels) + " channels");
  }
  SEBlockParams<S> se;
  const int hidden = channels / ratio;
  se.reduce = make_linear<S>(channels, hidden, name + ".reduce", rng);
  se.expand = make_linear<S>(hidden, channels, name + ".expand", rng);
  se.ratio = ratio;
  return se;
}

template <typename S>
SECParams<S> make_sec(int c1, int c2, int se_ratio, const std::string& name, Rng& rng) {
  SECParams<S> p;
  p.match = make_conv2d<S>(c2, c1, 1, 0, name + ".match", rng);
  p.fuse = make_conv2d<S>(2 * c1, c1, 3, 1, name + ".fuse", rng);
  p.se = make_se_block<S>(c1, c1 / se_hidden_width(c1, se_ratio), name + ".se", rng);
  return p;
}

// ---------------------------------------------------------------------------
// Forward ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> conv(const Conv2dLayer<S>& c, const Tensor<S>& x) {
  return conv2d(x, c.weight.tensor, c.bias.tensor, c.stride, c.padding);
}

template <typename S>
Tensor<S> double_conv(const DoubleConvParams<S>& p, const Tensor<S>& x) {
  return relu(conv(p.conv2, relu(conv(p.conv1, x))));
}

template <typename S>
Tensor<S> se_block(const Tensor<S>& x, const SEBlockParams<S>& p) {
  if (x.ndim() != 4 || x.dim(1) != p.expand.bias.tensor.dim(0)) {
    throw ConfigError("se_block: input " + shape_str(x.shape()) + " does not match gate width " +
                      std::to_string(p.expand.bias.tensor.dim(0)));
  }
  auto z = global_avg_pool(x);
  auto h = relu(linear(z, p.reduce.weight.tensor, p.reduce.bias.tensor));
  auto s = sigmoid(linear(h, p.expand.weight.tensor, p.expand.bias.tensor));
  return scale_channels(x, s);
}

template <typename S>
Tensor<S> sec_fuse(const SECInputs<S>& in, const SECParams<S>& p) {
  const auto& l1 = in.level1;
  const auto& l2 = in.level2;
  if (l1.ndim() != 4 || l2.ndim() != 4 || l2.dim(2) * 2 != l1.dim(2) ||
      l2.dim(3) * 2 != l1.dim(3)) {
    throw ConfigError("sec_fuse: level2 " + shape_str(l2.shape()) +
                      " must be exactly half the spatial size of level1 " + shape_str(l1.shape()));
  }
  auto matched = upsample_bilinear2x(conv(p.match, l2));
  auto fused = relu(conv(p.fuse, concat_channels(l1, matched)));
  return se_block(fused, p.se);
}

/// Collects the parameters of a layer in declaration order.
template <typename S>
void collect_params(Conv2dLayer<S>& c, std::vector<Parameter<S>*>& out) {
  out.push_back(&c.weight);
  out.push_back(&c.bias);
}
template <typename S>
void collect_params(LinearLayer<S>& l, std::vector<Parameter<S>*>& out) {
  out.push_back(&l.weight);
  out.push_back(&l.bias);
}
template <typename S>
void collect_params(DoubleConvParams<S>& p, std::vector<Parameter<S>*>& out) {
  collect_params(p.conv1, out);
  collect_params(p.conv2, out);
}
template <typename S>
void collect_params(SEBlockParams<S>& p, std::vector<Parameter<S>*>& out) {
  collect_params(p.reduce, out);
  collect_params(p.expand, out);
}
template <typename S>
void collect_params(SECParams<S>& p, std::vector<Parameter<S>*>& out) {
  collect_params(p.match, out);
  collect_params(p.fuse, out);
  collect_params(p.se, out);
}

}  // namespace secp
