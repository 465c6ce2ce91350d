#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "secp/blocks.hpp"

namespace secp {

// The six model variants of the ablation ladder. Concat variants cascade a
// plain U-Net behind the primary; auto-context variants feed it the original
// image alongside the primary's class probabilities.
enum class VariantId : std::uint8_t {
  Baseline = 0,
  BaselineConcat = 1,
  BaselineAutoConcat = 2,
  BaselineSEC = 3,
  BaselineSECConcat = 4,
  SECPNet = 5,
};

inline constexpr VariantId kAllVariants[] = {
    VariantId::Baseline,        VariantId::BaselineConcat, VariantId::BaselineAutoConcat,
    VariantId::BaselineSEC,     VariantId::BaselineSECConcat,
    VariantId::SECPNet,
};

inline bool variant_has_sec(VariantId v) {
  return v == VariantId::BaselineSEC || v == VariantId::BaselineSECConcat ||
         v == VariantId::SECPNet;
}

inline bool variant_is_cascade(VariantId v) {
  return v == VariantId::BaselineConcat || v == VariantId::BaselineAutoConcat ||
         v == VariantId::BaselineSECConcat || v == VariantId::SECPNet;
}

/// Auto-context cascades concatenate the original image with the primary's
/// probability maps; plain concat cascades pass probabilities only.
inline bool variant_uses_autocontext(VariantId v) {
  return v == VariantId::BaselineAutoConcat || v == VariantId::SECPNet;
}

/// Standalone variant of the primary sub-network.
inline VariantId variant_primary(VariantId v) {
  return variant_has_sec(v) ? VariantId::BaselineSEC : VariantId::Baseline;
}

inline const char* variant_key(VariantId v) {
  switch (v) {
    case VariantId::Baseline: return "baseline";
    case VariantId::BaselineConcat: return "baseline-concat";
    case VariantId::BaselineAutoConcat: return "baseline-auto-concat";
    case VariantId::BaselineSEC: return "baseline-sec";
    case VariantId::BaselineSECConcat: return "baseline-sec-concat";
    case VariantId::SECPNet: return "secp-net";
  }
  throw InternalError("unknown variant id");
}

inline const char* variant_display(VariantId v) {
  switch (v) {
    case VariantId::Baseline: return "Baseline";
    case VariantId::BaselineConcat: return "Baseline+concat";
    case VariantId::BaselineAutoConcat: return "Baseline+auto-concat";
    case VariantId::BaselineSEC: return "Baseline+SEC";
    case VariantId::BaselineSECConcat: return "Baseline+SEC-concat";
    case VariantId::SECPNet: return "SECP-Net";
  }
  throw InternalError("unknown variant id");
}

inline VariantId variant_from_key(const std::string& key) {
  for (VariantId v : kAllVariants)
    if (key == variant_key(v)) return v;
  throw ConfigError("unknown variant '" + key + "'");
}

inline VariantId variant_from_byte(std::uint8_t b) {
  if (b > static_cast<std::uint8_t>(VariantId::SECPNet))
    throw FormatError("invalid variant byte " + std::to_string(b));
  return static_cast<VariantId>(b);
}

struct NetworkConfig {
  int in_channels = 1;
  int num_classes = 14;  // 13 organs + background
  int base_width = 64;
  int depth = 4;  // number of downsamplings
  int se_ratio = 16;

  bool operator==(const NetworkConfig&) const = default;
};

/// One U-shaped sub-network. SEC variants add a bottleneck SE gate and one
/// SEC fusion per stage in place of the raw skips.
template <typename S>
struct UNetParams {
  std::vector<DoubleConvParams<S>> enc;  // stage 1..depth, widths w, 2w, ...
  DoubleConvParams<S> bottleneck;        // width w * 2^depth
  std::optional<SEBlockParams<S>> bottleneck_se;
  std::vector<SECParams<S>> sec;      // deep-to-shallow, sec[0] is stage `depth`
  std::vector<Conv2dLayer<S>> up;     // 1x1 up-projections, up[0] is stage `depth`
  std::vector<DoubleConvParams<S>> dec;
  Conv2dLayer<S> head;  // 1x1 to num_classes logits
  int in_channels = 0;
};

template <typename S>
struct Network {
  VariantId variant = VariantId::Baseline;
  NetworkConfig config;
  UNetParams<S> primary;
  std::optional<UNetParams<S>> secondary;
};

template <typename S>
void collect_params(UNetParams<S>& u, std::vector<Parameter<S>*>& out) {
  for (auto& e : u.enc) collect_params(e, out);
  collect_params(u.bottleneck, out);
  if (u.bottleneck_se) collect_params(*u.bottleneck_se, out);
  for (auto& s : u.sec) collect_params(s, out);
  for (std::size_t i = 0; i < u.up.size(); ++i) {
    collect_params(u.up[i], out);
    collect_params(u.dec[i], out);
  }
  collect_params(u.head, out);
}

/// Parameters in a stable, build-independent order.
template <typename S>
std::vector<Parameter<S>*> parameters(Network<S>& net) {
  std::vector<Parameter<S>*> out;
  collect_params(net.primary, out);
  if (net.secondary) collect_params(*net.secondary, out);
  return out;
}

namespace detail {

template <typename S>
UNetParams<S> make_unet(int in_channels, const NetworkConfig& cfg, bool with_sec,
                        const std::string& prefix, Rng& rng) {
  UNetParams<S> u;
  u.in_channels = in_channels;
  const int D = cfg.depth;
  auto width = [&](int stage) { return cfg.base_width << (stage - 1); };  // stage 1..D+1

  int cin = in_channels;
  for (int s = 1; s <= D; ++s) {
    u.enc.push_back(make_double_conv<S>(cin, width(s), prefix + "enc" + std::to_string(s), rng));
    cin = width(s);
  }
  u.bottleneck = make_double_conv<S>(cin, width(D + 1), prefix + "bottleneck", rng);
  if (with_sec) {
    const int cb = width(D + 1);
    u.bottleneck_se = make_se_block<S>(cb, cb / se_hidden_width(cb, cfg.se_ratio),
                                       prefix + "bottleneck_se", rng);
    for (int s = D; s >= 1; --s) {
      u.sec.push_back(
          make_sec<S>(width(s), width(s + 1), cfg.se_ratio, prefix + "sec" + std::to_string(s), rng));
    }
  }
  for (int s = D; s >= 1; --s) {
    u.up.push_back(make_conv2d<S>(width(s + 1), width(s), 1, 0, prefix + "up" + std::to_string(s), rng));
    u.dec.push_back(make_double_conv<S>(2 * width(s), width(s), prefix + "dec" + std::to_string(s), rng));
  }
  u.head = make_conv2d<S>(width(1), cfg.num_classes, 1, 0, prefix + "head", rng);
  return u;
}

}  // namespace detail

/// Deterministically constructs a variant. Parameter names and shapes depend
/// only on (variant, config); values on the seed.
template <typename S>
Network<S> build_variant(VariantId id, const NetworkConfig& cfg, std::uint64_t seed) {
  if (cfg.in_channels < 1 || cfg.num_classes < 2 || cfg.base_width < 1 || cfg.depth < 1) {
    throw ConfigError("invalid network config");
  }
  Rng rng(splitmix64(seed));
  Network<S> net;
  net.variant = id;
  net.config = cfg;
  net.primary =
      detail::make_unet<S>(cfg.in_channels, cfg, variant_has_sec(id), "primary.", rng);
  if (variant_is_cascade(id)) {
    const int sec_in =
        variant_uses_autocontext(id) ? cfg.in_channels + cfg.num_classes : cfg.num_classes;
    net.secondary = detail::make_unet<S>(sec_in, cfg, false, "secondary.", rng);
  }
  return net;
}

/// Named activation shapes recorded during forward, for inspection in tests
/// and tools.
struct ForwardTrace {
  std::vector<std::pair<std::string, Shape>> entries;
  void add(const std::string& name, const Shape& s) { entries.emplace_back(name, s); }
  const Shape* find(const std::string& name) const {
    for (const auto& [n, s] : entries)
      if (n == name) return &s;
    return nullptr;
  }
};

template <typename S>
struct ForwardResult {
  Tensor<S> primary_logits;
  Tensor<S> final_logits;  // == primary_logits for non-cascades
};

namespace detail {

template <typename S>
Tensor<S> unet_forward(const UNetParams<S>& u, const Tensor<S>& input, const std::string& prefix,
                       ForwardTrace* trace) {
  const int D = static_cast<int>(u.enc.size());
  std::vector<Tensor<S>> skips(D);
  Tensor<S> x = input;
  for (int s = 0; s < D; ++s) {
    skips[s] = double_conv(u.enc[s], x);
    x = max_pool2x2(skips[s]);
  }
  x = double_conv(u.bottleneck, x);
  if (u.bottleneck_se) x = se_block(x, *u.bottleneck_se);

  if (!u.sec.empty()) {
    // pyramid: chain SEC outputs deep-to-shallow; each output replaces the
    // raw skip and feeds the next-shallower fusion as its level2
    Tensor<S> level2 = x;
    for (int i = 0; i < D; ++i) {
      const int stage = D - i;  // sec[i] fuses encoder stage `stage`
      level2 = sec_fuse<S>({skips[stage - 1], level2}, u.sec[i]);
      skips[stage - 1] = level2;
      if (trace) trace->add(prefix + "sec" + std::to_string(stage), level2.shape());
    }
  }

  for (int i = 0; i < D; ++i) {
    const int stage = D - i;
    auto up = conv(u.up[i], upsample_bilinear2x(x));
    x = double_conv(u.dec[i], concat_channels(skips[stage - 1], up));
  }
  return conv(u.head, x);
}

}  // namespace detail

/// Runs the network. Cascades softmax the primary logits, concatenate per the
/// variant's context rule and run the secondary U-Net.
template <typename S>
ForwardResult<S> forward(const Network<S>& net, const Tensor<S>& images,
                         ForwardTrace* trace = nullptr) {
  if (images.ndim() != 4 || images.dim(1) != net.config.in_channels) {
    throw ConfigError("forward: expected images [N," + std::to_string(net.config.in_channels) +
                      ",H,W], got " + shape_str(images.shape()));
  }
  const int div = 1 << net.config.depth;
  if (images.dim(2) % div != 0 || images.dim(3) % div != 0 || images.dim(2) < div ||
      images.dim(3) < div) {
    throw ConfigError("forward: spatial extents of " + shape_str(images.shape()) +
                      " must be divisible by 2^depth = " + std::to_string(div));
  }
  ForwardResult<S> r;
  r.primary_logits = detail::unet_forward(net.primary, images, "primary.", trace);
  if (net.secondary) {
    auto probs = softmax_channels(r.primary_logits);
    auto sec_in = variant_uses_autocontext(net.variant) ? concat_channels(images, probs) : probs;
    if (trace) trace->add("secondary.input", sec_in.shape());
    r.final_logits = detail::unet_forward(*net.secondary, sec_in, "secondary.", trace);
  } else {
    r.final_logits = r.primary_logits;
  }
  return r;
}

/// Per-pixel argmax over classes; ties break toward the lowest class index.
template <typename S>
Mask predict_mask(const Network<S>& net, const Tensor<S>& images) {
  auto logits = forward(net, images).final_logits;
  const int N = logits.dim(0), K = logits.dim(1);
  const std::size_t HW = static_cast<std::size_t>(logits.dim(2)) * logits.dim(3);
  Mask m({N, logits.dim(2), logits.dim(3)});
  for (int n = 0; n < N; ++n) {
    const S* base = logits.data().data() + n * K * HW;
    for (std::size_t p = 0; p < HW; ++p) {
      int best = 0;
      S bv = base[p];
      for (int c = 1; c < K; ++c) {
        if (base[c * HW + p] > bv) {
          bv = base[c * HW + p];
          best = c;
        }
      }
      m.v[n * HW + p] = static_cast<std::uint8_t>(best);
    }
  }
  return m;
}

/// Copies values from src into every dst parameter whose name matches.
/// Returns the number of tensors copied.
template <typename S>
int copy_matching_params(Network<S>& dst, Network<S>& src) {
  std::map<std::string, Parameter<S>*> by_name;
  for (Parameter<S>* p : parameters(src)) by_name[p->name] = p;
  int copied = 0;
  for (Parameter<S>* p : parameters(dst)) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) continue;
    if (it->second->tensor.shape() != p->tensor.shape()) {
      throw InternalError("shape mismatch for shared parameter '" + p->name + "'");
    }
    std::copy(it->second->tensor.data().begin(), it->second->tensor.data().end(),
              p->tensor.data().begin());
    ++copied;
  }
  return copied;
}

}  // namespace secp
