#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "secp/network.hpp"

namespace secp {

// Checkpoint file, little-endian:
//   magic "SECPCKPT", u8 version=1, u8 variant id,
//   NetworkConfig as 5*u32 (in_channels, num_classes, base_width, depth,
//   se_ratio), u32 tensor count; per tensor: u16 name length, UTF-8 name,
//   u8 ndim, ndim*u32 dims, f32 payload row-major.

struct TensorBlob {
  std::string name;
  Shape dims;
  std::vector<float> data;
};

struct Checkpoint {
  VariantId variant = VariantId::Baseline;
  NetworkConfig config;
  std::vector<TensorBlob> tensors;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Snapshot of all parameters, in parameter order, values cast to f32.
template <typename S>
Checkpoint to_checkpoint(Network<S>& net) {
  Checkpoint ckpt;
  ckpt.variant = net.variant;
  ckpt.config = net.config;
  for (Parameter<S>* p : parameters(net)) {
    TensorBlob blob;
    blob.name = p->name;
    blob.dims = p->tensor.shape();
    blob.data.reserve(p->tensor.size());
    for (S v : p->tensor.data()) blob.data.push_back(static_cast<float>(v));
    ckpt.tensors.push_back(std::move(blob));
  }
  return ckpt;
}

/// Rebuilds the network described by the checkpoint header and loads every
/// tensor by name. The tensor set must match the architecture exactly.
template <typename S>
Network<S> network_from_checkpoint(const Checkpoint& ckpt) {
  Network<S> net = build_variant<S>(ckpt.variant, ckpt.config, 0);
  auto params = parameters(net);
  if (params.size() != ckpt.tensors.size()) {
    throw FormatError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                      " tensors but the architecture has " + std::to_string(params.size()));
  }
  std::map<std::string, const TensorBlob*> by_name;
  for (const TensorBlob& b : ckpt.tensors) by_name[b.name] = &b;
  for (Parameter<S>* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing tensor '" + p->name + "'");
    const TensorBlob& b = *it->second;
    if (b.dims != p->tensor.shape()) {
      throw FormatError("checkpoint tensor '" + p->name + "' has shape " + shape_str(b.dims) +
                        ", expected " + shape_str(p->tensor.shape()));
    }
    for (std::size_t i = 0; i < b.data.size(); ++i)
      p->tensor.data()[i] = static_cast<S>(b.data[i]);
  }
  return net;
}

}  // namespace secp
