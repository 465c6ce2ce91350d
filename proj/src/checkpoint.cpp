#include "secp/checkpoint.hpp"

#include <fstream>

#include "wire.hpp"

namespace secp {

namespace {
constexpr char kMagic[] = "SECPCKPT";
constexpr std::uint8_t kVersion = 1;
}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  wire::Writer w;
  w.bytes(kMagic, 8);
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(ckpt.variant));
  const NetworkConfig& c = ckpt.config;
  for (int f : {c.in_channels, c.num_classes, c.base_width, c.depth, c.se_ratio})
    w.u32(static_cast<std::uint32_t>(f));
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const TensorBlob& t : ckpt.tensors) {
    if (t.name.size() > UINT16_MAX) throw ConfigError("tensor name too long: " + t.name);
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.str(t.name);
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    std::size_t n = 1;
    for (int d : t.dims) {
      w.u32(static_cast<std::uint32_t>(d));
      n *= static_cast<std::size_t>(d);
    }
    if (n != t.data.size()) throw InternalError("tensor '" + t.name + "' payload size mismatch");
    for (float v : t.data) w.f32(v);
  }
  return w.take();
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes, "checkpoint");
  if (r.str(8) != kMagic) r.fail("bad magic, expected SECPCKPT");
  const std::uint8_t version = r.u8();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.variant = variant_from_byte(r.u8());
  ckpt.config.in_channels = static_cast<int>(r.u32());
  ckpt.config.num_classes = static_cast<int>(r.u32());
  ckpt.config.base_width = static_cast<int>(r.u32());
  ckpt.config.depth = static_cast<int>(r.u32());
  ckpt.config.se_ratio = static_cast<int>(r.u32());
  const std::uint32_t count = r.u32();
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorBlob t;
    t.name = r.str(r.u16());
    const std::uint8_t ndim = r.u8();
    std::size_t n = 1;
    for (int d = 0; d < ndim; ++d) {
      const std::uint32_t extent = r.u32();
      if (extent == 0) r.fail("zero extent in tensor '" + t.name + "'");
      t.dims.push_back(static_cast<int>(extent));
      n *= extent;
    }
    t.data.resize(n);
    for (std::size_t j = 0; j < n; ++j) t.data[j] = r.f32();
    ckpt.tensors.push_back(std::move(t));
  }
  r.expect_end();
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(in.tellg()));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw Error("short read from '" + path.string() + "'");
  return parse_checkpoint(bytes);
}

}  // namespace secp
