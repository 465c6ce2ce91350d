#include "secp/overlay.hpp"

#include <cmath>
#include <fstream>
#include <string>

namespace secp {

namespace {

RgbImage grayscale_base(const Tensor<float>& image) {
  if (image.ndim() != 3 || image.dim(0) != 1) {
    throw UsageError("overlay image must be [1,H,W], got " + shape_str(image.shape()));
  }
  RgbImage out;
  out.height = image.dim(1);
  out.width = image.dim(2);
  out.pixels.resize(static_cast<std::size_t>(out.height) * out.width);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const float v = std::min(std::max(image.data()[i], 0.0f), 1.0f);
    const auto g = static_cast<std::uint8_t>(std::lround(255.0 * v));
    out.pixels[i] = {g, g, g};
  }
  return out;
}

void paint_organ(RgbImage& img, const Mask& pred, const Mask& gt, int organ) {
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    const bool p = pred.v[i] == organ;
    const bool g = gt.v[i] == organ;
    if (p && g)
      img.pixels[i] = kOverlayTruePositive;
    else if (p)
      img.pixels[i] = kOverlayPredictionOnly;
    else if (g)
      img.pixels[i] = kOverlayGroundTruthOnly;
  }
}

void check_shapes(const Tensor<float>& image, const Mask& pred, const Mask& gt) {
  const Shape want{image.dim(1), image.dim(2)};
  if (pred.shape != want || gt.shape != want) {
    throw UsageError("overlay: mask extents must match the image, got pred " +
                     shape_str(pred.shape) + ", gt " + shape_str(gt.shape) + ", image " +
                     shape_str(image.shape()));
  }
}

}  // namespace

RgbImage overlay_render(const Tensor<float>& image, const Mask& pred, const Mask& gt,
                        const OverlaySpec& spec) {
  RgbImage out = grayscale_base(image);
  check_shapes(image, pred, gt);
  paint_organ(out, pred, gt, spec.organ);
  return out;
}

RgbImage overlay_composite(const Tensor<float>& image, const Mask& pred, const Mask& gt,
                           const std::vector<int>& organs) {
  RgbImage out = grayscale_base(image);
  check_shapes(image, pred, gt);
  for (int organ : organs) paint_organ(out, pred, gt, organ);
  return out;
}

std::vector<std::uint8_t> ppm_bytes(const RgbImage& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.pixels.size() * 3);
  for (const Rgb& px : image.pixels) {
    out.push_back(px.r);
    out.push_back(px.g);
    out.push_back(px.b);
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  const auto bytes = ppm_bytes(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to '" + path.string() + "'");
}

}  // namespace secp
