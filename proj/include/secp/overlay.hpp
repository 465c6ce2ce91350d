#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "secp/tensor.hpp"

namespace secp {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

struct RgbImage {
  int height = 0, width = 0;
  std::vector<Rgb> pixels;  // row-major

  Rgb& at(int i, int j) { return pixels[static_cast<std::size_t>(i) * width + j]; }
  const Rgb& at(int i, int j) const { return pixels[static_cast<std::size_t>(i) * width + j]; }
};

// Fixed color scheme: true positives green, prediction-only red,
// ground-truth-only blue, everything else grayscale from the input image.
inline constexpr Rgb kOverlayTruePositive{0, 255, 0};
inline constexpr Rgb kOverlayPredictionOnly{255, 0, 0};
inline constexpr Rgb kOverlayGroundTruthOnly{0, 0, 255};

struct OverlaySpec {
  int organ = 1;
};

/// Colors one organ's agreement map over the grayscale image.
RgbImage overlay_render(const Tensor<float>& image, const Mask& pred, const Mask& gt,
                        const OverlaySpec& spec);

/// Applies one overlay pass per organ, in ascending label order.
RgbImage overlay_composite(const Tensor<float>& image, const Mask& pred, const Mask& gt,
                           const std::vector<int>& organs);

/// Binary P6 with maxval 255.
std::vector<std::uint8_t> ppm_bytes(const RgbImage& image);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

}  // namespace secp
