#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "secp/overlay.hpp"

using secp::Mask;
using secp::Rgb;
using Tensor = secp::Tensor<float>;

namespace {

Tensor ramp_image(int h, int w) {
  auto img = Tensor::zeros({1, h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) img.at(0, i, j) = static_cast<float>(i * w + j) / (h * w);
  return img;
}

}  // namespace

TEST_CASE("the three color rules hold pixel for pixel") {
  const int H = 6, W = 6;
  auto image = ramp_image(H, W);
  Mask pred({H, W}), gt({H, W});
  // quadrant layout: top-left TP, top-right prediction only, bottom-left
  // ground truth only, bottom-right background
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      pred.at(i, j) = 4;
      gt.at(i, j) = 4;
      pred.at(i, j + 3) = 4;
      gt.at(i + 3, j) = 4;
    }
  auto img = secp::overlay_render(image, pred, gt, {4});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      const bool p = pred.at(i, j) == 4;
      const bool g = gt.at(i, j) == 4;
      const Rgb px = img.at(i, j);
      if (p && g) {
        CHECK(px == secp::kOverlayTruePositive);
      } else if (p) {
        CHECK(px == secp::kOverlayPredictionOnly);
      } else if (g) {
        CHECK(px == secp::kOverlayGroundTruthOnly);
      } else {
        const auto gray = static_cast<std::uint8_t>(std::lround(255.0 * image.at(0, i, j)));
        CHECK(px == Rgb{gray, gray, gray});
      }
    }
}

TEST_CASE("background grayscale uses round(255 * image)") {
  auto image = Tensor::zeros({1, 1, 3});
  image.at(0, 0, 0) = 0.0f;
  image.at(0, 0, 1) = 0.5f;
  image.at(0, 0, 2) = 1.0f;
  Mask empty({1, 3});
  auto img = secp::overlay_render(image, empty, empty, {1});
  CHECK(img.at(0, 0) == Rgb{0, 0, 0});
  CHECK(img.at(0, 1) == Rgb{128, 128, 128});
  CHECK(img.at(0, 2) == Rgb{255, 255, 255});
}

TEST_CASE("composite passes apply in label order") {
  auto image = Tensor::zeros({1, 1, 2});
  Mask pred({1, 2}), gt({1, 2});
  pred.at(0, 0) = 1;  // prediction-only for organ 1
  gt.at(0, 0) = 2;    // ground-truth-only for organ 2 on the same pixel
  auto img = secp::overlay_composite(image, pred, gt, {1, 2});
  CHECK(img.at(0, 0) == secp::kOverlayGroundTruthOnly);  // organ 2 painted last
  auto reversed = secp::overlay_composite(image, pred, gt, {2, 1});
  CHECK(reversed.at(0, 0) == secp::kOverlayPredictionOnly);
}

TEST_CASE("overlay rejects mismatched shapes") {
  auto image = ramp_image(4, 4);
  Mask ok({4, 4}), bad({4, 5});
  CHECK_THROWS_AS(secp::overlay_render(image, ok, bad, {1}), secp::UsageError);
}

TEST_CASE("ppm bytes are deterministic with a P6 header") {
  auto image = ramp_image(4, 8);
  Mask pred({4, 8}), gt({4, 8});
  pred.at(1, 1) = 3;
  gt.at(1, 1) = 3;
  auto img = secp::overlay_render(image, pred, gt, {3});
  auto bytes = secp::ppm_bytes(img);
  CHECK(bytes == secp::ppm_bytes(img));
  const std::string header(bytes.begin(), bytes.begin() + 11);
  CHECK(header == "P6\n8 4\n255\n");
  CHECK(bytes.size() == 11 + 3 * 4 * 8);

  auto dir = std::filesystem::temp_directory_path() / "secp_overlay_test";
  std::filesystem::create_directories(dir);
  secp::write_ppm(dir / "o.ppm", img);
  std::ifstream in(dir / "o.ppm", std::ios::binary);
  std::vector<std::uint8_t> readback((std::istreambuf_iterator<char>(in)), {});
  CHECK(readback == bytes);
}
