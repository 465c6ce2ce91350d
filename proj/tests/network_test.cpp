#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "secp/network.hpp"

using secp::NetworkConfig;
using secp::Parameter;
using secp::Rng;
using secp::Shape;
using secp::VariantId;
using Tensor = secp::Tensor<double>;

namespace {

NetworkConfig desk_config(int classes = 3, int width = 4, int depth = 2) {
  NetworkConfig cfg;
  cfg.in_channels = 1;
  cfg.num_classes = classes;
  cfg.base_width = width;
  cfg.depth = depth;
  return cfg;
}

}  // namespace

TEST_CASE("variant name round trip") {
  for (VariantId v : secp::kAllVariants) {
    CHECK(secp::variant_from_key(secp::variant_key(v)) == v);
  }
  CHECK_THROWS_AS(secp::variant_from_key("bogus"), secp::ConfigError);
}

TEST_CASE("auto-context secondary sees image plus probabilities") {
  NetworkConfig cfg;
  cfg.in_channels = 1;
  cfg.num_classes = 14;
  cfg.base_width = 4;
  cfg.depth = 2;
  auto secp_net = secp::build_variant<double>(VariantId::SECPNet, cfg, 1);
  REQUIRE(secp_net.secondary.has_value());
  CHECK(secp_net.secondary->enc[0].conv1.weight.tensor.dim(1) == 15);

  auto concat_net = secp::build_variant<double>(VariantId::BaselineConcat, cfg, 1);
  REQUIRE(concat_net.secondary.has_value());
  CHECK(concat_net.secondary->enc[0].conv1.weight.tensor.dim(1) == 14);

  auto baseline = secp::build_variant<double>(VariantId::Baseline, cfg, 1);
  CHECK_FALSE(baseline.secondary.has_value());
}

TEST_CASE("bottleneck width is base_width * 2^depth") {
  NetworkConfig cfg = desk_config(14, 8, 4);
  auto net = secp::build_variant<double>(VariantId::Baseline, cfg, 1);
  CHECK(net.primary.bottleneck.conv2.weight.tensor.dim(0) == 128);
}

TEST_CASE("forward preserves spatial extents and returns both logits") {
  NetworkConfig cfg = desk_config(14, 4, 3);
  auto net = secp::build_variant<double>(VariantId::SECPNet, cfg, 3);
  Rng rng(5);
  auto images = oracle::random_tensor<double>({1, 1, 32, 32}, rng, 0.0, 1.0);
  secp::ForwardTrace trace;
  auto r = secp::forward(net, images, &trace);
  CHECK(r.primary_logits.shape() == Shape{1, 14, 32, 32});
  CHECK(r.final_logits.shape() == Shape{1, 14, 32, 32});
  const Shape* sec_in = trace.find("secondary.input");
  REQUIRE(sec_in != nullptr);
  CHECK(*sec_in == Shape{1, 15, 32, 32});
  // every SEC output keeps its stage's encoder width
  for (int s = 1; s <= 3; ++s) {
    const Shape* out = trace.find("primary.sec" + std::to_string(s));
    REQUIRE(out != nullptr);
    CHECK((*out)[1] == cfg.base_width << (s - 1));
  }
}

TEST_CASE("forward rejects bad extents") {
  auto net = secp::build_variant<double>(VariantId::Baseline, desk_config(3, 4, 3), 1);
  CHECK_THROWS_AS(secp::forward(net, Tensor::zeros({1, 1, 20, 20})), secp::ConfigError);
  CHECK_THROWS_AS(secp::forward(net, Tensor::zeros({1, 2, 32, 32})), secp::ConfigError);
}

TEST_CASE("per-pixel softmax of logits sums to one") {
  auto net = secp::build_variant<double>(VariantId::BaselineSEC, desk_config(5, 4, 2), 7);
  Rng rng(9);
  auto images = oracle::random_tensor<double>({2, 1, 16, 16}, rng, 0.0, 1.0);
  auto probs = secp::softmax_channels(secp::forward(net, images).final_logits);
  const int K = probs.dim(1);
  for (int n = 0; n < 2; ++n)
    for (int h = 0; h < 16; ++h)
      for (int w = 0; w < 16; ++w) {
        double z = 0;
        for (int c = 0; c < K; ++c) z += probs.at(n, c, h, w);
        CHECK(z == doctest::Approx(1.0).epsilon(1e-6));
      }
}

TEST_CASE("all-zero parameters give uniform class probabilities") {
  auto net = secp::build_variant<double>(VariantId::SECPNet, desk_config(14, 4, 2), 11);
  for (Parameter<double>* p : secp::parameters(net))
    for (double& v : p->tensor.data()) v = 0.0;
  auto images = Tensor::filled({1, 1, 16, 16}, 0.5);
  auto probs = secp::softmax_channels(secp::forward(net, images).final_logits);
  for (double v : probs.data()) CHECK(v == doctest::Approx(1.0 / 14).epsilon(1e-9));
}

TEST_CASE("predict_mask argmax and tie rules") {
  auto net = secp::build_variant<double>(VariantId::Baseline, desk_config(6, 4, 2), 13);

  SUBCASE("uniform logits pick the background") {
    for (Parameter<double>* p : secp::parameters(net))
      for (double& v : p->tensor.data()) v = 0.0;
    auto m = secp::predict_mask(net, Tensor::filled({1, 1, 8, 8}, 0.3));
    for (auto v : m.v) CHECK(v == 0);
  }

  SUBCASE("class with maximal logit wins everywhere") {
    for (Parameter<double>* p : secp::parameters(net))
      for (double& v : p->tensor.data()) v = 0.0;
    // bias the head so class 3 dominates
    net.primary.head.bias.tensor.at(3) = 5.0;
    auto m = secp::predict_mask(net, Tensor::filled({1, 1, 8, 8}, 0.3));
    for (auto v : m.v) CHECK(v == 3);
  }

  SUBCASE("random logits match the argmax-scan oracle") {
    Rng rng(17);
    auto images = oracle::random_tensor<double>({2, 1, 8, 8}, rng, 0.0, 1.0);
    auto m = secp::predict_mask(net, images);
    auto ref = oracle::argmax_mask(secp::forward(net, images).final_logits);
    CHECK(m == ref);
  }
}

TEST_CASE("building the same variant twice yields identical names and shapes") {
  NetworkConfig cfg = desk_config(14, 4, 3);
  for (VariantId v : secp::kAllVariants) {
    auto a = secp::build_variant<double>(v, cfg, 21);
    auto b = secp::build_variant<double>(v, cfg, 99);  // different seed, same structure
    auto pa = secp::parameters(a);
    auto pb = secp::parameters(b);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      CHECK(pa[i]->name == pb[i]->name);
      CHECK(pa[i]->tensor.shape() == pb[i]->tensor.shape());
    }
    // same seed reproduces values bitwise
    auto c = secp::build_variant<double>(v, cfg, 21);
    auto pc = secp::parameters(c);
    for (std::size_t i = 0; i < pa.size(); ++i)
      CHECK(secp::same_values(pa[i]->tensor, pc[i]->tensor));
  }
}

TEST_CASE("BaselineSEC is a strict structural superset of Baseline") {
  NetworkConfig cfg = desk_config(3, 4, 2);
  auto base = secp::build_variant<double>(VariantId::Baseline, cfg, 31);
  auto pyr = secp::build_variant<double>(VariantId::BaselineSEC, cfg, 32);
  const int shared = secp::copy_matching_params(pyr, base);
  CHECK(shared == static_cast<int>(secp::parameters(base).size()));

  // neutralize the SEC additions: gate scale 1, zero level2 branch,
  // identity 3x3 fusion on the level1 half of the concatenation
  auto saturate = [](secp::SEBlockParams<double>& se) {
    for (double& v : se.expand.weight.tensor.data()) v = 0.0;
    for (double& v : se.expand.bias.tensor.data()) v = 40.0;
  };
  saturate(*pyr.primary.bottleneck_se);
  for (auto& sec : pyr.primary.sec) {
    for (double& v : sec.match.weight.tensor.data()) v = 0.0;
    for (double& v : sec.match.bias.tensor.data()) v = 0.0;
    auto& fw = sec.fuse.weight.tensor;
    for (double& v : fw.data()) v = 0.0;
    for (int c = 0; c < fw.dim(0); ++c) fw.at(c, c, 1, 1) = 1.0;
    for (double& v : sec.fuse.bias.tensor.data()) v = 0.0;
    saturate(sec.se);
  }

  Rng rng(33);
  auto images = oracle::random_tensor<double>({1, 1, 16, 16}, rng, 0.0, 1.0);
  auto yb = secp::forward(base, images).final_logits;
  auto yp = secp::forward(pyr, images).final_logits;
  CHECK(oracle::max_abs_diff(yb, yp) < 1e-5);
}

TEST_CASE("end-to-end loss gradients at desk scale") {
  Rng rng(41);
  NetworkConfig cfg = desk_config(3, 4, 2);
  for (VariantId v : {VariantId::BaselineSEC, VariantId::SECPNet}) {
    auto net = secp::build_variant<double>(v, cfg, 43);
    auto params = secp::parameters(net);
    // a finite-difference check needs a generic point: fresh-built nets have
    // zero biases, which parks dead-relu pre-activations exactly on the kink
    for (Parameter<double>* p : params)
      for (double& x : p->tensor.data()) x = rng.uniform(-0.5, 0.5);
    auto images = oracle::random_tensor<double>({1, 1, 8, 8}, rng, 0.0, 1.0);
    secp::Mask target({1, 8, 8});
    for (auto& t : target.v) t = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
    auto loss_fn = [&]() {
      return secp::softmax_cross_entropy(secp::forward(net, images).final_logits, target);
    };
    CHECK(secp::grad_check_sampled<double>(loss_fn, params, 1e-6, &rng, 3) < 1e-4);
  }
}
