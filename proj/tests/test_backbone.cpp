#include <doctest.h>

#include "sscf/backbone.hpp"
#include "sscf/ops.hpp"
#include "support/testing.hpp"

using namespace sscf;
using backbone::BackboneConfig;
using backbone::Variant;

TEST_CASE("variant layouts") {
  auto v = BackboneConfig::make(Variant::vggsnn, 2, 1, 8);
  CHECK(v.widths == std::vector<std::size_t>{8, 16, 32, 32, 64, 64, 64, 64});
  CHECK(v.downsample_blocks == std::vector<std::size_t>{1, 3, 5});
  CHECK(v.out_channels() == 64);
  CHECK(v.output_spatial(32, 32) == std::pair<std::size_t, std::size_t>{4, 4});
  auto s = BackboneConfig::make(Variant::scnn, 4, 2, 1);
  CHECK(s.widths == std::vector<std::size_t>{64, 128, 256, 256});
  CHECK(s.output_spatial(32, 32) == std::pair<std::size_t, std::size_t>{4, 4});
  CHECK_THROWS_AS(v.output_spatial(8, 8), ConfigError);
  CHECK_THROWS_AS(BackboneConfig::make(Variant::vggsnn, 2, 1, 0), ConfigError);
  CHECK(backbone::parse_variant("scnn") == Variant::scnn);
  CHECK(backbone::to_string(Variant::vggsnn) == "vggsnn");
  CHECK_THROWS_AS(backbone::parse_variant("resnet"), ConfigError);
}

TEST_CASE("static encoding replicates over T and emits binary features") {
  nn::Rng rng(1);
  backbone::Backbone net(BackboneConfig::make(Variant::scnn, 3, 1, 16), {}, rng);
  Tensor images = sscf::testing::random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0, false);
  ActivityRecorder rec;
  auto f = net.encode_static(images, Mode::train, &rec);
  CHECK(f.values.shape() == Shape{3, 2, 16, 2, 2});
  for (double v : f.values.data()) CHECK((v == 0.0 || v == 1.0));
  REQUIRE(rec.layers().size() == 4);
  // the first block sees analog pixels, later blocks see spikes
  CHECK_FALSE(rec.layers()[0].spiking_input);
  CHECK(rec.layers()[1].spiking_input);
  CHECK(rec.layers()[0].layer.kind == "conv2d");
  CHECK(rec.layers()[1].layer.out_spatial == Shape{8, 8});
  CHECK(rec.layers()[0].input.shape() == Shape{3, 2, 1, 16, 16});
  // replicated input: identical frames at every t
  const auto in = rec.layers()[0].input;
  for (std::size_t i = 0; i < 2 * 256; ++i) CHECK(in[i] == in[2 * 256 + i]);
}

TEST_CASE("static input checks") {
  nn::Rng rng(1);
  backbone::Backbone net(BackboneConfig::make(Variant::scnn, 2, 1, 16), {}, rng);
  CHECK_THROWS_AS(net.encode_static(Tensor::full({1, 1, 16, 16}, 1.5), Mode::train), ConfigError);
  CHECK_THROWS_AS(net.encode_static(Tensor::zeros({1, 2, 16, 16}), Mode::train), ShapeError);
  CHECK_THROWS_AS(net.encode_static(Tensor::zeros({1, 1, 16, 16}), Mode::eval), StateError);
}

TEST_CASE("event input: binary frames make the first layer spiking") {
  nn::Rng rng(2);
  backbone::Backbone net(BackboneConfig::make(Variant::scnn, 2, 2, 16), {}, rng);
  std::bernoulli_distribution coin(0.3);
  std::vector<double> v(2 * 3 * 2 * 16 * 16);
  for (auto& x : v) x = coin(rng);
  ActivityRecorder rec;
  auto f = net.encode_events(Tensor({2, 3, 2, 16, 16}, v), Mode::train, &rec);
  CHECK(f.values.shape() == Shape{2, 3, 16, 2, 2});
  CHECK(rec.layers()[0].spiking_input);
  CHECK_THROWS_AS(net.encode_events(Tensor::zeros({3, 1, 2, 16, 16}), Mode::train), ShapeError);
}

TEST_CASE("timesteps can change after construction") {
  nn::Rng rng(3);
  backbone::Backbone net(BackboneConfig::make(Variant::scnn, 2, 1, 16), {}, rng);
  Tensor images = Tensor::full({1, 1, 16, 16}, 0.5);
  net.encode_static(images, Mode::train);
  net.set_timesteps(5);
  CHECK(net.encode_static(images, Mode::eval).values.dim(0) == 5);
}

TEST_CASE("gradients reach every block") {
  nn::Rng rng(4);
  backbone::Backbone net(BackboneConfig::make(Variant::scnn, 2, 1, 16), {}, rng);
  nn::ParameterSet params;
  net.register_parameters(params);
  CHECK(params.parameters().size() == 4 * 3);
  Tensor images = sscf::testing::random_tensor({4, 1, 16, 16}, rng, 0.0, 1.0, false);
  auto f = net.encode_static(images, Mode::train);
  backward(sscf::testing::project(f.values, rng));
  for (const auto& p : params.parameters()) {
    CHECK_MESSAGE(p.tensor->has_grad(), p.name);
  }
}

TEST_CASE("replicated static frames through the event path match static encoding") {
  nn::Rng rng(5);
  backbone::Backbone net(BackboneConfig::make(Variant::scnn, 3, 1, 16), {}, rng);
  Tensor images = sscf::testing::random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0, false);
  Tensor frames = concat(std::vector<Tensor>{reshape(images, {1, 2, 1, 16, 16}), reshape(images, {1, 2, 1, 16, 16}),
                                             reshape(images, {1, 2, 1, 16, 16})},
                         0);
  auto a = net.encode_static(images, Mode::train);
  auto b = net.encode_events(frames, Mode::train);
  CHECK(sscf::testing::max_abs_diff(a.values.data(), b.values.data()) == 0.0);
}
