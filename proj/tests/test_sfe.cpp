#include <doctest.h>

#include <cmath>

#include "sscf/ops.hpp"
#include "sscf/sfe.hpp"
#include "support/testing.hpp"

using namespace sscf;

namespace {

// Per-(t,b,x) channel normalization, then products with each neighbor.
std::vector<double> self_correlation_loops(const Tensor& f, std::size_t U, std::size_t V) {
  const auto& s = f.shape();
  const auto T = s[0], B = s[1], C = s[2], H = s[3], W = s[4];
  auto at = [&](std::size_t t, std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    return f[(((t * B + b) * C + c) * H + y) * W + x];
  };
  auto norm = [&](std::size_t t, std::size_t b, std::size_t y, std::size_t x) {
    double n = 0;
    for (std::size_t c = 0; c < C; ++c) n += at(t, b, c, y, x) * at(t, b, c, y, x);
    return std::sqrt(n);
  };
  std::vector<double> out(T * B * C * H * W * U * V, 0.0);
  std::size_t k = 0;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x)
            for (std::size_t i = 0; i < U; ++i)
              for (std::size_t j = 0; j < V; ++j, ++k) {
                const long yy = static_cast<long>(y + i) - static_cast<long>(U / 2);
                const long xx = static_cast<long>(x + j) - static_cast<long>(V / 2);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                const auto ny = static_cast<std::size_t>(yy), nx = static_cast<std::size_t>(xx);
                const double n0 = norm(t, b, y, x), n1 = norm(t, b, ny, nx);
                if (n0 == 0 || n1 == 0) continue;
                out[k] = at(t, b, c, y, x) / n0 * at(t, b, c, ny, nx) / n1;
              }
  return out;
}

}  // namespace

TEST_CASE("self correlation matches loops") {
  nn::Rng rng(8);
  Tensor f = sscf::testing::random_tensor({2, 2, 3, 4, 5}, rng, -1, 1, false);
  // a zero channel vector at one position
  auto d = f.mutable_data();
  for (std::size_t c = 0; c < 3; ++c) d[((0 * 2 + 1) * 3 + c) * 20 + 7] = 0.0;
  Tensor out = sfe::self_correlation(f, 5, 5);
  CHECK(out.shape() == Shape{2, 2, 3, 4, 5, 5, 5});
  CHECK(sscf::testing::max_abs_diff(out.data(), self_correlation_loops(f, 5, 5)) < 1e-14);
}

TEST_CASE("self correlation of a spike map: center offset is the squared unit vector") {
  Tensor f({1, 1, 2, 1, 1}, {1.0, 1.0});
  Tensor out = sfe::self_correlation(f, 3, 3);
  // summed over channels the center is exactly 1 (cosine with itself)
  CHECK(out[4] + out[9 + 4] == doctest::Approx(1.0));
  CHECK(out[0] == 0.0);
}

TEST_CASE("forward shape, residual form and analog records") {
  nn::Rng rng(9);
  sfe::Sfe module({8, 5, 4, true}, {}, rng);
  std::bernoulli_distribution coin(0.4);
  std::vector<double> v(2 * 3 * 8 * 4 * 4);
  for (auto& x : v) x = coin(rng);
  Tensor f0({2, 3, 8, 4, 4}, v);
  ActivityRecorder rec;
  auto f = module.forward({f0}, Mode::train, &rec);
  CHECK(f.values.shape() == f0.shape());
  // F = F0 + binary F1
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d = f.values[i] - f0[i];
    CHECK((d == 0.0 || d == 1.0));
  }
  std::vector<std::string> names;
  for (const auto& a : rec.layers()) {
    names.push_back(a.name);
    CHECK_FALSE(a.spiking_input);
    CHECK(a.per_timestep);
  }
  CHECK(names == std::vector<std::string>{"sfe.selfcorr", "sfe.reduce", "sfe.conv_a", "sfe.conv_b", "sfe.restore"});
  CHECK(rec.layers().back().spikes.defined());
}

TEST_CASE("zeroed block or disabled module passes F0 through") {
  nn::Rng rng(10);
  sfe::Sfe module({8, 5, 4, true}, {}, rng);
  Tensor f0 = sscf::testing::random_tensor({1, 2, 8, 4, 4}, rng, 0, 1, false);
  module.zero_block_weights();
  auto f = module.forward({f0}, Mode::train);
  CHECK(sscf::testing::max_abs_diff(f.values.data(), f0.data()) == 0.0);
  module.set_enabled(false);
  CHECK(module.forward({f0}, Mode::train).values.shares_storage(f0));
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS((sfe::SfeConfig{8, 3, 4, true}.validate()), ConfigError);
  CHECK_THROWS_AS((sfe::SfeConfig{2, 5, 4, true}.validate()), ConfigError);
  CHECK((sfe::SfeConfig{64, 5, 4, true}.bottleneck()) == 16);
}

TEST_CASE("finite differences through the bottleneck block") {
  nn::Rng rng(12);
  sfe::Sfe module({4, 5, 2, true}, {}, rng);
  nn::ParameterSet params;
  module.register_parameters(params);
  for (int trial = 0; trial < 3; ++trial) {
    Tensor corr = sscf::testing::random_tensor({2, 4, 2, 2, 5, 5}, rng);
    nn::Rng wr(trial);
    auto f = [&](const std::vector<Tensor>& in) {
      nn::Rng r = wr;
      return sscf::testing::project(module.block(in[0], Mode::train), r);
    };
    CHECK(sscf::testing::gradcheck(f, {corr}) < 1e-5);
  }
}
