#include <doctest.h>

#include <cmath>

#include "sscf/ops.hpp"
#include "sscf/spiking.hpp"
#include "support/testing.hpp"

using namespace sscf;
using spiking::LifParams;

namespace {

std::vector<double> run(const std::vector<double>& inputs, const LifParams& p) {
  Tensor x({inputs.size(), 1}, inputs);
  Tensor s = spiking::lif_layer(x, p);
  return {s.data().begin(), s.data().end()};
}

// Reference unroll: H = tau*U + x, S = [H >= v_th], U = H(1-S).
std::vector<double> reference(const std::vector<double>& x, const LifParams& p, std::vector<double>* membranes) {
  double u = 0;
  std::vector<double> s;
  for (double xi : x) {
    const double h = p.tau * u + xi;
    const double spike = h >= p.v_th ? 1.0 : 0.0;
    u = h * (1 - spike);
    s.push_back(spike);
    if (membranes) membranes->push_back(u);
  }
  return s;
}

}  // namespace

TEST_CASE("hand traces") {
  const LifParams p{0.5, 1.0, 1.0};
  // 0.6 -> 0.9 -> 1.05
  CHECK(run({0.6, 0.6, 0.6}, p) == std::vector<double>{0, 0, 1});
  CHECK(run({1.2, 1.2, 1.2, 1.2}, p) == std::vector<double>{1, 1, 1, 1});
  CHECK(run({0, 0, 0}, p) == std::vector<double>{0, 0, 0});
  // threshold is inclusive
  CHECK(run({1.0}, p) == std::vector<double>{1});
}

TEST_CASE("fused layer equals chained steps and the scalar reference") {
  nn::Rng rng(7);
  const LifParams p{0.7, 0.8, 0.5};
  Tensor x = sscf::testing::random_tensor({6, 2, 3}, rng, -0.5, 1.5, false);
  Tensor fused = spiking::lif_layer(x, p);
  spiking::LifState state{Tensor::zeros({2, 3})};
  for (std::size_t t = 0; t < 6; ++t) {
    auto r = spiking::lif_step(state, reshape(slice(x, 0, t, 1), {2, 3}), p);
    for (std::size_t i = 0; i < 6; ++i) CHECK(r.spikes[i] == fused[t * 6 + i]);
    state = r.state;
  }
  for (std::size_t i = 0; i < 6; ++i) {
    std::vector<double> seq;
    for (std::size_t t = 0; t < 6; ++t) seq.push_back(x[t * 6 + i]);
    const auto ref = reference(seq, p, nullptr);
    for (std::size_t t = 0; t < 6; ++t) CHECK(fused[t * 6 + i] == ref[t]);
  }
}

TEST_CASE("binary output and hard reset on random sequences") {
  nn::Rng rng(99);
  std::uniform_real_distribution<double> tau(0.05, 1.0), th(0.2, 2.0), in(-1.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    const LifParams p{tau(rng), th(rng), 1.0};
    std::vector<double> seq(10);
    for (auto& v : seq) v = in(rng);
    std::vector<double> membranes;
    const auto ref = reference(seq, p, &membranes);
    const auto got = run(seq, p);
    CHECK(got == ref);
    for (std::size_t t = 0; t < seq.size(); ++t) {
      CHECK((got[t] == 0.0 || got[t] == 1.0));
      if (got[t] == 1.0) CHECK(membranes[t] == 0.0);
    }
  }
}

TEST_CASE("surrogate derivative is a triangle") {
  CHECK(spiking::surrogate_derivative(0.0, 1.0) == 1.0);
  CHECK(spiking::surrogate_derivative(0.5, 1.0) == 0.5);
  CHECK(spiking::surrogate_derivative(-0.5, 2.0) == doctest::Approx(0.375));
  CHECK(spiking::surrogate_derivative(1.5, 1.0) == 0.0);
}

TEST_CASE("spike function backward uses the surrogate") {
  const LifParams p{0.5, 1.0, 1.0};
  Tensor h({3}, {0.8, 1.0, 2.5}, true);
  backward(sum_all(spiking::spike_function(h, p)));
  CHECK(h.grad()[0] == doctest::Approx(0.8));
  CHECK(h.grad()[1] == doctest::Approx(1.0));
  CHECK(h.grad()[2] == 0.0);
}

TEST_CASE("layer gradient matches a hand unroll with detached reset") {
  // Two steps, one neuron, no spike at t=0.
  const LifParams p{0.5, 1.0, 1.0};
  Tensor x({2, 1}, {0.6, 0.9}, true);
  Tensor s = spiking::lif_layer(x, p);
  CHECK(s[1] == 1.0);  // 0.3 + 0.9 = 1.2
  backward(sum_all(s));
  // dS0/dh0 = 1 - |0.6-1| = 0.6; dS1/dh1 = 1 - |1.2-1| = 0.8
  // h1 = tau*u0 + x1, u0 = h0*(1-S0) with S0 constant, so dh1/dx0 = 0.5
  CHECK(x.grad()[1] == doctest::Approx(0.8));
  CHECK(x.grad()[0] == doctest::Approx(0.6 + 0.5 * 0.8));
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS((LifParams{0.0, 1.0, 1.0}.validate()), ConfigError);
  CHECK_THROWS_AS((LifParams{1.5, 1.0, 1.0}.validate()), ConfigError);
  CHECK_THROWS_AS((LifParams{0.5, 0.0, 1.0}.validate()), ConfigError);
  CHECK_THROWS_AS((LifParams{0.5, 1.0, 0.0}.validate()), ConfigError);
  CHECK_NOTHROW((LifParams{1.0, 1.0, 1.0}.validate()));
}
