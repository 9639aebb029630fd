#include <doctest.h>

#include <cmath>

#include "sscf/losses.hpp"
#include "sscf/ops.hpp"
#include "support/testing.hpp"

using namespace sscf;
using losses::EmbeddingSet;
using sscf::testing::random_tensor;

TEST_CASE("TET with one step is plain cross-entropy") {
  nn::Rng rng(1);
  Tensor logits = random_tensor({4, 3}, rng, -2, 2, false);
  const std::size_t labels[] = {0, 2, 1, 2};
  const double tet = losses::tet_loss(reshape(logits, {1, 4, 3}), labels)[0];
  const double ce = cross_entropy_with_logits(logits, labels)[0];
  CHECK(tet == ce);
}

TEST_CASE("TET averages the per-step losses") {
  nn::Rng rng(2);
  Tensor seq = random_tensor({3, 2, 4}, rng, -2, 2, false);
  const std::size_t labels[] = {1, 3};
  double expect = 0;
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t b = 0; b < 2; ++b) {
      double z = 0;
      for (std::size_t k = 0; k < 4; ++k) z += std::exp(seq[(t * 2 + b) * 4 + k]);
      expect += (std::log(z) - seq[(t * 2 + b) * 4 + labels[b]]) / 6.0;
    }
  CHECK(losses::tet_loss(seq, labels)[0] == doctest::Approx(expect).epsilon(1e-12));
  const std::size_t bad[] = {1, 4};
  CHECK_THROWS(losses::tet_loss(seq, bad));
}

TEST_CASE("InfoNCE with identical similarities is ln N") {
  for (std::size_t n : {2u, 5u, 20u}) {
    std::vector<std::size_t> ids(n), labels{0, n - 1};
    for (std::size_t i = 0; i < n; ++i) ids[i] = i;
    // every prototype equals the query
    Tensor protos = Tensor::full({2, n, 3}, 1.0), queries = Tensor::full({2, n, 3}, 1.0);
    EmbeddingSet e{protos, queries, ids, labels};
    CHECK(losses::infonce_loss(e, 0.2)[0] == doctest::Approx(std::log(static_cast<double>(n))).epsilon(1e-12));
  }
}

TEST_CASE("InfoNCE matches a direct evaluation") {
  nn::Rng rng(3);
  Tensor p = random_tensor({3, 4, 5}, rng, -1, 1, false), q = random_tensor({3, 4, 5}, rng, -1, 1, false);
  EmbeddingSet e{p, q, {10, 11, 12, 13}, {11, 13, 10}};
  const std::size_t pos[] = {1, 3, 0};
  double expect = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> s(4);
    for (std::size_t n = 0; n < 4; ++n) {
      double dot = 0, a = 0, b = 0;
      for (std::size_t c = 0; c < 5; ++c) {
        const double x = p[(i * 4 + n) * 5 + c], y = q[(i * 4 + n) * 5 + c];
        dot += x * y;
        a += x * x;
        b += y * y;
      }
      s[n] = dot / std::sqrt(a * b);
      CHECK(losses::similarities(e)[i * 4 + n] == doctest::Approx(s[n]).epsilon(1e-12));
    }
    double z = 0;
    for (double v : s) z += std::exp(v / 0.2);
    expect += (std::log(z) - s[pos[i]] / 0.2) / 3.0;
  }
  CHECK(losses::infonce_loss(e, 0.2)[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("lambda endpoints select one term exactly") {
  Tensor a({1}, {1.25}), b({1}, {3.5});
  CHECK(losses::total_loss(a, b, 1.0)[0] == 1.25);
  CHECK(losses::total_loss(a, b, 0.0)[0] == 3.5);
  CHECK(losses::total_loss(a, Tensor{}, 1.0)[0] == 1.25);
  CHECK(losses::total_loss(a, b, 0.7)[0] == doctest::Approx(0.7 * 1.25 + 0.3 * 3.5));
  CHECK_THROWS_AS(losses::total_loss(a, b, 1.5), ConfigError);
  CHECK_THROWS_AS((losses::LossConfig{0.5, 0.0, 5}.validate()), ConfigError);
}

TEST_CASE("classification picks the nearest prototype, ties to the lowest id") {
  Tensor p({1, 3, 2}, {1, 0, 0, 1, 0, 1});
  Tensor q({1, 3, 2}, {0, 1, 0, 1, 0, 1});
  // classes 5 and 3 tie at cosine 1; 3 wins although it comes later
  EmbeddingSet e{p, q, {4, 5, 3}, {3}};
  CHECK(losses::classify_query(e) == std::vector<std::size_t>{3});
  auto shared = EmbeddingSet::shared(Tensor({2, 2}, {1, 0, 0, 1}), Tensor({1, 2}, {0.1, 0.9}), {0, 1}, {1});
  CHECK(shared.prototypes.shape() == Shape{1, 2, 2});
  CHECK(losses::classify_query(shared) == std::vector<std::size_t>{1});
}

TEST_CASE("TET head averages space at every step") {
  nn::Rng rng(4);
  losses::TetHead head(3, 4, rng);
  Tensor f = random_tensor({2, 1, 3, 2, 2}, rng, 0, 1, false);
  Tensor l = head.logits(f);
  CHECK(l.shape() == Shape{2, 1, 4});
  // constant maps with the same mean give the same logits
  Tensor pooled = mean(f, {3, 4});
  Tensor flat = expand_trailing(pooled, {2, 2});
  CHECK(sscf::testing::max_abs_diff(head.logits(flat).data(), l.data()) < 1e-14);
}

TEST_CASE("finite differences for both losses") {
  nn::Rng rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    Tensor seq = random_tensor({2, 3, 4}, rng, -2, 2);
    const std::size_t labels[] = {0, 3, 2};
    CHECK(sscf::testing::gradcheck([&](const std::vector<Tensor>& in) { return losses::tet_loss(in[0], labels); },
                                   {seq}) < 1e-6);
    Tensor p = random_tensor({2, 3, 4}, rng, -1, 1), q = random_tensor({2, 3, 4}, rng, -1, 1);
    CHECK(sscf::testing::gradcheck(
              [&](const std::vector<Tensor>& in) {
                return losses::infonce_loss(EmbeddingSet{in[0], in[1], {0, 1, 2}, {2, 0}}, 0.2);
              },
              {p, q}) < 1e-6);
  }
}

TEST_CASE("total loss is affine in lambda") {
  Tensor a({1}, {0.37}), b({1}, {2.91});
  const double mid = losses::total_loss(a, b, 0.5)[0];
  CHECK(std::abs(mid - 0.5 * (losses::total_loss(a, b, 0.0)[0] + losses::total_loss(a, b, 1.0)[0])) < 1e-12);
}

TEST_CASE("InfoNCE and classification ignore positive rescaling") {
  nn::Rng rng(6);
  Tensor p = random_tensor({2, 3, 4}, rng, -1, 1, false), q = random_tensor({2, 3, 4}, rng, -1, 1, false);
  EmbeddingSet e{p, q, {0, 1, 2}, {1, 2}};
  EmbeddingSet scaled{mul_scalar(p, 3.5), mul_scalar(q, 0.01), {0, 1, 2}, {1, 2}};
  CHECK(losses::infonce_loss(scaled, 0.2)[0] == doctest::Approx(losses::infonce_loss(e, 0.2)[0]).epsilon(1e-12));
  CHECK(losses::classify_query(scaled) == losses::classify_query(e));
}
