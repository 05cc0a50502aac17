#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "vmi/linalg.hpp"
#include "vmi/rng.hpp"

using namespace vmi;
using linalg::GaussianMoments;

namespace {

Tensor random_spd(std::size_t d, RngStream& rng, double ridge = 0.2) {
  Tensor m = Tensor::randn({d, d}, rng);
  Tensor spd = linalg::matmul(linalg::transpose(m), m);
  for (std::size_t i = 0; i < d; ++i) spd.at(i, i) += ridge;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      double s = 0.5 * (spd.at(i, j) + spd.at(j, i));
      spd.at(i, j) = s;
      spd.at(j, i) = s;
    }
  }
  return spd;
}

}  // namespace

TEST_CASE("eigh reconstructs a random symmetric matrix") {
  RngStream rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t d = 1 + trial % 6;
    Tensor a = random_spd(d, rng, 0.0);
    Tensor values, vectors;
    linalg::eigh(a, values, vectors);
    // V diag(w) V^T == A
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t m = 0; m < d; ++m) {
          acc += vectors.at(i, m) * values.at(0, m) * vectors.at(j, m);
        }
        CHECK(acc == doctest::Approx(a.at(i, j)).epsilon(1e-9));
      }
    }
    for (std::size_t m = 0; m + 1 < d; ++m) CHECK(values.at(0, m) <= values.at(0, m + 1) + 1e-12);
  }
}

TEST_CASE("cholesky solve inverts an SPD system") {
  RngStream rng(7);
  Tensor a = random_spd(5, rng);
  Tensor l = linalg::cholesky(a);
  Tensor x = linalg::cholesky_solve(l, Tensor::identity(5));
  Tensor should_be_identity = linalg::matmul(a, x);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(should_be_identity.at(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-9));
    }
  }
  double ld = linalg::logdet_from_cholesky(l);
  Tensor values, vectors;
  linalg::eigh(a, values, vectors);
  double ld_eig = 0.0;
  for (double v : values.data()) ld_eig += std::log(v);
  CHECK(ld == doctest::Approx(ld_eig).epsilon(1e-9));
}

TEST_CASE("cholesky rejects indefinite matrices") {
  Tensor bad = Tensor::matrix(2, 2, {1.0, 2.0, 2.0, 1.0});
  CHECK_THROWS_AS(linalg::cholesky(bad), std::runtime_error);
}

TEST_CASE("gaussian_kl is zero between identical distributions") {
  RngStream rng(9);
  GaussianMoments g{Tensor::randn({1, 4}, rng), random_spd(4, rng)};
  CHECK(std::abs(linalg::gaussian_kl(g, g)) < 1e-10);
}

TEST_CASE("gaussian_kl matches the scalar closed form") {
  // KL(N(m, s^2) || N(0, 1)) = 1/2 (m^2 + s^2 - 1 - log s^2)
  GaussianMoments q{Tensor::row({0.7}), Tensor::matrix(1, 1, {2.25})};
  GaussianMoments p{Tensor::row({0.0}), Tensor::matrix(1, 1, {1.0})};
  double expected = 0.5 * (0.49 + 2.25 - 1.0 - std::log(2.25));
  CHECK(linalg::gaussian_kl(q, p) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("sample_mvn moments approach the requested gaussian") {
  RngStream rng(13);
  GaussianMoments g{Tensor::row({1.0, -2.0}), Tensor::matrix(2, 2, {2.0, 0.6, 0.6, 1.0})};
  Tensor draws = linalg::sample_mvn(g, 20000, rng);
  GaussianMoments fit = linalg::moments_of_rows(draws);
  CHECK(fit.mean.at(0, 0) == doctest::Approx(1.0).epsilon(0.05));
  CHECK(fit.mean.at(0, 1) == doctest::Approx(-2.0).epsilon(0.05));
  CHECK(fit.cov.at(0, 0) == doctest::Approx(2.0).epsilon(0.1));
  CHECK(fit.cov.at(0, 1) == doctest::Approx(0.6).epsilon(0.2));
}

TEST_CASE("smallest singular value of an orthogonal-ish matrix") {
  Tensor a = Tensor::matrix(3, 2, {1, 0, 0, 1, 0, 0});
  CHECK(linalg::smallest_singular_value(a) == doctest::Approx(1.0).epsilon(1e-10));
  Tensor degenerate = Tensor::matrix(3, 2, {1, 1, 2, 2, 3, 3});
  CHECK(linalg::smallest_singular_value(degenerate) < 1e-7);
}
