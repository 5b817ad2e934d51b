#include <catch_amalgamated.hpp>

#include "crl/matrix.hpp"
#include "oracles.hpp"

using namespace crl;

TEST_CASE("cholesky identity and diagonal") {
  SpdMatrix id = cholesky(Matrix::identity(3));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(id.chol()(i, j) == (i == j ? 1.0 : 0.0));

  SpdMatrix d = cholesky(Matrix::diagonal({4.0, 9.0}));
  CHECK(d.chol()(0, 0) == 2.0);
  CHECK(d.chol()(1, 1) == 3.0);
  CHECK(d.chol()(1, 0) == 0.0);
}

TEST_CASE("cholesky 2x2 verified by direct multiplication") {
  Matrix m(2, 2, {2, 1, 1, 2});
  SpdMatrix s = cholesky(m);
  CHECK(s.chol()(0, 0) == Catch::Approx(std::sqrt(2.0)).epsilon(1e-14));
  const Matrix& l = s.chol();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double rec = 0.0;
      for (std::size_t k = 0; k < 2; ++k) rec += l(i, k) * l(j, k);
      CHECK(rec == Catch::Approx(m(i, j)).epsilon(1e-12));
    }
}

TEST_CASE("cholesky error paths") {
  CHECK_THROWS_AS(cholesky(Matrix(2, 2, {1, 0.5, 0.0, 1})), NotSymmetric);
  CHECK_THROWS_AS(cholesky(Matrix(2, 2, {1, 2, 2, 1})), NotPositiveDefinite);
  CHECK_THROWS_AS(cholesky(Matrix(2, 3)), DimensionMismatch);
}

TEST_CASE("random SPD reconstruction property") {
  Rng rng(123);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t d = 1 + rng.next_u64() % 12;
    Matrix m = oracles::random_spd(d, rng);
    SpdMatrix s = cholesky(m);
    const Matrix& l = s.chol();
    double err = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double rec = 0.0;
        for (std::size_t k = 0; k < d; ++k) rec += l(i, k) * l(j, k);
        double diff = rec - m(i, j);
        err += diff * diff;
      }
    CHECK(std::sqrt(err) <= 1e-10 * frobenius_norm(m));
  }
}

TEST_CASE("spd solve inverts the base matrix") {
  Rng rng(321);
  Matrix m = oracles::random_spd(6, rng);
  SpdMatrix s = cholesky(m);
  Vector b(6);
  for (double& x : b) x = rng.normal();
  Vector x = s.solve(b);
  Vector back = m * x;
  CHECK(std::sqrt(sq_dist(back, b)) <= 1e-9 * norm(b));
}

TEST_CASE("stable_softmax uniform, hand value, singleton") {
  Vector u = stable_softmax({0.0, 0.0, 0.0});
  for (double w : u) CHECK(w == Catch::Approx(1.0 / 3.0).epsilon(1e-14));

  for (double c : {0.0, 1e4, -1e4}) {
    Vector w = stable_softmax({c, c + std::log(3.0)});
    CHECK(std::abs(w[0] - 0.25) <= 1e-12);
    CHECK(std::abs(w[1] - 0.75) <= 1e-12);
  }

  Vector s = stable_softmax({7.0});
  CHECK(s.size() == 1);
  CHECK(s[0] == 1.0);

  CHECK_THROWS_AS(stable_softmax({}), EmptyInput);
}

TEST_CASE("stable_softmax shift invariance property") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 1 + rng.next_u64() % 20;
    Vector s(n);
    for (double& x : s) x = 3.0 * rng.normal();
    double c = rng.uniform(-1e4, 1e4);
    Vector shifted = s;
    for (double& x : shifted) x += c;
    Vector w0 = stable_softmax(s);
    Vector w1 = stable_softmax(shifted);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(w0[i] - w1[i]) <= 1e-12);
    double total = 0.0;
    for (double w : w0) {
      CHECK(w >= 0.0);
      total += w;
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("cosine basics") {
  Vector u = {3.0, 4.0};
  CHECK(cosine(u, u) == 1.0);
  CHECK(cosine({1.0, 0.0}, {0.0, 1.0}) == 0.0);
  CHECK(cosine({3.0, 4.0}, {4.0, 3.0}) == Catch::Approx(24.0 / 25.0).epsilon(1e-15));
  CHECK_THROWS_AS(cosine({0.0, 0.0}, u), ZeroVector);
}

TEST_CASE("cosine geometric stability property") {
  // cos(u + e, u) >= sqrt(1 - eta^2) for |e| = eta |u|.
  Rng rng(2024);
  for (int trial = 0; trial < 10000; ++trial) {
    std::size_t d = 2 + rng.next_u64() % 15;
    Vector u(d), e(d);
    for (double& x : u) x = rng.normal();
    for (double& x : e) x = rng.normal();
    double eta = rng.uniform(0.0, 0.99);
    double target = eta * norm(u) / norm(e);
    for (double& x : e) x *= target;
    Vector s = u + e;
    CHECK(cosine(s, u) >= std::sqrt(1.0 - eta * eta) - 1e-12);
  }
}

TEST_CASE("op_norm examples") {
  CHECK(op_norm(Matrix::diagonal({3.0, 1.0})) == Catch::Approx(3.0).margin(1e-8));
  CHECK(op_norm(Matrix::identity(5)) == Catch::Approx(1.0).margin(1e-10));
  CHECK(op_norm(Matrix(2, 2, {0, 2, 0, 0})) == Catch::Approx(2.0).margin(1e-8));
  CHECK_THROWS_AS(op_norm(Matrix()), EmptyInput);
  // A budget of one iteration can never satisfy the two-estimate criterion.
  CHECK_THROWS_AS(op_norm(Matrix::diagonal({3.0, 1.0}), 1, 1e-10), NoConvergence);
}

TEST_CASE("op_norm agrees with singular values of random matrices") {
  // Oracle: largest singular value of A equals sqrt of the largest
  // eigenvalue of A^T A, estimated by dense Jacobi-free bisection on the
  // characteristic polynomial for 2x2 blocks; here use exact 2x2 formula.
  Rng rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix a(2, 2);
    for (double& x : a.data()) x = rng.normal();
    double g11 = a(0, 0) * a(0, 0) + a(1, 0) * a(1, 0);
    double g22 = a(0, 1) * a(0, 1) + a(1, 1) * a(1, 1);
    double g12 = a(0, 0) * a(0, 1) + a(1, 0) * a(1, 1);
    double tr = g11 + g22;
    double det = g11 * g22 - g12 * g12;
    double lam = 0.5 * (tr + std::sqrt(std::max(0.0, tr * tr - 4.0 * det)));
    CHECK(op_norm(a) == Catch::Approx(std::sqrt(lam)).epsilon(1e-7));
  }
}
