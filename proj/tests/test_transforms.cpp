#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "cloaksim/transforms.hpp"

using namespace cloaksim;
using namespace cloaksim::xform;

namespace {

Vec rand_point(std::mt19937_64& rng, int dim, double rmin, double rmax) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(rmin, rmax);
  Vec x(dim);
  for (int i = 0; i < dim; ++i) x[i] = gauss(rng);
  x *= unif(rng) / x.norm();
  return x;
}

// central finite differences, the independent check on every analytic Jacobian
Mat numeric_jacobian(const Diffeomorphism& T, const Vec& x, double h = 1e-6) {
  int d = int(x.size());
  Mat J(d, d);
  for (int i = 0; i < d; ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    J.col(i) = (T.map(xp) - T.map(xm)) / (2.0 * h);
  }
  return J;
}

double rel_err(const Mat& a, const Mat& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST_CASE("kelvin maps radii to R^2/r and fixes the sphere") {
  auto K = Diffeomorphism::kelvin(2.0);
  Vec x(2);
  x << 1.0, 0.0;
  Vec y = K.map(x);
  CHECK(y[0] == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(y[1] == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(K.map_radius(0.5) == doctest::Approx(8.0).epsilon(1e-14));

  std::mt19937_64 rng(11);
  for (int d : {2, 3}) {
    for (int i = 0; i < 50; ++i) {
      Vec p = rand_point(rng, d, 2.0, 2.0);  // on the fixed sphere
      CHECK((K.map(p) - p).norm() < 1e-12);
      Vec q = rand_point(rng, d, 0.3, 6.0);
      CHECK((K.map(K.map(q)) - q).norm() < 1e-11 * q.norm());  // involution
    }
  }
}

TEST_CASE("analytic Jacobians agree with central differences") {
  std::mt19937_64 rng(17);
  std::vector<Diffeomorphism> maps = {
      Diffeomorphism::kelvin(2.0),
      Diffeomorphism::dilation(3.5),
      Diffeomorphism::kelvin(1.0).then(Diffeomorphism::dilation(2.0)),
      Diffeomorphism::kelvin(1.5).then(Diffeomorphism::kelvin(4.0)),
  };
  for (const auto& T : maps) {
    for (int d : {2, 3}) {
      for (int i = 0; i < 25; ++i) {
        Vec x = rand_point(rng, d, 0.5, 3.0);
        Mat Ja = T.jacobian(x);
        Mat Jn = numeric_jacobian(T, x);
        CHECK(rel_err(Jn, Ja) < 1e-8);
        CHECK(T.jacobian_abs_det(x) ==
              doctest::Approx(std::abs(Ja.determinant())).epsilon(1e-11));
      }
    }
  }
}

TEST_CASE("composition and inverse are consistent") {
  auto F = Diffeomorphism::kelvin(1.0);
  auto G = Diffeomorphism::dilation(2.0);
  auto FG = F.then(G);
  std::mt19937_64 rng(23);
  for (int d : {2, 3}) {
    for (int i = 0; i < 25; ++i) {
      Vec x = rand_point(rng, d, 0.4, 2.5);
      CHECK((FG.map(x) - G.map(F.map(x))).norm() < 1e-13 * FG.map(x).norm());
      Vec y = FG.map(x);
      CHECK((FG.inverse().map(y) - x).norm() < 1e-12 * x.norm());
      // chain rule against the numeric oracle
      CHECK(rel_err(numeric_jacobian(FG, x), FG.jacobian(x)) < 1e-8);
    }
  }
}

TEST_CASE("points outside the declared annulus or at the origin are rejected") {
  auto K = Diffeomorphism::kelvin(2.0, 1.0, 4.0);
  Vec x(2);
  x << 0.5, 0.0;
  CHECK_THROWS_AS(K.map(x), std::domain_error);
  x << 5.0, 0.0;
  CHECK_THROWS_AS(K.map(x), std::domain_error);
  auto Kfull = Diffeomorphism::kelvin(2.0);
  Vec z = Vec::Zero(3);
  CHECK_THROWS_AS(Kfull.map(z), std::domain_error);
  CHECK_THROWS_AS(Diffeomorphism::kelvin(-1.0), std::runtime_error);
  CHECK_THROWS_AS(Diffeomorphism::dilation(0.0), std::runtime_error);
}

TEST_CASE("kelvin push-forward of a constant tensor") {
  // 3D, R = 1: the image coefficient at |y| = 2 is I/4
  auto K = Diffeomorphism::kelvin(1.0);
  auto I3 = TensorField::isotropic_constant(3, 1.0);
  Vec y(3);
  y << 2.0, 0.0, 0.0;
  Mat M = pushforward(I3, K, y);
  CHECK((M - 0.25 * Mat::Identity(3, 3)).norm() < 1e-12);

  std::mt19937_64 rng(31);
  for (int i = 0; i < 40; ++i) {
    Vec p = rand_point(rng, 3, 0.3, 4.0);
    Mat Mp = pushforward(I3, K, p);
    double expect = 1.0 / p.squaredNorm();  // (R^2/|y|^2)^{d-2}
    CHECK((Mp - expect * Mat::Identity(3, 3)).norm() < 1e-11 * expect);
  }

  // 2D Kelvin is conformal: the push-forward of I is I
  auto I2 = TensorField::isotropic_constant(2, 1.0);
  auto K2 = Diffeomorphism::kelvin(1.7);
  for (int i = 0; i < 40; ++i) {
    Vec p = rand_point(rng, 2, 0.2, 5.0);
    CHECK((pushforward(I2, K2, p) - Mat::Identity(2, 2)).norm() < 1e-12);
  }
}

TEST_CASE("dilation push-forward of a constant tensor") {
  auto T2 = Diffeomorphism::dilation(3.0);
  auto T3 = Diffeomorphism::dilation(3.0);
  auto c2 = TensorField::isotropic_constant(2, 5.0);
  auto c3 = TensorField::isotropic_constant(3, 5.0);
  std::mt19937_64 rng(37);
  Vec p2 = rand_point(rng, 2, 1.0, 2.0), p3 = rand_point(rng, 3, 1.0, 2.0);
  CHECK((pushforward(c2, T2, p2) - 5.0 * Mat::Identity(2, 2)).norm() < 1e-12);
  CHECK((pushforward(c3, T3, p3) - (5.0 / 3.0) * Mat::Identity(3, 3)).norm() < 1e-12);
}

TEST_CASE("complementary identity holds for the matched core and fails for I") {
  // r2 = 1, r3 = 4: the matched 3D core coefficient is (r3^2/r2^2)^{d-2} I = 16 I.
  // F sends the core outside B_{r3}; G brings it back as a dilation.
  double r2 = 1.0, r3 = 4.0;
  auto F = Diffeomorphism::kelvin(r2);
  auto G = Diffeomorphism::kelvin(r3);

  auto core_good = TensorField::isotropic_constant(3, 16.0);
  double res_good = verify_complementary_identity(core_good, F, G, r3, 1000, 42);
  CHECK(res_good < 1e-12);

  auto core_bad = TensorField::isotropic_constant(3, 1.0);
  double res_bad = verify_complementary_identity(core_bad, F, G, r3, 1000, 42);
  CHECK(res_bad == doctest::Approx(15.0).epsilon(1e-9));

  // 2D: G o F is a dilation and any constant core already satisfies the identity
  auto core2 = TensorField::isotropic_constant(2, 1.0);
  CHECK(verify_complementary_identity(core2, F, G, r3, 1000, 7) < 1e-12);
}

TEST_CASE("radial tensor fields evaluate through the push-forward") {
  // sigma(y) = beta r2^2 / |y|^2 is the 3D Kelvin image of beta I from radius R = r2
  double r2 = 1.3, beta = 2.5;
  auto K = Diffeomorphism::kelvin(r2);
  auto b = TensorField::isotropic_constant(3, beta);
  std::mt19937_64 rng(53);
  for (int i = 0; i < 40; ++i) {
    Vec y = rand_point(rng, 3, 0.4, 3.0);
    Mat M = pushforward(b, K, y);
    double expect = beta * r2 * r2 / y.squaredNorm();
    CHECK((M - expect * Mat::Identity(3, 3)).norm() < 1e-11 * expect);
  }
}
