// Radial diffeomorphisms (Kelvin inversions, dilations, their compositions)
// with closed-form Jacobians, and the push-forward action on symmetric
// tensor coefficient fields.

#ifndef CLOAKSIM_TRANSFORMS_HPP
#define CLOAKSIM_TRANSFORMS_HPP

#include <functional>
#include <limits>
#include <vector>

#include "cloaksim/common.hpp"

namespace cloaksim::xform {

// Real symmetric d x d coefficient field.
struct TensorField {
  int dim = 2;
  std::function<Mat(const Vec&)> eval;

  static TensorField isotropic_constant(int dim, double value);
  static TensorField radial_isotropic(int dim, std::function<double(double)> profile);
};

// Composition of radial primitives. map/jacobian reject points within
// 1e-12 * scale of the origin; points outside the declared annulus by more
// than the same margin are rejected rather than extrapolated.
class Diffeomorphism {
 public:
  static Diffeomorphism kelvin(double R);
  static Diffeomorphism kelvin(double R, double domain_inner, double domain_outer);
  static Diffeomorphism dilation(double rho);
  static Diffeomorphism dilation(double rho, double domain_inner, double domain_outer);

  // x -> next(this(x)); domain is this map's domain.
  Diffeomorphism then(const Diffeomorphism& next) const;
  Diffeomorphism inverse() const;

  Vec map(const Vec& x) const;
  double map_radius(double r) const;
  Mat jacobian(const Vec& x) const;
  double jacobian_abs_det(const Vec& x) const;

  double domain_inner() const { return dom_in_; }
  double domain_outer() const { return dom_out_; }

 private:
  struct Prim {
    enum Kind { Kelvin, Dilation } kind;
    double param;
  };
  std::vector<Prim> chain_;
  double dom_in_ = 0.0;
  double dom_out_ = std::numeric_limits<double>::infinity();
  double scale_ = 1.0;

  double map_radius_unchecked(double r) const;
  void check_point(const Vec& x) const;
  friend Mat prim_jacobian(const Diffeomorphism::Prim&, const Vec&);
};

// (T_* b)(y) = DT(x) b(x) DT(x)^T / |det DT(x)|,  x = T^{-1}(y).
Mat pushforward(const TensorField& b, const Diffeomorphism& T, const Vec& y);

// Max over sample points y in B_r3 \ {0} of ||M(y) - I||_F / ||M(y)||_F where
// M = (G o F)_* core. Detects mis-assembled cloak geometry.
double verify_complementary_identity(const TensorField& core, const Diffeomorphism& F,
                                     const Diffeomorphism& G, double r3, int samples,
                                     unsigned seed);

}  // namespace cloaksim::xform

#endif
