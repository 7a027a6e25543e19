// Assembly of the sign-changing cloaking coefficient s_delta * A: a matched
// core, a negative Kelvin-image shell on r1 < |x| < r2, the annulus r2 <
// |x| < r3 carrying the cloaked object, and a homogeneous exterior. Point
// sampling routes the shell through the transforms module; the radial
// piecewise form lowers to an exact layered medium for the spectral solver.

#ifndef CLOAKSIM_MEDIA_HPP
#define CLOAKSIM_MEDIA_HPP

#include <optional>
#include <vector>

#include "cloaksim/common.hpp"
#include "cloaksim/spectral.hpp"
#include "cloaksim/transforms.hpp"

namespace cloaksim::media {

enum class Region { core, negative_shell, cloaked, exterior };
const char* region_name(Region r);

// One radial piece of the object: beta * I on r_in <= |x| < r_out.
struct RadialPiece {
  double r_in = 0.0, r_out = 0.0;
  double beta = 1.0;
};

struct CloakSpec {
  int dim = 3;
  double r2 = 1.0;
  double r3 = 8.0;
  double outer_radius = 12.0;
  double delta = 0.1;
  double lambda = 4.0;  // two-sided ellipticity bound on the object

  // Radial object: contiguous pieces starting at r2 and ending at or before
  // 2*r2; the object is I from the last piece out to r3. Empty = object I.
  std::vector<RadialPiece> pieces;
  // General object for the grid path only; sampled on r2 <= |x| < 2*r2.
  // Mutually exclusive with pieces.
  std::optional<xform::TensorField> tensor_object;

  double r1() const { return r2 * r2 / r3; }
  void validate() const;
  // Sources must sit between the cloaked device and the outer boundary.
  bool allows_source_radius(double rho) const { return rho > r3 && rho < outer_radius; }
  // The object extended by I out to r3 (and beyond, harmlessly).
  xform::TensorField object_field() const;
};

struct CoefficientSample {
  MatC sigma;
  Region region;
};

// Immutable point sampler for s_delta * A; all methods are thread-safe.
class Medium {
 public:
  explicit Medium(CloakSpec spec);

  const CloakSpec& spec() const { return spec_; }
  Region region_at(double r) const;
  Region region_at(const Vec& x) const { return region_at(x.norm()); }

  // A(x): real symmetric, positive definite everywhere.
  Mat coefficient_a(const Vec& x) const;
  // s_delta(x) * A(x): (-1 + i delta) A on the shell, A elsewhere.
  MatC sigma(const Vec& x) const;
  CoefficientSample sample_coefficient(const Vec& x) const;

  // Max over sampled points of || (G o F)_* core - I ||_F / ||.||_F; detects
  // a core that does not cancel against the shell.
  double complementary_residual(int samples = 256, unsigned seed = 7) const;

 private:
  CloakSpec spec_;
  double core_value_ = 1.0;
  xform::TensorField object_ext_;
  xform::Diffeomorphism shell_map_;  // Kelvin inversion swapping annulus and shell
};

Medium build_cloak(CloakSpec spec);

// Exact layered form of a radial-object cloak. delta = 0 is accepted here
// (the lossless limit) even though CloakSpec itself requires positive loss.
spectral::RadialLayeredMedium exact_medium(const CloakSpec& spec, double delta);
spectral::RadialLayeredMedium exact_medium(const CloakSpec& spec);

// What the cloak is meant to imitate: sigma = I on the whole domain.
spectral::RadialLayeredMedium reference_medium(const CloakSpec& spec);

struct EllipticityReport {
  double min_quotient = 0.0;
  double max_quotient = 0.0;
  bool pass = false;
};

// Rayleigh quotients <b(x) xi, xi> over sampled annulus points and unit
// directions (coordinate axes always included); pass iff every quotient lies
// in [1/lambda - tol, lambda + tol] with tol = 1e-9.
EllipticityReport validate_ellipticity(const xform::TensorField& b, double lambda, double r_in,
                                       double r_out, int samples = 256, unsigned seed = 11);

struct LipschitzReport {
  double l_small = 0.0;  // separation 1e-3 * scale
  double l_large = 0.0;  // separation 1e-2 * scale
  double l = 0.0;        // max of the two
  bool non_lipschitz = false;
};

// Operator-norm difference quotients ||b(x)-b(y)|| / |x-y| at two pair
// separations, probing radially on a scan fine enough to straddle any jump
// plus random points and directions. A quotient that keeps growing as the
// separation shrinks flags the object as non-Lipschitz.
LipschitzReport estimate_lipschitz(const xform::TensorField& b, double r_in, double r_out,
                                   double scale, int samples = 256, unsigned seed = 13);

}  // namespace cloaksim::media

#endif
