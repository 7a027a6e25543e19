// Exact per-mode solver for div(sigma(|x|) grad u) = f on a disk or ball with
// a homogeneous Dirichlet boundary. sigma is a radial layered coefficient,
// each layer a power law sigma0 * r^omega (omega = 0 is the plain
// piecewise-constant case; omega = -2 arises from 3D Kelvin images of
// constant layers). Sources are distributional rings and constant-density
// annuli given per angular mode, so each mode reduces to a two-point
// boundary-value problem solved in closed form.

#ifndef CLOAKSIM_SPECTRAL_HPP
#define CLOAKSIM_SPECTRAL_HPP

#include <array>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "cloaksim/common.hpp"

namespace cloaksim::spectral {

struct Layer {
  double r_in = 0.0;
  double r_out = 0.0;
  complexd sigma0{1.0, 0.0};
  double omega = 0.0;
};

struct RadialLayeredMedium {
  int dim = 2;
  std::vector<Layer> layers;  // contiguous, first r_in == 0, last r_out == domain radius

  double outer_radius() const { return layers.back().r_out; }
  void validate() const;
  int layer_at(double r) const;
  complexd sigma_at(double r) const;

  static RadialLayeredMedium homogeneous(int dim, double R, complexd sigma = complexd(1.0, 0.0));
};

// 2D: k in {+1,-1} selects e^{+i n theta} / e^{-i n theta}; n = 0 uses k = +1.
// 3D: k is the real spherical harmonic order, |k| <= n.
struct ModeIndex {
  int n = 0;
  int k = 1;
  friend bool operator==(const ModeIndex& a, const ModeIndex& b) { return a.n == b.n && a.k == b.k; }
  friend bool operator<(const ModeIndex& a, const ModeIndex& b) {
    return a.n != b.n ? a.n < b.n : a.k < b.k;
  }
};

using ModeWeights = std::vector<std::pair<ModeIndex, complexd>>;

// f = sum_m g_m * (angular basis_m) * (surface delta at |x| = radius)
struct RingSource {
  double radius = 0.0;
  ModeWeights weights;
};

// f = sum_m c_m * (angular basis_m) on the annulus r_in < |x| < r_out
struct AnnulusSource {
  double r_in = 0.0, r_out = 0.0;
  ModeWeights densities;
};

using ModalSource = std::variant<RingSource, AnnulusSource>;

// Indicial roots of the layer's modal Euler equation. log_pair means the
// roots collide and the basis is {r^mu, r^mu ln r} (2D n = 0 in particular).
struct RadialBasis {
  double mu_plus = 0.0, mu_minus = 0.0;
  bool log_pair = false;
};
RadialBasis layer_basis(int dim, double omega, int n);

// c * r^e * (ln r)^logpow
struct RadialTerm {
  complexd c;
  double e = 0.0;
  int logpow = 0;
};

struct LayerCoeffs {
  complexd p{0.0, 0.0}, q{0.0, 0.0};
  complexd part{0.0, 0.0};
  double part_e = 0.0;
  int part_logpow = 0;
};

struct ModeSolution {
  ModeIndex mode;
  std::vector<LayerCoeffs> per_layer;
};

struct SolveDiagnostics {
  double max_condition = 1.0;
  double max_residual = 0.0;
  ModeIndex worst_mode{};
  int modes_dropped = 0;  // source content above n_max
  std::string warning;
};

class ModeExpansion {
 public:
  int dim = 2;
  int n_max = 0;
  std::vector<Layer> layers;
  std::vector<ModeSolution> modes;

  double inner_radius() const { return layers.front().r_in; }
  double outer_radius() const { return layers.back().r_out; }
  int layer_at(double r) const;
  const ModeSolution* find_mode(ModeIndex m) const;

  std::vector<RadialTerm> terms(const ModeSolution& ms, int layer) const;
  complexd radial_value(const ModeSolution& ms, double r) const;
  complexd radial_derivative(const ModeSolution& ms, double r) const;
  complexd radial_sigma_flux(const ModeSolution& ms, double r) const;  // sigma(r) u'(r)

  // one-sided variants for evaluation exactly on a face
  complexd radial_value_side(const ModeSolution& ms, double r, int side) const;  // side -1 inner, +1 outer
  complexd radial_derivative_side(const ModeSolution& ms, double r, int side) const;
  complexd radial_sigma_flux_side(const ModeSolution& ms, double r, int side) const;

  complexd value_at(const Vec& x) const;
  Eigen::VectorXcd gradient_at(const Vec& x) const;

  ModeExpansion restricted(double a, double b) const;
  ModeExpansion refined(std::vector<double> faces) const;
  // c1*A + c2*B; partitions and layer laws must agree on the common domain.
  static ModeExpansion linear_combination(complexd c1, const ModeExpansion& A, complexd c2,
                                          const ModeExpansion& B);

  double l2_ball_sq(double R) const;
  double l2_annulus_sq(double a, double b) const;
  double h1_semi_annulus_sq(double a, double b) const;
  // sum over layers of weight(layer) * int r^{omega_w(layer)} |grad u|^2; used
  // for sigma- and A-weighted energies.
  complexd weighted_grad_pairing(double a, double b,
                                 std::function<std::pair<complexd, double>(int)> weight) const;

  struct TraceCoef {
    ModeIndex mode;
    complexd value, dvalue, sflux;
  };
  std::vector<TraceCoef> trace(double R, int side = -1) const;

  double trace_h_half_sq(double R, int side = -1) const;
  double trace_h_minus_half_sq(double R, int side = -1) const;
  // modal frequency function: sum (1+n)(|p|^2 r^{2 mu+} + |q|^2 r^{2 mu-})
  double branch_norm_sq(double r) const;

  std::string to_json() const;
  static ModeExpansion from_json(const std::string& text);
};

struct SolveResult {
  ModeExpansion field;
  SolveDiagnostics diag;
};

// Per-mode interface matrix mapping inner-layer (p, q) to outer-layer (p, q)
// via continuity of the value and of sigma * u' at radius rho.
Eigen::Matrix2cd interface_matrix(const Layer& inner, const Layer& outer, int dim, int n,
                                  double rho);

SolveResult solve_field(const RadialLayeredMedium& med, const std::vector<ModalSource>& sources,
                        int n_max, int threads = 0);

struct WeakResidualReport {
  double max_rel_residual = 0.0;      // against piecewise-linear radial test functions
  double pairing_residual = 0.0;      // |int sigma grad u . grad conj(u) + int f conj(u)| relative
  double energy_residual = 0.0;       // imaginary part of the same pairing, relative
  complexd sigma_grad_pairing{0.0, 0.0};
  complexd source_pairing{0.0, 0.0};  // int f conj(u)
};
WeakResidualReport weak_residual(const RadialLayeredMedium& med, const ModeExpansion& u,
                                 const std::vector<ModalSource>& sources);

// int_a^b r^w ln^l r dr with the exact w = -1 branches; series fallback near w = -1.
double power_log_integral(double a, double b, double w, int l);

// Real orthonormal spherical harmonics and their angular derivatives.
double real_sph_harm(int n, int k, double theta, double phi);
void real_sph_harm_grad(int n, int k, double theta, double phi, double& dtheta,
                        double& dphi_over_sin);

int threads_from_env();

}  // namespace cloaksim::spectral

#endif
