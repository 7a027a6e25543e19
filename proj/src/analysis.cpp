#include "cloaksim/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <sstream>

namespace cloaksim::analysis {

using spectral::Layer;
using spectral::LayerCoeffs;
using spectral::ModeIndex;
using spectral::ModeSolution;
using spectral::ModeWeights;
using spectral::RadialBasis;
using spectral::RadialLayeredMedium;
using spectral::RingSource;
using spectral::layer_basis;

namespace {

constexpr double kFaceTol = 1e-12;  // matches the expansion's face-matching tolerance

bool near_face(double a, double b, double scale) {
  return std::abs(a - b) <= kFaceTol * std::max(scale, 1.0);
}

void require_finite_positive(double x, const char* who, const char* what) {
  if (!(x > 0.0) || !std::isfinite(x))
    throw std::runtime_error(std::string(who) + " error: " + what + " must be positive and finite");
}

double guarded_ratio(double num, double denom) {
  return denom > 1e-300 ? num / denom : 0.0;
}

// c / (a^e1 * b^e2) with zero-field guards
double effective_constant(double c, double a, double e1, double b, double e2) {
  double denom = rpow(a, e1) * rpow(b, e2);
  if (denom > 0.0) return c / denom;
  return c > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

}  // namespace

ModeExpansion reflect_through_sphere(const ModeExpansion& e, double R, ReflectSide side,
                                     double outer_cut) {
  require_finite_positive(R, "reflect_through_sphere", "the sphere radius");
  double lo, hi;
  if (side == ReflectSide::inside) {
    lo = e.inner_radius();
    hi = std::min(R, e.outer_radius());
  } else {
    lo = std::max(R, e.inner_radius());
    hi = e.outer_radius();
  }
  // a layer touching the origin reflects to an unbounded one; the cut bounds it
  if (outer_cut > R) lo = std::max(lo, R * R / outer_cut);
  if (!(hi - lo > kFaceTol * std::max(R, 1.0))) {
    throw std::runtime_error(
        "reflect_through_sphere error: the expansion has no content on the chosen side");
  }
  if (lo == 0.0)
    throw std::runtime_error(
        "reflect_through_sphere error: a layer touches the origin; pass a cut radius beyond the "
        "sphere");
  ModeExpansion part = e.restricted(lo, hi);

  const int d = part.dim;
  const int M = int(part.layers.size());
  std::vector<double> faces(M + 1);
  faces[0] = part.layers.front().r_in;
  for (int j = 0; j < M; ++j) faces[j + 1] = part.layers[j].r_out;
  std::vector<double> img(M + 1);
  for (int j = 0; j <= M; ++j) {
    double f = faces[M - j];
    img[j] = near_face(f, R, R) ? R : R * R / f;
  }

  ModeExpansion out;
  out.dim = d;
  out.n_max = part.n_max;
  out.layers.resize(M);
  for (int i = 0; i < M; ++i) {
    const Layer& src = part.layers[M - 1 - i];
    Layer& l = out.layers[i];
    l.r_in = img[i];
    l.r_out = img[i + 1];
    l.omega = -src.omega - 2.0 * (d - 2);
    l.sigma0 = src.sigma0 * rpow(R, 2.0 * src.omega + 2.0 * (d - 2));
  }

  for (const ModeSolution& ms : part.modes) {
    ModeSolution ns;
    ns.mode = ms.mode;
    ns.per_layer.resize(M);
    for (int i = 0; i < M; ++i) {
      const Layer& src = part.layers[M - 1 - i];
      const LayerCoeffs& lc = ms.per_layer[M - 1 - i];
      LayerCoeffs& nc = ns.per_layer[i];
      RadialBasis basis = layer_basis(d, src.omega, ms.mode.n);
      if (basis.log_pair) {
        // {(r/b)^mu, (r/b)^mu ln(r/b)} maps onto the image pair referenced at
        // the image outer face R^2/a, picking up the factor (a/b)^mu
        double F = rpow(src.r_in / src.r_out, basis.mu_plus);
        double lba = std::log(src.r_out / src.r_in);
        nc.p = F * (lc.p - lc.q * lba);
        nc.q = -F * lc.q;
      } else {
        // normalized branches swap exactly: (r/r_out)^{mu+} -> (s/s_in)^{-mu+}
        nc.p = lc.q;
        nc.q = lc.p;
      }
      if (lc.part != complexd(0.0, 0.0)) {
        if (lc.part_logpow != 0)
          throw std::runtime_error(
              "reflect_through_sphere error: cannot reflect a logarithmic source term");
        nc.part = lc.part * rpow(R, 2.0 * lc.part_e);
        nc.part_e = -lc.part_e;
        nc.part_logpow = 0;
      }
    }
    out.modes.push_back(std::move(ns));
  }
  return out;
}

ModeExpansion dilation_image(const ModeExpansion& e, double rho) {
  require_finite_positive(rho, "dilation_image", "the dilation factor");
  ModeExpansion out = e;
  for (Layer& l : out.layers) {
    l.sigma0 *= rpow(rho, 2.0 - e.dim - l.omega);
    l.r_in *= rho;
    l.r_out *= rho;
  }
  // normalized homogeneous coefficients are dilation-invariant; only source
  // terms carry an explicit power of rho
  for (ModeSolution& ms : out.modes)
    for (LayerCoeffs& lc : ms.per_layer)
      if (lc.part != complexd(0.0, 0.0)) {
        if (lc.part_logpow != 0)
          throw std::runtime_error("dilation_image error: cannot rescale a logarithmic source term");
        lc.part *= rpow(rho, -lc.part_e);
      }
  return out;
}

ReflectionPair make_reflection_pair(const ModeExpansion& u_delta, double r2, double r3) {
  require_finite_positive(r2, "make_reflection_pair", "the inner interface radius");
  require_finite_positive(r3, "make_reflection_pair", "the outer interface radius");
  if (!(r2 < r3))
    throw std::runtime_error("make_reflection_pair error: interfaces must be ordered");
  if (u_delta.inner_radius() > kFaceTol * r3)
    throw std::runtime_error("make_reflection_pair error: the field must cover the origin");
  if (u_delta.outer_radius() < r3 * (1.0 - kFaceTol))
    throw std::runtime_error(
        "make_reflection_pair error: the field must reach the outer interface");
  ReflectionPair pair;
  pair.r2 = r2;
  pair.r3 = r3;
  pair.r1 = r2 * r2 / r3;
  pair.u_delta = u_delta;
  // cutting the image at r3 restricts the input to (r1, r2): exactly the shell
  pair.u1 = reflect_through_sphere(u_delta, r2, ReflectSide::inside, r3);
  pair.u2 = dilation_image(u_delta.restricted(0.0, pair.r1), (r3 * r3) / (r2 * r2));
  return pair;
}

complexd growing_coefficient_factor(int dim, int n, double delta) {
  if (dim != 2 && dim != 3)
    throw std::runtime_error("growing_coefficient_factor error: dimension must be 2 or 3");
  if (n < 0) throw std::runtime_error("growing_coefficient_factor error: negative mode degree");
  if (!(delta >= 0.0))
    throw std::runtime_error("growing_coefficient_factor error: the loss parameter must be nonnegative");
  if (n == 0) return complexd(1.0, 0.0);
  complexd one_minus(1.0, -delta);
  if (dim == 2) return complexd(2.0, -delta) / (2.0 * one_minus);
  double m = 2.0 * n + 1.0;
  return complexd(m, -delta * (n + 1.0)) / (m * one_minus);
}

complexd decaying_coefficient_factor(int dim, int n, double delta, double r3) {
  if (dim != 2 && dim != 3)
    throw std::runtime_error("decaying_coefficient_factor error: dimension must be 2 or 3");
  if (n < 0) throw std::runtime_error("decaying_coefficient_factor error: negative mode degree");
  if (!(delta >= 0.0))
    throw std::runtime_error("decaying_coefficient_factor error: the loss parameter must be nonnegative");
  require_finite_positive(r3, "decaying_coefficient_factor", "the interface radius");
  if (n == 0) return complexd(0.0, 0.0);
  complexd one_minus(1.0, -delta);
  if (dim == 2) return complexd(0.0, -delta) * rpow(r3, 2.0 * n) / (2.0 * one_minus);
  double m = 2.0 * n + 1.0;
  return complexd(0.0, -delta * n) * rpow(r3, 2.0 * n + 1.0) / (m * one_minus);
}

namespace {

// Raw coefficients of the two homogeneous branches in a layer, read off the
// global term list. Throws on content that does not match the layer's basis.
struct BranchCoeffs {
  complexd plus{0.0, 0.0}, minus{0.0, 0.0};
};
BranchCoeffs extract_branches(const ModeExpansion& u, const ModeSolution& ms, int layer,
                              const char* who) {
  const Layer& lay = u.layers[layer];
  RadialBasis basis = layer_basis(u.dim, lay.omega, ms.mode.n);
  BranchCoeffs out;
  double tol = 1e-9 * (1.0 + std::abs(basis.mu_plus) + std::abs(basis.mu_minus));
  for (const spectral::RadialTerm& t : u.terms(ms, layer)) {
    if (basis.log_pair && std::abs(t.e - basis.mu_plus) <= tol && t.logpow <= 1) {
      (t.logpow == 0 ? out.plus : out.minus) += t.c;
    } else if (!basis.log_pair && t.logpow == 0 && std::abs(t.e - basis.mu_plus) <= tol) {
      out.plus += t.c;
    } else if (!basis.log_pair && t.logpow == 0 && std::abs(t.e - basis.mu_minus) <= tol) {
      out.minus += t.c;
    } else {
      throw std::runtime_error(std::string(who) +
                               " error: unexpected source content in the matching annulus");
    }
  }
  return out;
}

}  // namespace

CoefficientReport coefficient_relations(const ReflectionPair& pair, double delta, double r3) {
  if (!(delta >= 0.0) || !std::isfinite(delta))
    throw std::runtime_error("coefficient_relations error: the loss parameter must be nonnegative");
  if (!close_rel(r3, pair.r3, 1e-9))
    throw std::runtime_error("coefficient_relations error: inconsistent outer radius");
  const ModeExpansion& u1 = pair.u1;
  const ModeExpansion& u2 = pair.u2;
  const int dim = u1.dim;
  const int j1 = int(u1.layers.size()) - 1;
  const int j2 = int(u2.layers.size()) - 1;
  const Layer& a1 = u1.layers[j1];
  // c, d are only harmonic expansion coefficients if the coefficient is a
  // single constant past 3 r2
  if (a1.omega != 0.0 || a1.r_in > 3.0 * pair.r2 * (1.0 + 1e-9) ||
      !near_face(a1.r_out, r3, r3))
    throw std::runtime_error("coefficient_relations error: the matching annulus is not homogeneous");
  if (u2.layers[j2].omega != 0.0 || !near_face(u2.layers[j2].r_out, r3, r3))
    throw std::runtime_error("coefficient_relations error: the inner image is not homogeneous");

  std::map<ModeIndex, ModeRelation> rows;
  for (const ModeSolution& ms : u1.modes) {
    BranchCoeffs bc = extract_branches(u1, ms, j1, "coefficient_relations");
    ModeRelation& row = rows[ms.mode];
    row.mode = ms.mode;
    row.c = bc.plus;
    row.d = bc.minus;
  }
  for (const ModeSolution& ms : u2.modes) {
    BranchCoeffs bc = extract_branches(u2, ms, j2, "coefficient_relations");
    ModeRelation& row = rows[ms.mode];
    row.mode = ms.mode;
    row.e = bc.plus;
  }

  complexd one_minus(1.0, -delta);
  CoefficientReport rep;
  rep.dim = dim;
  rep.delta = delta;
  rep.r3 = r3;
  for (auto& [m, row] : rows) {
    const ModeSolution* m1 = u1.find_mode(m);
    const ModeSolution* m2 = u2.find_mode(m);
    complexd v1 = m1 ? u1.radial_value_side(*m1, r3, -1) : complexd(0.0, 0.0);
    complexd v2 = m2 ? u2.radial_value_side(*m2, r3, -1) : complexd(0.0, 0.0);
    row.value_residual = guarded_ratio(std::abs(v1 - v2), std::max(std::abs(v1), std::abs(v2)));
    complexd d1 = m1 ? u1.radial_derivative_side(*m1, r3, -1) : complexd(0.0, 0.0);
    complexd d2 = m2 ? u2.radial_derivative_side(*m2, r3, -1) : complexd(0.0, 0.0);
    row.flux_residual = guarded_ratio(std::abs(one_minus * d1 - d2),
                                      std::max(std::abs(one_minus * d1), std::abs(d2)));
    complexd fc = growing_coefficient_factor(dim, m.n, delta) * row.e;
    row.c_residual =
        guarded_ratio(std::abs(row.c - fc), std::max(std::abs(row.c), std::abs(fc)));
    complexd fd = decaying_coefficient_factor(dim, m.n, delta, r3) * row.e;
    RadialBasis basis = layer_basis(dim, 0.0, m.n);
    // anchor the decaying mismatch to the coefficient size that would move the
    // value at r3 by |e| r3^{mu+}, so the residual stays meaningful at delta = 0
    double anchor = std::abs(row.e) * rpow(r3, basis.mu_plus - basis.mu_minus);
    row.d_residual = guarded_ratio(std::abs(row.d - fd),
                                   std::max({std::abs(row.d), std::abs(fd), anchor}));
    rep.rows.push_back(row);
  }
  return rep;
}

ModeExpansion removed_singularity(int dim, const ModeWeights& e_coeffs, double delta, double r3,
                                  double inner_radius, double outer_radius) {
  if (dim != 2 && dim != 3)
    throw std::runtime_error("removed_singularity error: dimension must be 2 or 3");
  if (!(delta >= 0.0) || !std::isfinite(delta))
    throw std::runtime_error("removed_singularity error: the loss parameter must be nonnegative");
  require_finite_positive(r3, "removed_singularity", "the interface radius");
  require_finite_positive(inner_radius, "removed_singularity", "the inner domain radius");
  if (!(outer_radius > inner_radius) || !std::isfinite(outer_radius))
    throw std::runtime_error("removed_singularity error: empty radial domain");

  std::map<ModeIndex, complexd> acc;
  int n_max = 0;
  for (const auto& [m, e] : e_coeffs) {
    if (m.n < 0) throw std::runtime_error("removed_singularity error: negative mode degree");
    n_max = std::max(n_max, m.n);
    if (m.n == 0) continue;  // the decaying sum starts at degree one
    acc[m] += decaying_coefficient_factor(dim, m.n, delta, r3) * e;
  }

  ModeExpansion out;
  out.dim = dim;
  out.n_max = n_max;
  out.layers = {Layer{inner_radius, outer_radius, complexd(1.0, 0.0), 0.0}};
  for (const auto& [m, d] : acc) {
    ModeSolution ms;
    ms.mode = m;
    ms.per_layer.resize(1);
    RadialBasis basis = layer_basis(dim, 0.0, m.n);
    ms.per_layer[0].q = d * rpow(inner_radius, basis.mu_minus);
    out.modes.push_back(std::move(ms));
  }
  return out;
}

namespace {

// refine both operands onto the union of their faces so they can be combined
std::pair<ModeExpansion, ModeExpansion> matched_partitions(const ModeExpansion& a,
                                                           const ModeExpansion& b) {
  std::vector<double> fa, fb;
  for (const Layer& l : a.layers) {
    fa.push_back(l.r_in);
    fa.push_back(l.r_out);
  }
  for (const Layer& l : b.layers) {
    fb.push_back(l.r_in);
    fb.push_back(l.r_out);
  }
  return {a.refined(fb), b.refined(fa)};
}

std::pair<double, double> jump_norms(const ModeExpansion& plus_side, const ModeExpansion& minus_side,
                                     double R) {
  std::map<ModeIndex, std::pair<complexd, complexd>> acc;
  for (const auto& tc : plus_side.trace(R, +1)) {
    acc[tc.mode].first += tc.value;
    acc[tc.mode].second += tc.dvalue;
  }
  for (const auto& tc : minus_side.trace(R, -1)) {
    acc[tc.mode].first -= tc.value;
    acc[tc.mode].second -= tc.dvalue;
  }
  double h = 0.0, hm = 0.0;
  for (const auto& [m, vd] : acc) {
    h += (1.0 + m.n) * std::norm(vd.first);
    hm += std::norm(vd.second) / (1.0 + m.n);
  }
  return {std::sqrt(h), std::sqrt(hm)};
}

}  // namespace

complexd PatchedField::value_at(const Vec& x) const {
  double r = x.norm();
  if (r < r_inner) return inner.value_at(x);
  if (r < r_outer) return middle.value_at(x);
  return outer.value_at(x);
}

PatchedField assemble_W(const ModeExpansion& u_delta, const ModeExpansion& u_hat,
                        const ModeExpansion& u2) {
  PatchedField W;
  W.r_outer = u2.outer_radius();
  W.r_inner = u_hat.inner_radius();
  double scale = std::max(W.r_outer, 1.0);
  if (!(W.r_inner < W.r_outer - kFaceTol * scale))
    throw std::runtime_error("assemble_W error: the removal annulus is empty");
  if (!(u_delta.outer_radius() > W.r_outer + kFaceTol * scale))
    throw std::runtime_error("assemble_W error: the exterior piece is empty");
  if (u_hat.outer_radius() < W.r_outer * (1.0 - kFaceTol))
    throw std::runtime_error(
        "assemble_W error: the decaying piece does not reach the outer interface");

  W.outer = u_delta.restricted(W.r_outer, u_delta.outer_radius());
  auto [mid_a, mid_b] = matched_partitions(u_delta.restricted(W.r_inner, W.r_outer),
                                           u_hat.restricted(W.r_inner, W.r_outer));
  W.middle = ModeExpansion::linear_combination(complexd(1.0, 0.0), mid_a, complexd(-1.0, 0.0),
                                               mid_b);
  W.inner = u2.restricted(u2.inner_radius(), W.r_inner);

  std::tie(W.jump_h_half_outer, W.jump_h_minus_half_outer) =
      jump_norms(W.outer, W.middle, W.r_outer);
  std::tie(W.jump_h_half_inner, W.jump_h_minus_half_inner) =
      jump_norms(W.middle, W.inner, W.r_inner);
  return W;
}

RadialLayeredMedium interior_extension(const media::CloakSpec& spec, int steps) {
  spec.validate();
  if (spec.tensor_object)
    throw std::runtime_error("interior_extension error: tensor objects are not supported");
  if (steps < 1) throw std::runtime_error("interior_extension error: need at least one step");
  double beta0 = spec.pieces.empty() ? 1.0 : spec.pieces.front().beta;
  RadialLayeredMedium med;
  med.dim = spec.dim;
  for (int j = 0; j < steps; ++j) {
    double lo = spec.r2 * (double(j) / steps);
    double hi = spec.r2 * (double(j + 1) / steps);
    // midpoint sample of the linear ramp from 1 at the origin to beta0 at r2
    double s = 1.0 + (beta0 - 1.0) * ((j + 0.5) / steps);
    med.layers.push_back(Layer{lo, hi, complexd(s, 0.0), 0.0});
  }
  // the object extended by I out to r3, tiled exactly as the exact cloak medium
  std::vector<media::RadialPiece> ext = spec.pieces;
  if (ext.empty() || ext.back().r_out < spec.r3) {
    const double from = ext.empty() ? spec.r2 : ext.back().r_out;
    ext.push_back({from, spec.r3, 1.0});
  }
  for (const media::RadialPiece& p : ext)
    med.layers.push_back(Layer{p.r_in, p.r_out, complexd(p.beta, 0.0), 0.0});
  med.validate();
  return med;
}

ProofDecomposition auxiliary_decomposition(const ModeExpansion& u_delta,
                                           const media::CloakSpec& spec,
                                           const RadialLayeredMedium& extension, int threads) {
  spec.validate();
  if (extension.dim != u_delta.dim || extension.dim != spec.dim)
    throw std::runtime_error("auxiliary_decomposition error: dimension mismatch");
  if (!close_rel(extension.outer_radius(), spec.r3, 1e-9))
    throw std::runtime_error(
        "auxiliary_decomposition error: the extension medium must end at the outer interface");
  const double r2 = spec.r2, r3 = spec.r3, delta = spec.delta;

  ReflectionPair pair = make_reflection_pair(u_delta, r2, r3);
  ModeExpansion u_ann = u_delta.restricted(r2, r3);
  ModeExpansion U_ann = ModeExpansion::linear_combination(complexd(1.0, 0.0), u_ann,
                                                          complexd(-1.0, 0.0), pair.u1);

  // align annulus layers with the extension's partition; inside r2 the field is zero
  std::vector<int> src(extension.layers.size(), -1);
  for (size_t j = 0; j < extension.layers.size(); ++j) {
    const Layer& el = extension.layers[j];
    if (el.r_out <= r2 * (1.0 + kFaceTol)) continue;
    int found = -1;
    for (size_t k = 0; k < U_ann.layers.size(); ++k)
      if (near_face(U_ann.layers[k].r_in, el.r_in, r3) &&
          near_face(U_ann.layers[k].r_out, el.r_out, r3) && U_ann.layers[k].omega == el.omega)
        found = int(k);
    if (found < 0)
      throw std::runtime_error(
          "auxiliary_decomposition error: the extension does not match the object layers");
    src[j] = found;
  }

  ProofDecomposition pd;
  pd.U.dim = u_delta.dim;
  pd.U.n_max = u_delta.n_max;
  pd.U.layers = extension.layers;
  for (const ModeSolution& ms : U_ann.modes) {
    ModeSolution ns;
    ns.mode = ms.mode;
    ns.per_layer.resize(extension.layers.size());
    for (size_t j = 0; j < extension.layers.size(); ++j) {
      if (src[j] < 0) continue;
      const LayerCoeffs& lc = ms.per_layer[src[j]];
      if (lc.part != complexd(0.0, 0.0))
        throw std::runtime_error(
            "auxiliary_decomposition error: unexpected source content between the interfaces");
      ns.per_layer[j] = lc;
    }
    pd.U.modes.push_back(std::move(ns));
  }

  complexd factor = complexd(0.0, -delta) / complexd(1.0, -delta);
  for (const ModeSolution& ms : u_delta.modes)
    pd.ring_data.push_back({ms.mode, factor * u_delta.radial_sigma_flux_side(ms, r2, +1)});
  double gsq = 0.0;
  for (const auto& [m, g] : pd.ring_data) gsq += std::norm(g) / (1.0 + m.n);
  pd.ring_data_h_minus_half = std::sqrt(gsq);

  pd.w = spectral::solve_field(extension, {RingSource{r2, pd.ring_data}}, u_delta.n_max, threads)
             .field;
  pd.V = ModeExpansion::linear_combination(complexd(1.0, 0.0), pd.U, complexd(-1.0, 0.0), pd.w);

  for (const ModeSolution& ms : pd.U.modes)
    pd.value_jump_r2 =
        std::max(pd.value_jump_r2, std::abs(pd.U.radial_value_side(ms, r2, +1) -
                                            pd.U.radial_value_side(ms, r2, -1)));
  pd.v_residual = spectral::weak_residual(extension, pd.V, {});
  return pd;
}

ProofDecomposition build_proof_decomposition(const ModeExpansion& u_delta,
                                             const media::CloakSpec& spec, int extension_steps,
                                             int threads) {
  if (!(spec.r3 > 3.0 * spec.r2))
    throw std::runtime_error(
        "build_proof_decomposition error: the removal annulus is empty (needs r3 > 3 r2)");
  RadialLayeredMedium ext = interior_extension(spec, extension_steps);
  ProofDecomposition pd = auxiliary_decomposition(u_delta, spec, ext, threads);

  ReflectionPair pair = make_reflection_pair(u_delta, spec.r2, spec.r3);
  CoefficientReport rep = coefficient_relations(pair, spec.delta, spec.r3);
  ModeWeights e_coeffs;
  for (const ModeRelation& row : rep.rows) e_coeffs.push_back({row.mode, row.e});
  pd.u_hat = removed_singularity(spec.dim, e_coeffs, spec.delta, spec.r3, 3.0 * spec.r2,
                                 u_delta.outer_radius());
  pd.W = assemble_W(u_delta, pd.u_hat, pair.u2);
  return pd;
}

ResonanceProfile resonance_profile(const ModeExpansion& u,
                                   const std::vector<std::pair<double, double>>& annuli,
                                   double delta, double shell_r_in, double shell_r_out) {
  if (!(delta >= 0.0) || !std::isfinite(delta))
    throw std::runtime_error("resonance_profile error: the loss parameter must be nonnegative");
  if (!(0.0 <= shell_r_in && shell_r_in < shell_r_out))
    throw std::runtime_error("resonance_profile error: bad shell interval");
  ResonanceProfile prof;
  prof.delta = delta;
  prof.shell_energy = delta * u.h1_semi_annulus_sq(shell_r_in, shell_r_out);
  for (auto [a, b] : annuli) {
    if (!(0.0 <= a && a < b))
      throw std::runtime_error("resonance_profile error: bad annulus interval");
    AnnulusNorms row;
    row.r_in = a;
    row.r_out = b;
    row.l2 = std::sqrt(u.l2_annulus_sq(a, b));
    row.h1_semi = std::sqrt(u.h1_semi_annulus_sq(a, b));
    prof.rows.push_back(row);
  }
  return prof;
}

ResonanceFlag localized_resonance(const ResonanceProfile& coarse, const ResonanceProfile& fine,
                                  double boundary_radius) {
  require_finite_positive(boundary_radius, "localized_resonance", "the boundary radius");
  if (coarse.rows.size() != fine.rows.size())
    throw std::runtime_error("localized_resonance error: profiles cover different annuli");
  for (size_t i = 0; i < coarse.rows.size(); ++i)
    if (!close_rel(coarse.rows[i].r_in, fine.rows[i].r_in, 1e-9) ||
        !close_rel(coarse.rows[i].r_out, fine.rows[i].r_out, 1e-9))
      throw std::runtime_error("localized_resonance error: profiles cover different annuli");
  if (!(fine.delta < coarse.delta))
    throw std::runtime_error("localized_resonance error: profiles are not ordered by loss");

  double ci = 0.0, fi = 0.0;                          // interior gradient energy
  double cl = 0.0, fl = 0.0, ch = 0.0, fh = 0.0;      // exterior L2 / gradient energy
  bool any_int = false, any_ext = false;
  for (size_t i = 0; i < coarse.rows.size(); ++i) {
    const AnnulusNorms& c = coarse.rows[i];
    const AnnulusNorms& f = fine.rows[i];
    if (c.r_out <= boundary_radius * (1.0 + 1e-12)) {
      any_int = true;
      ci += c.h1_semi * c.h1_semi;
      fi += f.h1_semi * f.h1_semi;
    } else if (c.r_in >= boundary_radius * (1.0 - 1e-12)) {
      any_ext = true;
      cl += c.l2 * c.l2;
      fl += f.l2 * f.l2;
      ch += c.h1_semi * c.h1_semi;
      fh += f.h1_semi * f.h1_semi;
    }
  }
  if (!any_int || !any_ext)
    throw std::runtime_error(
        "localized_resonance error: need annuli on both sides of the boundary");

  ResonanceFlag flag;
  flag.interior_growth = std::sqrt(guarded_ratio(fi, std::max(ci, 1e-300)));
  double dl = std::abs(std::sqrt(fl) - std::sqrt(cl)) / std::max(std::sqrt(cl), 1e-300);
  double dh = std::abs(std::sqrt(fh) - std::sqrt(ch)) / std::max(std::sqrt(ch), 1e-300);
  flag.exterior_change = std::max(dl, dh);
  flag.flagged = flag.interior_growth >= 10.0 && flag.exterior_change <= 0.1;
  return flag;
}

ThreeSpheresReport three_spheres_report(const ModeExpansion& v, double R1, double R2, double R3,
                                        double alpha, double residual_tol) {
  require_finite_positive(R1, "three_spheres_report", "the first radius");
  if (!(R1 < R2 && R2 < R3) || !std::isfinite(R3))
    throw std::runtime_error("three_spheres_report error: radii must be ordered");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::runtime_error("three_spheres_report error: the exponent must lie in (0, 1)");
  if (R3 > v.outer_radius() * (1.0 + 1e-9))
    throw std::runtime_error("three_spheres_report error: the field does not reach the largest radius");
  if (v.inner_radius() >= R1)
    throw std::runtime_error(
        "three_spheres_report error: the smallest radius lies inside the field's inner hole");

  double r3c = std::min(R3, v.outer_radius());
  ModeExpansion vr = v.restricted(v.inner_radius(), r3c);
  RadialLayeredMedium med;
  med.dim = vr.dim;
  med.layers = vr.layers;
  double resid = spectral::weak_residual(med, vr, {}).max_rel_residual;
  if (resid > residual_tol) {
    std::ostringstream os;
    os << "three_spheres_report error: the field does not satisfy its radial equation (residual "
       << resid << ")";
    throw std::runtime_error(os.str());
  }

  ThreeSpheresReport rep;
  rep.alpha = alpha;
  rep.l2_r1 = std::sqrt(vr.l2_annulus_sq(vr.inner_radius(), R1));
  rep.l2_r2 = std::sqrt(vr.l2_annulus_sq(vr.inner_radius(), R2));
  rep.l2_r3 = std::sqrt(vr.l2_annulus_sq(vr.inner_radius(), r3c));
  rep.c_eff = effective_constant(rep.l2_r2, rep.l2_r1, alpha, rep.l2_r3, 1.0 - alpha);
  rep.gamma = std::log(R3 / (4.0 * R2)) / std::log(R3 / R2);
  rep.lambda = std::log(R3 / R2) / std::log(R3 / R1);
  rep.lambda_reciprocal = std::log(R3 / R1) / std::log(R3 / R2);
  rep.n_r1 = std::sqrt(vr.branch_norm_sq(R1));
  rep.n_r2 = std::sqrt(vr.branch_norm_sq(R2));
  rep.n_r3 = std::sqrt(vr.branch_norm_sq(r3c));
  rep.c_eff_modal = effective_constant(rep.n_r2, rep.n_r1, rep.lambda, rep.n_r3, 1.0 - rep.lambda);
  rep.c_eff_modal_reciprocal = effective_constant(rep.n_r2, rep.n_r1, rep.lambda_reciprocal,
                                                  rep.n_r3, 1.0 - rep.lambda_reciprocal);
  return rep;
}

CombinedExponents combined_exponents(double beta, double gamma) {
  if (!(beta > 0.0 && beta < 1.0) || !(gamma > 0.0 && gamma < 1.0))
    throw std::runtime_error("combined_exponents error: exponents must lie in (0, 1)");
  double denom = 1.0 - gamma * (1.0 - beta);
  CombinedExponents e;
  e.inner_exponent = beta / denom;
  e.outer_exponent = (1.0 - beta) * (1.0 - gamma) / denom;
  return e;
}

ModeExpansion random_harmonic(int dim, int n_max, double r_in, double r_out, unsigned seed,
                              bool include_decaying) {
  if (dim != 2 && dim != 3)
    throw std::runtime_error("random_harmonic error: dimension must be 2 or 3");
  if (n_max < 0) throw std::runtime_error("random_harmonic error: negative mode degree");
  if (!(r_in >= 0.0 && r_in < r_out) || !std::isfinite(r_out))
    throw std::runtime_error("random_harmonic error: bad radial domain");

  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> coef(-1.0, 1.0);
  ModeExpansion out;
  out.dim = dim;
  out.n_max = n_max;
  out.layers = {Layer{r_in, r_out, complexd(1.0, 0.0), 0.0}};
  auto add_mode = [&](int n, int k) {
    ModeSolution ms;
    ms.mode = {n, k};
    ms.per_layer.resize(1);
    ms.per_layer[0].p = complexd(coef(gen), coef(gen));
    if (include_decaying && r_in > 0.0 && !(dim == 2 && n == 0))
      ms.per_layer[0].q = complexd(coef(gen), coef(gen));
    out.modes.push_back(std::move(ms));
  };
  for (int n = 0; n <= n_max; ++n) {
    if (dim == 2) {
      add_mode(n, 1);
      if (n > 0) add_mode(n, -1);
    } else {
      for (int k = -n; k <= n; ++k) add_mode(n, k);
    }
  }
  return out;
}

}  // namespace cloaksim::analysis
