#include "cloaksim/media.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <utility>

namespace cloaksim::media {

namespace {

Vec random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> nd;
  Vec u(dim);
  double n = 0.0;
  do {
    for (int i = 0; i < dim; ++i) u[i] = nd(rng);
    n = u.norm();
  } while (n < 1e-6);
  return u / n;
}

double operator_norm(const Mat& m) {
  // closed-form 2x2/3x3 eigenvalues; the iterative path is unnecessary here
  if (m.rows() == 2) {
    Eigen::Matrix2d s = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es;
    es.computeDirect(s);
    return es.eigenvalues().cwiseAbs().maxCoeff();
  }
  Eigen::Matrix3d s = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es;
  es.computeDirect(s);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

const char* region_name(Region r) {
  switch (r) {
    case Region::core:
      return "core";
    case Region::negative_shell:
      return "negative-shell";
    case Region::cloaked:
      return "cloaked";
    case Region::exterior:
      return "exterior";
  }
  return "unknown";
}

void CloakSpec::validate() const {
  if (dim != 2 && dim != 3) throw std::runtime_error("CloakSpec error: dimension must be 2 or 3");
  if (!(r2 > 0.0) || !(r3 > r2) || !(outer_radius > r3))
    throw std::runtime_error("CloakSpec error: radii must satisfy 0 < r2 < r3 < outer radius");
  // the object annulus reaches 2*r2 and must fit strictly inside B_r3
  if (!(r3 > 2.0 * r2))
    throw std::runtime_error("CloakSpec error: r3 must exceed 2*r2");
  if (!(delta > 0.0) || !std::isfinite(delta))
    throw std::runtime_error("CloakSpec error: loss delta must be positive");
  if (!(lambda >= 1.0))
    throw std::runtime_error("CloakSpec error: ellipticity bound must be at least 1");
  if (!pieces.empty() && tensor_object)
    throw std::runtime_error(
        "CloakSpec error: give the object as radial pieces or as a tensor field, not both");
  const double tol = 1e-12 * r2;
  double cursor = r2;
  for (const RadialPiece& p : pieces) {
    if (std::abs(p.r_in - cursor) > tol)
      throw std::runtime_error("CloakSpec error: object pieces must tile outward from r2 without gaps");
    if (!(p.r_out > p.r_in))
      throw std::runtime_error("CloakSpec error: object piece has nonpositive width");
    if (!(p.beta >= 1.0 / lambda - 1e-9) || !(p.beta <= lambda + 1e-9))
      throw std::runtime_error("CloakSpec error: object piece violates the ellipticity bound");
    cursor = p.r_out;
  }
  if (cursor > 2.0 * r2 + tol)
    throw std::runtime_error("CloakSpec error: object pieces must end at or before 2*r2");
}

xform::TensorField CloakSpec::object_field() const {
  if (tensor_object) {
    xform::TensorField inner = *tensor_object;
    const double two_r2 = 2.0 * r2;
    const int d = dim;
    return {d, [inner, two_r2, d](const Vec& x) {
              return x.norm() < two_r2 ? inner.eval(x) : Mat(Mat::Identity(d, d));
            }};
  }
  std::vector<RadialPiece> ps = pieces;
  return xform::TensorField::radial_isotropic(dim, [ps](double r) {
    for (const RadialPiece& p : ps)
      if (r >= p.r_in && r < p.r_out) return p.beta;
    return 1.0;
  });
}

Medium::Medium(CloakSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  core_value_ = std::pow(spec_.r3 * spec_.r3 / (spec_.r2 * spec_.r2), spec_.dim - 2);
  object_ext_ = spec_.object_field();
  shell_map_ = xform::Diffeomorphism::kelvin(spec_.r2);
}

Region Medium::region_at(double r) const {
  if (!(r >= 0.0) || !std::isfinite(r)) throw std::domain_error("Medium error: invalid radius");
  if (r < spec_.r1()) return Region::core;
  if (r < spec_.r2) return Region::negative_shell;
  if (r < spec_.r3) return Region::cloaked;
  return Region::exterior;
}

Mat Medium::coefficient_a(const Vec& x) const {
  const double r = x.norm();
  if (!(r < spec_.outer_radius))
    throw std::domain_error("Medium error: sample point outside the domain");
  switch (region_at(r)) {
    case Region::core:
      return core_value_ * Mat::Identity(spec_.dim, spec_.dim);
    case Region::negative_shell:
      return xform::pushforward(object_ext_, shell_map_, x);
    case Region::cloaked:
      return object_ext_.eval(x);
    case Region::exterior:
      break;
  }
  return Mat::Identity(spec_.dim, spec_.dim);
}

MatC Medium::sigma(const Vec& x) const { return sample_coefficient(x).sigma; }

CoefficientSample Medium::sample_coefficient(const Vec& x) const {
  const Region reg = region_at(x.norm());
  MatC s = coefficient_a(x).cast<complexd>();
  if (reg == Region::negative_shell) s *= complexd(-1.0, spec_.delta);
  return {std::move(s), reg};
}

double Medium::complementary_residual(int samples, unsigned seed) const {
  auto core = xform::TensorField::isotropic_constant(spec_.dim, core_value_);
  auto F = xform::Diffeomorphism::kelvin(spec_.r2);
  auto G = xform::Diffeomorphism::kelvin(spec_.r3);
  return xform::verify_complementary_identity(core, F, G, spec_.r3, samples, seed);
}

Medium build_cloak(CloakSpec spec) { return Medium(std::move(spec)); }

spectral::RadialLayeredMedium exact_medium(const CloakSpec& spec, double delta) {
  spec.validate();
  if (spec.tensor_object)
    throw std::runtime_error(
        "exact_medium error: a general tensor object has no exact layered form; use the grid path");
  if (!(delta >= 0.0) || !std::isfinite(delta))
    throw std::runtime_error("exact_medium error: loss must be finite and nonnegative");
  const int d = spec.dim;
  const double r2 = spec.r2, r3 = spec.r3;

  // object pieces extended by I out to r3, tiling [r2, r3]
  std::vector<RadialPiece> ext = spec.pieces;
  if (ext.empty() || ext.back().r_out < r3) {
    const double from = ext.empty() ? r2 : ext.back().r_out;
    ext.push_back({from, r3, 1.0});
  }

  std::vector<double> faces(ext.size() + 1);
  faces[0] = r2;
  for (size_t i = 0; i < ext.size(); ++i) faces[i + 1] = ext[i].r_out;
  // Kelvin images of the faces, pinned to the exact shell endpoints so the
  // layer list stays contiguous to the last bit
  std::vector<double> img(faces.size());
  for (size_t i = 0; i < faces.size(); ++i) img[i] = r2 * r2 / faces[i];
  img.front() = r2;
  img.back() = spec.r1();

  const complexd s_delta(-1.0, delta);
  const double img_scale = d == 3 ? r2 * r2 : 1.0;
  const double img_omega = d == 3 ? -2.0 : 0.0;

  spectral::RadialLayeredMedium med;
  med.dim = d;
  med.layers.push_back(
      {0.0, spec.r1(), complexd(std::pow(r3 * r3 / (r2 * r2), d - 2), 0.0), 0.0});
  for (size_t i = ext.size(); i-- > 0;)
    med.layers.push_back({img[i + 1], img[i], s_delta * (ext[i].beta * img_scale), img_omega});
  for (const RadialPiece& p : ext)
    med.layers.push_back({p.r_in, p.r_out, complexd(p.beta, 0.0), 0.0});
  med.layers.push_back({r3, spec.outer_radius, complexd(1.0, 0.0), 0.0});
  med.validate();
  return med;
}

spectral::RadialLayeredMedium exact_medium(const CloakSpec& spec) {
  return exact_medium(spec, spec.delta);
}

spectral::RadialLayeredMedium reference_medium(const CloakSpec& spec) {
  spec.validate();
  return spectral::RadialLayeredMedium::homogeneous(spec.dim, spec.outer_radius);
}

EllipticityReport validate_ellipticity(const xform::TensorField& b, double lambda, double r_in,
                                       double r_out, int samples, unsigned seed) {
  if (!(lambda >= 1.0))
    throw std::runtime_error("validate_ellipticity error: lambda must be at least 1");
  if (!(r_in >= 0.0) || !(r_out > r_in))
    throw std::runtime_error("validate_ellipticity error: bad annulus radii");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ur(r_in, r_out);
  const int d = b.dim;
  EllipticityReport rep;
  rep.min_quotient = std::numeric_limits<double>::infinity();
  rep.max_quotient = -rep.min_quotient;
  for (int s = 0; s < samples; ++s) {
    Vec x = ur(rng) * random_unit(rng, d);
    Mat a = b.eval(x);
    std::vector<Vec> dirs;
    for (int i = 0; i < d; ++i) dirs.push_back(Vec::Unit(d, i));
    for (int i = 0; i < 4; ++i) dirs.push_back(random_unit(rng, d));
    for (const Vec& xi : dirs) {
      const double q = xi.dot(a * xi);
      rep.min_quotient = std::min(rep.min_quotient, q);
      rep.max_quotient = std::max(rep.max_quotient, q);
    }
  }
  rep.pass = rep.min_quotient >= 1.0 / lambda - 1e-9 && rep.max_quotient <= lambda + 1e-9;
  return rep;
}

LipschitzReport estimate_lipschitz(const xform::TensorField& b, double r_in, double r_out,
                                   double scale, int samples, unsigned seed) {
  if (!(scale > 0.0) || !(r_in >= 0.0) || !(r_out > r_in))
    throw std::runtime_error("estimate_lipschitz error: bad annulus or length scale");
  const int d = b.dim;
  const double seps[2] = {1e-3 * scale, 1e-2 * scale};
  if (!(r_out - r_in > seps[1]))
    throw std::runtime_error("estimate_lipschitz error: annulus narrower than the probe separation");
  double l_of[2] = {0.0, 0.0};
  std::mt19937_64 rng(seed);

  auto quotient = [&](const Vec& x, const Vec& y) {
    return operator_norm(b.eval(x) - b.eval(y)) / (x - y).norm();
  };

  // radial scan with step <= the smallest separation, so probe intervals
  // cover every radius and any jump is straddled at both separations
  const double step = seps[0];
  const int nscan = int(std::min(200000.0, std::ceil((r_out - r_in) / step))) + 1;
  for (int i = 0; i < nscan; ++i) {
    const double r = r_in + i * (r_out - r_in - seps[1]) / std::max(1, nscan - 1);
    const Vec u = random_unit(rng, d);
    for (int s = 0; s < 2; ++s) {
      if (r + seps[s] > r_out) continue;
      l_of[s] = std::max(l_of[s], quotient(r * u, (r + seps[s]) * u));
    }
  }

  std::uniform_real_distribution<double> ur(r_in, r_out - seps[1]);
  for (int i = 0; i < samples; ++i) {
    const Vec x = ur(rng) * random_unit(rng, d);
    std::vector<Vec> dirs;
    dirs.push_back(x.norm() > 0.0 ? Vec(x / x.norm()) : random_unit(rng, d));
    for (int j = 0; j < d; ++j) dirs.push_back(Vec::Unit(d, j));
    for (int j = 0; j < 3; ++j) dirs.push_back(random_unit(rng, d));
    for (const Vec& u : dirs)
      for (int s = 0; s < 2; ++s) {
        const Vec y = x + seps[s] * u;
        const double ry = y.norm();
        if (ry <= r_in || ry >= r_out) continue;
        l_of[s] = std::max(l_of[s], quotient(x, y));
      }
  }

  LipschitzReport rep;
  rep.l_small = l_of[0];
  rep.l_large = l_of[1];
  rep.l = std::max(rep.l_small, rep.l_large);
  rep.non_lipschitz = rep.l_small > 3.0 * rep.l_large + 1e-12;
  return rep;
}

}  // namespace cloaksim::media
