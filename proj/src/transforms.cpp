#include "cloaksim/transforms.hpp"

#include <random>

namespace cloaksim::xform {

TensorField TensorField::isotropic_constant(int dim, double value) {
  return TensorField{dim, [dim, value](const Vec&) -> Mat {
                       return value * Mat::Identity(dim, dim);
                     }};
}

TensorField TensorField::radial_isotropic(int dim, std::function<double(double)> profile) {
  return TensorField{dim, [dim, profile](const Vec& x) -> Mat {
                       return profile(x.norm()) * Mat::Identity(dim, dim);
                     }};
}

Diffeomorphism Diffeomorphism::kelvin(double R) {
  return kelvin(R, 0.0, std::numeric_limits<double>::infinity());
}

Diffeomorphism Diffeomorphism::kelvin(double R, double domain_inner, double domain_outer) {
  if (!(R > 0.0)) throw std::runtime_error("Diffeomorphism error: kelvin radius must be positive");
  Diffeomorphism t;
  t.chain_.push_back({Prim::Kelvin, R});
  t.dom_in_ = domain_inner;
  t.dom_out_ = domain_outer;
  t.scale_ = R;
  return t;
}

Diffeomorphism Diffeomorphism::dilation(double rho) {
  return dilation(rho, 0.0, std::numeric_limits<double>::infinity());
}

Diffeomorphism Diffeomorphism::dilation(double rho, double domain_inner, double domain_outer) {
  if (!(rho > 0.0)) throw std::runtime_error("Diffeomorphism error: dilation factor must be positive");
  Diffeomorphism t;
  t.chain_.push_back({Prim::Dilation, rho});
  t.dom_in_ = domain_inner;
  t.dom_out_ = domain_outer;
  t.scale_ = 1.0;
  return t;
}

Diffeomorphism Diffeomorphism::then(const Diffeomorphism& next) const {
  Diffeomorphism t;
  t.chain_ = chain_;
  t.chain_.insert(t.chain_.end(), next.chain_.begin(), next.chain_.end());
  t.dom_in_ = dom_in_;
  t.dom_out_ = dom_out_;
  t.scale_ = std::max(scale_, next.scale_);
  return t;
}

Diffeomorphism Diffeomorphism::inverse() const {
  Diffeomorphism t;
  for (auto it = chain_.rbegin(); it != chain_.rend(); ++it) {
    Prim p = *it;
    if (p.kind == Prim::Dilation) p.param = 1.0 / p.param;
    t.chain_.push_back(p);
  }
  // image of the domain annulus under the forward map; a Kelvin factor turns
  // r = 0 into infinity and vice versa
  bool flips = false;
  for (const auto& p : chain_)
    if (p.kind == Prim::Kelvin) flips = !flips;
  const double inf = std::numeric_limits<double>::infinity();
  double a = dom_in_ > 0.0 ? map_radius_unchecked(dom_in_) : (flips ? inf : 0.0);
  double b = std::isfinite(dom_out_) ? map_radius_unchecked(dom_out_) : (flips ? 0.0 : inf);
  t.dom_in_ = std::min(a, b);
  t.dom_out_ = std::max(a, b);
  t.scale_ = scale_;
  return t;
}

double Diffeomorphism::map_radius_unchecked(double r) const {
  for (const auto& p : chain_) {
    if (r == 0.0) return 0.0;
    r = (p.kind == Prim::Kelvin) ? p.param * p.param / r : p.param * r;
  }
  return r;
}

void Diffeomorphism::check_point(const Vec& x) const {
  const double r = x.norm();
  const double margin = 1e-12 * scale_;
  if (r < margin)
    throw std::domain_error("Diffeomorphism error: point too close to the origin");
  if (r < dom_in_ * (1.0 - 1e-12) || (std::isfinite(dom_out_) && r > dom_out_ * (1.0 + 1e-12)))
    throw std::domain_error("Diffeomorphism error: point outside the declared annulus");
}

Vec Diffeomorphism::map(const Vec& x) const {
  check_point(x);
  Vec y = x;
  for (const auto& p : chain_) {
    if (p.kind == Prim::Kelvin) {
      const double r2 = y.squaredNorm();
      if (r2 < 1e-24 * p.param * p.param)
        throw std::domain_error("Diffeomorphism error: point too close to the origin");
      y = (p.param * p.param / r2) * y;
    } else {
      y *= p.param;
    }
  }
  return y;
}

double Diffeomorphism::map_radius(double r) const {
  Vec x = Vec::Zero(2);
  x[0] = r;
  return map(x).norm();
}

Mat prim_jacobian(const Diffeomorphism::Prim& p, const Vec& x) {
  const int d = static_cast<int>(x.size());
  if (p.kind == Diffeomorphism::Prim::Dilation) return p.param * Mat::Identity(d, d);
  const double r2 = x.squaredNorm();
  Vec xhat = x / std::sqrt(r2);
  Mat J = (p.param * p.param / r2) * (Mat::Identity(d, d) - 2.0 * xhat * xhat.transpose());
  return J;
}

Mat Diffeomorphism::jacobian(const Vec& x) const {
  check_point(x);
  const int d = static_cast<int>(x.size());
  Mat J = Mat::Identity(d, d);
  Vec y = x;
  for (const auto& p : chain_) {
    J = prim_jacobian(p, y) * J;
    if (p.kind == Prim::Kelvin)
      y = (p.param * p.param / y.squaredNorm()) * y;
    else
      y *= p.param;
  }
  return J;
}

double Diffeomorphism::jacobian_abs_det(const Vec& x) const {
  check_point(x);
  const int d = static_cast<int>(x.size());
  double det = 1.0;
  double r = x.norm();
  for (const auto& p : chain_) {
    if (p.kind == Prim::Kelvin) {
      const double f = p.param * p.param / (r * r);
      det *= rpow(f, d);
      r = p.param * p.param / r;
    } else {
      det *= rpow(p.param, d);
      r *= p.param;
    }
  }
  return det;
}

Mat pushforward(const TensorField& b, const Diffeomorphism& T, const Vec& y) {
  const Diffeomorphism Tinv = T.inverse();
  const Vec x = Tinv.map(y);
  const Mat J = T.jacobian(x);
  const double det = T.jacobian_abs_det(x);
  Mat bx = b.eval(x);
  return (J * bx * J.transpose()) / det;
}

double verify_complementary_identity(const TensorField& core, const Diffeomorphism& F,
                                     const Diffeomorphism& G, double r3, int samples,
                                     unsigned seed) {
  const int d = core.dim;
  const Diffeomorphism GF = F.then(G);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double worst = 0.0;
  const Mat I = Mat::Identity(d, d);
  for (int s = 0; s < samples; ++s) {
    Vec dir(d);
    do {
      for (int i = 0; i < d; ++i) dir[i] = gauss(rng);
    } while (dir.norm() < 1e-8);
    dir.normalize();
    // uniform in the ball, radius kept off the origin singularity
    double u = std::max(unif(rng), 1e-9);
    double r = r3 * std::pow(u, 1.0 / d);
    r = std::max(r, 1e-3 * r3);
    Vec y = r * dir;
    Mat M = pushforward(core, GF, y);
    double res = (M - I).norm() / M.norm();
    worst = std::max(worst, res);
  }
  return worst;
}

}  // namespace cloaksim::xform
