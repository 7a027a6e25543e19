#include "cloaksim/spectral.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <Eigen/Dense>
#include <json.hpp>

namespace cloaksim::spectral {

namespace {

constexpr double kFaceTol = 1e-12;  // relative face-matching tolerance

bool faces_equal(double a, double b, double scale) {
  return std::abs(a - b) <= kFaceTol * std::max(scale, 1.0);
}

double kappa_of(int dim, int n) { return dim == 2 ? double(n) * n : double(n) * (n + 1); }

// Radial mode operator on a power-law layer applied to r^e:
//   div(sigma0 r^omega grad(r^e Y_n)) = sigma0 r^{omega+e-2} Q(e) Y_n
double indicial_Q(int dim, double omega, int n, double e) {
  return e * e + (omega + dim - 2.0) * e - kappa_of(dim, n);
}

ModeIndex normalize_mode(int dim, ModeIndex m) {
  if (m.n < 0) throw std::runtime_error("ModalSource error: negative mode degree");
  if (dim == 2) {
    if (m.n == 0) m.k = 1;
    if (m.k != 1 && m.k != -1)
      throw std::runtime_error("ModalSource error: 2D mode order must be +1 or -1");
  } else {
    if (std::abs(m.k) > m.n)
      throw std::runtime_error("ModalSource error: spherical harmonic order exceeds degree");
  }
  return m;
}

double angular_norm(int dim) { return dim == 2 ? 2.0 * M_PI : 1.0; }

// Normalized per-layer basis: phi_plus = (r/r_out)^{mu+}; phi_minus =
// (r/ref)^{mu-} with ref = r_in (or r_out when the layer touches the origin);
// a degenerate root pair uses {(r/r_out)^mu, (r/r_out)^mu ln(r/r_out)}.
struct LayerEval {
  RadialBasis basis;
  double ref_p = 1.0, ref_m = 1.0;

  LayerEval(int dim, const Layer& lay, int n) {
    basis = layer_basis(dim, lay.omega, n);
    ref_p = lay.r_out;
    ref_m = basis.log_pair ? lay.r_out : (lay.r_in > 0.0 ? lay.r_in : lay.r_out);
  }
  double phi_p(double r) const { return rpow(r / ref_p, basis.mu_plus); }
  double dphi_p(double r) const {
    if (basis.mu_plus == 0.0) return 0.0;
    return basis.mu_plus / r * rpow(r / ref_p, basis.mu_plus);
  }
  double phi_m(double r) const {
    if (basis.log_pair) return rpow(r / ref_m, basis.mu_minus) * std::log(r / ref_m);
    return rpow(r / ref_m, basis.mu_minus);
  }
  double dphi_m(double r) const {
    if (basis.log_pair)
      return rpow(r / ref_m, basis.mu_minus) * (basis.mu_minus * std::log(r / ref_m) + 1.0) / r;
    if (basis.mu_minus == 0.0) return 0.0;
    return basis.mu_minus / r * rpow(r / ref_m, basis.mu_minus);
  }
};

complexd particular_value(const LayerCoeffs& lc, double r) {
  if (lc.part == complexd(0.0, 0.0)) return {0.0, 0.0};
  if (r == 0.0) {
    if (lc.part_e > 0.0) return {0.0, 0.0};
    throw std::domain_error("ModeExpansion error: singular source term at the origin");
  }
  double lnr = lc.part_logpow ? std::log(r) : 0.0;
  double lp = lc.part_logpow == 0 ? 1.0 : (lc.part_logpow == 1 ? lnr : lnr * lnr);
  return lc.part * rpow(r, lc.part_e) * lp;
}

complexd particular_derivative(const LayerCoeffs& lc, double r) {
  if (lc.part == complexd(0.0, 0.0)) return {0.0, 0.0};
  if (r == 0.0) {
    if (lc.part_e > 1.0) return {0.0, 0.0};
    throw std::domain_error("ModeExpansion error: singular source term at the origin");
  }
  double lnr = lc.part_logpow ? std::log(r) : 0.0;
  double lp = lc.part_logpow == 0 ? 1.0 : (lc.part_logpow == 1 ? lnr : lnr * lnr);
  double dlp = lc.part_logpow == 0 ? 0.0 : (lc.part_logpow == 1 ? 1.0 : 2.0 * lnr);
  return lc.part * rpow(r, lc.part_e - 1.0) * (lc.part_e * lp + dlp);
}

complexd sigma_r(const Layer& lay, double r) { return lay.sigma0 * rpow(r, lay.omega); }

void check_layer_list(int dim, const std::vector<Layer>& layers, const char* who) {
  if (dim != 2 && dim != 3)
    throw std::runtime_error(std::string(who) + " error: dimension must be 2 or 3");
  if (layers.empty()) throw std::runtime_error(std::string(who) + " error: no layers");
  double R = layers.back().r_out;
  double prev = layers.front().r_in;
  if (prev < 0.0) throw std::runtime_error(std::string(who) + " error: negative inner radius");
  for (const Layer& l : layers) {
    if (!(l.r_out > l.r_in))
      throw std::runtime_error(std::string(who) + " error: empty or inverted layer");
    if (!faces_equal(l.r_in, prev, R))
      throw std::runtime_error(std::string(who) + " error: layers are not contiguous");
    if (l.sigma0 == complexd(0.0, 0.0))
      throw std::runtime_error(std::string(who) + " error: zero coefficient in a layer");
    prev = l.r_out;
  }
}

int layer_index_at(const std::vector<Layer>& layers, double r, int side) {
  double R = layers.back().r_out;
  double r0 = layers.front().r_in;
  if (r < r0 - kFaceTol * std::max(R, 1.0) || r > R + kFaceTol * std::max(R, 1.0))
    throw std::runtime_error("ModeExpansion error: radius outside the domain");
  r = std::clamp(r, r0, R);
  int lo = 0, hi = int(layers.size()) - 1;
  while (lo < hi) {
    int mid = (lo + hi) / 2;
    if (r < layers[mid].r_out)
      hi = mid;
    else
      lo = mid + 1;
  }
  // exactly on a face: side < 0 picks the inner layer, side > 0 the outer
  if (side < 0 && lo > 0 && faces_equal(r, layers[lo].r_in, R)) return lo - 1;
  if (side > 0 && lo + 1 < int(layers.size()) && faces_equal(r, layers[lo].r_out, R)) return lo + 1;
  return lo;
}

// Rebase (p, q) when a layer's reference radii change (restriction/refinement).
LayerCoeffs rebase(const LayerCoeffs& lc, int dim, int n, const Layer& oldl, const Layer& newl) {
  LayerEval eo(dim, oldl, n), en(dim, newl, n);
  LayerCoeffs out = lc;
  if (eo.basis.log_pair) {
    double f = rpow(en.ref_p / eo.ref_p, eo.basis.mu_plus);
    out.p = f * (lc.p + lc.q * std::log(en.ref_p / eo.ref_p));
    out.q = f * lc.q;
  } else {
    out.p = lc.p * rpow(en.ref_p / eo.ref_p, eo.basis.mu_plus);
    out.q = lc.q * rpow(en.ref_m / eo.ref_m, eo.basis.mu_minus);
  }
  return out;
}

struct TermList {
  std::vector<RadialTerm> t;
  void add(complexd c, double e, int l) {
    if (c != complexd(0.0, 0.0)) t.push_back({c, e, l});
  }
};

TermList derivative_terms(const TermList& in) {
  TermList out;
  for (const RadialTerm& a : in.t) {
    out.add(a.c * a.e, a.e - 1.0, a.logpow);
    if (a.logpow > 0) out.add(a.c * double(a.logpow), a.e - 1.0, a.logpow - 1);
  }
  return out;
}

// int_a^b (t1 t2conj)(r) r^{shift} dr for two term lists
complexd pair_integral(const TermList& t1, const TermList& t2, double a, double b, double shift) {
  complexd s{0.0, 0.0};
  for (const RadialTerm& x : t1.t)
    for (const RadialTerm& y : t2.t)
      s += x.c * std::conj(y.c) * power_log_integral(a, b, x.e + y.e + shift, x.logpow + y.logpow);
  return s;
}

void run_parallel(int jobs, int threads, const std::function<void(int)>& fn) {
  if (threads <= 0) threads = threads_from_env();
  if (threads <= 0) threads = int(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, std::max(1, jobs));
  if (threads == 1) {
    for (int i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(threads);
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (int i = next.fetch_add(1); i < jobs; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errs[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

}  // namespace

void RadialLayeredMedium::validate() const { check_layer_list(dim, layers, "RadialLayeredMedium"); }

int RadialLayeredMedium::layer_at(double r) const { return layer_index_at(layers, r, 0); }

complexd RadialLayeredMedium::sigma_at(double r) const {
  const Layer& l = layers[layer_at(r)];
  return sigma_r(l, r);
}

RadialLayeredMedium RadialLayeredMedium::homogeneous(int dim, double R, complexd sigma) {
  if (!(R > 0.0)) throw std::runtime_error("RadialLayeredMedium error: radius must be positive");
  RadialLayeredMedium m;
  m.dim = dim;
  m.layers = {Layer{0.0, R, sigma, 0.0}};
  m.validate();
  return m;
}

RadialBasis layer_basis(int dim, double omega, int n) {
  if (dim != 2 && dim != 3) throw std::runtime_error("layer_basis error: dimension must be 2 or 3");
  if (n < 0) throw std::runtime_error("layer_basis error: negative mode degree");
  double p = omega + dim - 2.0;
  double disc = p * p + 4.0 * kappa_of(dim, n);
  RadialBasis b;
  if (disc < 1e-12) {
    b.log_pair = true;
    b.mu_plus = b.mu_minus = -p / 2.0;
  } else {
    double s = std::sqrt(disc);
    b.mu_plus = (-p + s) / 2.0;
    b.mu_minus = (-p - s) / 2.0;
  }
  return b;
}

double power_log_integral(double a, double b, double w, int l) {
  if (l < 0 || l > 2) throw std::domain_error("power_log_integral error: log power must be 0..2");
  if (a < 0.0 || b < a) throw std::domain_error("power_log_integral error: bad interval");
  if (a == b) return 0.0;
  double W = w + 1.0;
  if (a == 0.0 && W <= 0.0)
    throw std::domain_error("power_log_integral error: divergent at zero");
  if (W == 0.0) {
    double la = std::log(a), lb = std::log(b);
    if (l == 0) return lb - la;
    if (l == 1) return (lb * lb - la * la) / 2.0;
    return (lb * lb * lb - la * la * la) / 3.0;
  }
  double ua = a > 0.0 ? std::log(a) : 0.0, ub = std::log(b);
  double umax = std::max(std::abs(ua), std::abs(ub));
  if (a > 0.0 && std::abs(W) * umax < 0.25) {
    // int e^{W u} u^l du as a series in W
    double sum = 0.0, wk = 1.0;
    for (int k = 0;; ++k) {
      double term = wk * (std::pow(ub, l + k + 1) - std::pow(ua, l + k + 1)) / (l + k + 1);
      sum += term;
      if (std::abs(term) <= 1e-18 * std::abs(sum) && k > 2) break;
      if (k > 60) break;
      wk *= W / (k + 1);
    }
    return sum;
  }
  auto F = [&](double r, double u) {
    if (r == 0.0) return 0.0;  // W > 0 here
    double rw = rpow(r, W);
    if (l == 0) return rw / W;
    if (l == 1) return rw * (W * u - 1.0) / (W * W);
    return rw * (W * W * u * u - 2.0 * W * u + 2.0) / (W * W * W);
  };
  return F(b, ub) - F(a, ua);
}

int ModeExpansion::layer_at(double r) const { return layer_index_at(layers, r, 0); }

const ModeSolution* ModeExpansion::find_mode(ModeIndex m) const {
  for (const ModeSolution& ms : modes)
    if (ms.mode == m) return &ms;
  return nullptr;
}

std::vector<RadialTerm> ModeExpansion::terms(const ModeSolution& ms, int layer) const {
  const Layer& lay = layers.at(layer);
  const LayerCoeffs& lc = ms.per_layer.at(layer);
  LayerEval ev(dim, lay, ms.mode.n);
  TermList out;
  if (ev.basis.log_pair) {
    double f = rpow(ev.ref_p, -ev.basis.mu_plus);
    double lb = std::log(ev.ref_p);
    out.add(f * (lc.p - lc.q * lb), ev.basis.mu_plus, 0);
    out.add(f * lc.q, ev.basis.mu_plus, 1);
  } else {
    out.add(lc.p * rpow(ev.ref_p, -ev.basis.mu_plus), ev.basis.mu_plus, 0);
    out.add(lc.q * rpow(ev.ref_m, -ev.basis.mu_minus), ev.basis.mu_minus, 0);
  }
  out.add(lc.part, lc.part_e, lc.part_logpow);
  return out.t;
}

complexd ModeExpansion::radial_value_side(const ModeSolution& ms, double r, int side) const {
  int j = layer_index_at(layers, r, side);
  const LayerCoeffs& lc = ms.per_layer[j];
  LayerEval ev(dim, layers[j], ms.mode.n);
  complexd v = particular_value(lc, r);
  if (lc.p != complexd(0.0, 0.0)) v += lc.p * ev.phi_p(r);
  if (lc.q != complexd(0.0, 0.0)) v += lc.q * ev.phi_m(r);
  return v;
}

complexd ModeExpansion::radial_derivative_side(const ModeSolution& ms, double r, int side) const {
  int j = layer_index_at(layers, r, side);
  const LayerCoeffs& lc = ms.per_layer[j];
  LayerEval ev(dim, layers[j], ms.mode.n);
  complexd v = particular_derivative(lc, r);
  if (lc.p != complexd(0.0, 0.0)) v += lc.p * ev.dphi_p(r);
  if (lc.q != complexd(0.0, 0.0)) v += lc.q * ev.dphi_m(r);
  return v;
}

complexd ModeExpansion::radial_sigma_flux_side(const ModeSolution& ms, double r, int side) const {
  int j = layer_index_at(layers, r, side);
  return sigma_r(layers[j], r) * radial_derivative_side(ms, r, side);
}

complexd ModeExpansion::radial_value(const ModeSolution& ms, double r) const {
  return radial_value_side(ms, r, 0);
}
complexd ModeExpansion::radial_derivative(const ModeSolution& ms, double r) const {
  return radial_derivative_side(ms, r, 0);
}
complexd ModeExpansion::radial_sigma_flux(const ModeSolution& ms, double r) const {
  return radial_sigma_flux_side(ms, r, 0);
}

complexd ModeExpansion::value_at(const Vec& x) const {
  if (x.size() != dim) throw std::runtime_error("ModeExpansion error: point dimension mismatch");
  double r = x.norm();
  complexd total{0.0, 0.0};
  if (dim == 2) {
    double th = std::atan2(x[1], x[0]);
    for (const ModeSolution& ms : modes) {
      complexd v = radial_value(ms, r);
      double ph = ms.mode.k * ms.mode.n * th;
      total += v * complexd(std::cos(ph), std::sin(ph));
    }
  } else {
    double th = r > 0.0 ? std::acos(std::clamp(x[2] / r, -1.0, 1.0)) : 0.0;
    double phi = std::atan2(x[1], x[0]);
    for (const ModeSolution& ms : modes)
      total += radial_value(ms, r) * real_sph_harm(ms.mode.n, ms.mode.k, th, phi);
  }
  return total;
}

Eigen::VectorXcd ModeExpansion::gradient_at(const Vec& x) const {
  if (x.size() != dim) throw std::runtime_error("ModeExpansion error: point dimension mismatch");
  double r = x.norm();
  if (r < 1e-12 * outer_radius())
    throw std::runtime_error("ModeExpansion error: gradient at the origin is not defined");
  Eigen::VectorXcd g = Eigen::VectorXcd::Zero(dim);
  if (dim == 2) {
    double th = std::atan2(x[1], x[0]);
    Eigen::Vector2d rhat(std::cos(th), std::sin(th)), that(-std::sin(th), std::cos(th));
    for (const ModeSolution& ms : modes) {
      complexd v = radial_value(ms, r), dv = radial_derivative(ms, r);
      double ph = ms.mode.k * ms.mode.n * th;
      complexd e(std::cos(ph), std::sin(ph));
      complexd ang = complexd(0.0, double(ms.mode.k) * ms.mode.n) * v / r;
      for (int i = 0; i < 2; ++i) g[i] += dv * e * rhat[i] + ang * e * that[i];
    }
  } else {
    double ct = std::clamp(x[2] / r, -1.0, 1.0);
    double th = std::acos(ct), phi = std::atan2(x[1], x[0]);
    double st = std::max(std::sin(th), 1e-12);
    Eigen::Vector3d rhat = x / r;
    Eigen::Vector3d that(ct * std::cos(phi), ct * std::sin(phi), -st);
    Eigen::Vector3d phat(-std::sin(phi), std::cos(phi), 0.0);
    for (const ModeSolution& ms : modes) {
      complexd v = radial_value(ms, r), dv = radial_derivative(ms, r);
      double Y = real_sph_harm(ms.mode.n, ms.mode.k, th, phi);
      double dY, dYp_over_sin;
      real_sph_harm_grad(ms.mode.n, ms.mode.k, th, phi, dY, dYp_over_sin);
      for (int i = 0; i < 3; ++i)
        g[i] += dv * Y * rhat[i] + v / r * (dY * that[i] + dYp_over_sin * phat[i]);
    }
  }
  return g;
}

ModeExpansion ModeExpansion::restricted(double a, double b) const {
  double R = outer_radius(), r0 = inner_radius();
  if (a < r0 - kFaceTol * R || b > R + kFaceTol * R || !(a < b))
    throw std::runtime_error("ModeExpansion error: restriction outside the domain");
  a = std::max(a, r0);
  b = std::min(b, R);
  ModeExpansion out;
  out.dim = dim;
  out.n_max = n_max;
  std::vector<int> keep;
  for (int j = 0; j < int(layers.size()); ++j) {
    double lo = std::max(a, layers[j].r_in), hi = std::min(b, layers[j].r_out);
    if (hi - lo > kFaceTol * std::max(R, 1.0)) {
      keep.push_back(j);
      Layer nl = layers[j];
      nl.r_in = lo;
      nl.r_out = hi;
      out.layers.push_back(nl);
    }
  }
  if (out.layers.empty()) throw std::runtime_error("ModeExpansion error: empty restriction");
  for (const ModeSolution& ms : modes) {
    ModeSolution ns;
    ns.mode = ms.mode;
    for (int i = 0; i < int(keep.size()); ++i)
      ns.per_layer.push_back(
          rebase(ms.per_layer[keep[i]], dim, ms.mode.n, layers[keep[i]], out.layers[i]));
    out.modes.push_back(std::move(ns));
  }
  return out;
}

ModeExpansion ModeExpansion::refined(std::vector<double> faces) const {
  double R = outer_radius();
  std::vector<double> cuts;
  for (double f : faces) {
    if (f <= inner_radius() + kFaceTol * R || f >= R - kFaceTol * R) continue;
    bool dup = false;
    for (const Layer& l : layers)
      if (faces_equal(f, l.r_in, R) || faces_equal(f, l.r_out, R)) dup = true;
    for (double c : cuts)
      if (faces_equal(f, c, R)) dup = true;
    if (!dup) cuts.push_back(f);
  }
  std::sort(cuts.begin(), cuts.end());
  ModeExpansion out;
  out.dim = dim;
  out.n_max = n_max;
  std::vector<int> parent;
  size_t ci = 0;
  for (int j = 0; j < int(layers.size()); ++j) {
    double lo = layers[j].r_in;
    while (ci < cuts.size() && cuts[ci] < layers[j].r_out) {
      Layer nl = layers[j];
      nl.r_in = lo;
      nl.r_out = cuts[ci];
      out.layers.push_back(nl);
      parent.push_back(j);
      lo = cuts[ci++];
    }
    Layer nl = layers[j];
    nl.r_in = lo;
    out.layers.push_back(nl);
    parent.push_back(j);
  }
  for (const ModeSolution& ms : modes) {
    ModeSolution ns;
    ns.mode = ms.mode;
    for (int i = 0; i < int(out.layers.size()); ++i)
      ns.per_layer.push_back(
          rebase(ms.per_layer[parent[i]], dim, ms.mode.n, layers[parent[i]], out.layers[i]));
    out.modes.push_back(std::move(ns));
  }
  return out;
}

ModeExpansion ModeExpansion::linear_combination(complexd c1, const ModeExpansion& A, complexd c2,
                                                const ModeExpansion& B) {
  if (A.dim != B.dim)
    throw std::runtime_error("ModeExpansion error: combining different dimensions");
  if (A.layers.size() != B.layers.size())
    throw std::runtime_error("ModeExpansion error: combining different layer partitions");
  double R = A.outer_radius();
  for (size_t j = 0; j < A.layers.size(); ++j) {
    if (!faces_equal(A.layers[j].r_in, B.layers[j].r_in, R) ||
        !faces_equal(A.layers[j].r_out, B.layers[j].r_out, R) ||
        A.layers[j].omega != B.layers[j].omega)
      throw std::runtime_error("ModeExpansion error: combining different layer partitions");
  }
  ModeExpansion out;
  out.dim = A.dim;
  out.n_max = std::max(A.n_max, B.n_max);
  out.layers = A.layers;  // the combination keeps the first operand's layer laws
  std::set<ModeIndex> idx;
  for (const auto& m : A.modes) idx.insert(m.mode);
  for (const auto& m : B.modes) idx.insert(m.mode);
  for (ModeIndex m : idx) {
    const ModeSolution* ma = A.find_mode(m);
    const ModeSolution* mb = B.find_mode(m);
    ModeSolution ns;
    ns.mode = m;
    ns.per_layer.resize(A.layers.size());
    for (size_t j = 0; j < A.layers.size(); ++j) {
      LayerCoeffs lc;
      if (ma) {
        lc.p = c1 * ma->per_layer[j].p;
        lc.q = c1 * ma->per_layer[j].q;
        lc.part = c1 * ma->per_layer[j].part;
        lc.part_e = ma->per_layer[j].part_e;
        lc.part_logpow = ma->per_layer[j].part_logpow;
      }
      if (mb) {
        const LayerCoeffs& o = mb->per_layer[j];
        lc.p += c2 * o.p;
        lc.q += c2 * o.q;
        if (o.part != complexd(0.0, 0.0)) {
          if (lc.part == complexd(0.0, 0.0)) {
            lc.part = c2 * o.part;
            lc.part_e = o.part_e;
            lc.part_logpow = o.part_logpow;
          } else if (o.part_e == lc.part_e && o.part_logpow == lc.part_logpow) {
            lc.part += c2 * o.part;
          } else {
            throw std::runtime_error("ModeExpansion error: incompatible source terms");
          }
        }
      }
      ns.per_layer[j] = lc;
    }
    out.modes.push_back(std::move(ns));
  }
  return out;
}

double ModeExpansion::l2_ball_sq(double R) const { return l2_annulus_sq(inner_radius(), R); }

double ModeExpansion::l2_annulus_sq(double a, double b) const {
  double s = 0.0;
  for (const ModeSolution& ms : modes)
    for (int j = 0; j < int(layers.size()); ++j) {
      double lo = std::max(a, layers[j].r_in), hi = std::min(b, layers[j].r_out);
      if (hi <= lo) continue;
      TermList tl{terms(ms, j)};
      s += std::real(pair_integral(tl, tl, lo, hi, dim - 1.0));
    }
  return angular_norm(dim) * s;
}

double ModeExpansion::h1_semi_annulus_sq(double a, double b) const {
  double s = 0.0;
  for (const ModeSolution& ms : modes) {
    double kap = kappa_of(dim, ms.mode.n);
    for (int j = 0; j < int(layers.size()); ++j) {
      double lo = std::max(a, layers[j].r_in), hi = std::min(b, layers[j].r_out);
      if (hi <= lo) continue;
      TermList tl{terms(ms, j)};
      TermList dl = derivative_terms(tl);
      s += std::real(pair_integral(dl, dl, lo, hi, dim - 1.0));
      if (kap > 0.0) s += kap * std::real(pair_integral(tl, tl, lo, hi, dim - 3.0));
    }
  }
  return angular_norm(dim) * s;
}

complexd ModeExpansion::weighted_grad_pairing(
    double a, double b, std::function<std::pair<complexd, double>(int)> weight) const {
  complexd s{0.0, 0.0};
  for (const ModeSolution& ms : modes) {
    double kap = kappa_of(dim, ms.mode.n);
    for (int j = 0; j < int(layers.size()); ++j) {
      double lo = std::max(a, layers[j].r_in), hi = std::min(b, layers[j].r_out);
      if (hi <= lo) continue;
      auto [cw, ow] = weight(j);
      if (cw == complexd(0.0, 0.0)) continue;
      TermList tl{terms(ms, j)};
      TermList dl = derivative_terms(tl);
      complexd part = pair_integral(dl, dl, lo, hi, dim - 1.0 + ow);
      if (kap > 0.0) part += kap * pair_integral(tl, tl, lo, hi, dim - 3.0 + ow);
      s += cw * part;
    }
  }
  return angular_norm(dim) * s;
}

std::vector<ModeExpansion::TraceCoef> ModeExpansion::trace(double R, int side) const {
  std::vector<TraceCoef> out;
  for (const ModeSolution& ms : modes) {
    TraceCoef tc;
    tc.mode = ms.mode;
    tc.value = radial_value_side(ms, R, side);
    tc.dvalue = radial_derivative_side(ms, R, side);
    tc.sflux = radial_sigma_flux_side(ms, R, side);
    out.push_back(tc);
  }
  return out;
}

double ModeExpansion::trace_h_half_sq(double R, int side) const {
  double s = 0.0;
  for (const TraceCoef& tc : trace(R, side)) s += (1.0 + tc.mode.n) * std::norm(tc.value);
  return s;
}

double ModeExpansion::trace_h_minus_half_sq(double R, int side) const {
  double s = 0.0;
  for (const TraceCoef& tc : trace(R, side)) s += std::norm(tc.dvalue) / (1.0 + tc.mode.n);
  return s;
}

double ModeExpansion::branch_norm_sq(double r) const {
  int j = layer_at(r);
  double s = 0.0;
  for (const ModeSolution& ms : modes) {
    LayerEval ev(dim, layers[j], ms.mode.n);
    const LayerCoeffs& lc = ms.per_layer[j];
    double up = lc.p == complexd(0.0, 0.0) ? 0.0 : std::norm(lc.p * ev.phi_p(r));
    double um = lc.q == complexd(0.0, 0.0) ? 0.0 : std::norm(lc.q * ev.phi_m(r));
    s += (1.0 + ms.mode.n) * (up + um);
  }
  return s;
}

std::string ModeExpansion::to_json() const {
  nlohmann::json j;
  j["d"] = dim;
  j["N_max"] = n_max;
  j["layers"] = nlohmann::json::array();
  for (const Layer& l : layers) {
    nlohmann::json jl = {{"r_in", l.r_in},
                         {"r_out", l.r_out},
                         {"sigma", {l.sigma0.real(), l.sigma0.imag()}}};
    if (l.omega != 0.0) jl["omega"] = l.omega;
    j["layers"].push_back(jl);
  }
  j["modes"] = nlohmann::json::array();
  for (const ModeSolution& ms : modes) {
    nlohmann::json jm = {{"n", ms.mode.n}, {"k", ms.mode.k}};
    jm["layer_coeffs"] = nlohmann::json::array();
    bool any_part = false;
    for (const LayerCoeffs& lc : ms.per_layer) {
      jm["layer_coeffs"].push_back({lc.p.real(), lc.p.imag(), lc.q.real(), lc.q.imag()});
      if (lc.part != complexd(0.0, 0.0)) any_part = true;
    }
    if (any_part) {
      jm["source_terms"] = nlohmann::json::array();
      for (const LayerCoeffs& lc : ms.per_layer)
        jm["source_terms"].push_back({lc.part.real(), lc.part.imag(), lc.part_e,
                                      double(lc.part_logpow)});
    }
    j["modes"].push_back(jm);
  }
  return j.dump(2);
}

ModeExpansion ModeExpansion::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("ModeExpansion error: invalid JSON: ") + e.what());
  }
  try {
    ModeExpansion out;
    out.dim = j.at("d").get<int>();
    out.n_max = j.at("N_max").get<int>();
    for (const auto& jl : j.at("layers")) {
      Layer l;
      l.r_in = jl.at("r_in").get<double>();
      l.r_out = jl.at("r_out").get<double>();
      auto s = jl.at("sigma");
      l.sigma0 = complexd(s.at(0).get<double>(), s.at(1).get<double>());
      l.omega = jl.value("omega", 0.0);
      out.layers.push_back(l);
    }
    check_layer_list(out.dim, out.layers, "ModeExpansion");
    for (const auto& jm : j.at("modes")) {
      ModeSolution ms;
      ms.mode.n = jm.at("n").get<int>();
      ms.mode.k = jm.at("k").get<int>();
      const auto& lcs = jm.at("layer_coeffs");
      if (lcs.size() != out.layers.size())
        throw std::runtime_error("ModeExpansion error: layer_coeffs count mismatch");
      for (const auto& c : lcs) {
        LayerCoeffs lc;
        lc.p = complexd(c.at(0).get<double>(), c.at(1).get<double>());
        lc.q = complexd(c.at(2).get<double>(), c.at(3).get<double>());
        ms.per_layer.push_back(lc);
      }
      if (jm.contains("source_terms")) {
        const auto& st = jm.at("source_terms");
        if (st.size() != out.layers.size())
          throw std::runtime_error("ModeExpansion error: source_terms count mismatch");
        for (size_t i = 0; i < st.size(); ++i) {
          ms.per_layer[i].part =
              complexd(st[i].at(0).get<double>(), st[i].at(1).get<double>());
          ms.per_layer[i].part_e = st[i].at(2).get<double>();
          ms.per_layer[i].part_logpow = int(st[i].at(3).get<double>());
        }
      }
      out.modes.push_back(std::move(ms));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("ModeExpansion error: invalid JSON: ") + e.what());
  }
}

Eigen::Matrix2cd interface_matrix(const Layer& inner, const Layer& outer, int dim, int n,
                                  double rho) {
  if (!(rho > 0.0)) throw std::runtime_error("interface_matrix error: radius must be positive");
  // raw bases {r^{mu+}, r^{mu-}} (or {r^mu, r^mu ln r}); columns are (value, sigma u')
  auto raw_B = [&](const Layer& lay) {
    RadialBasis b = layer_basis(dim, lay.omega, n);
    complexd sg = sigma_r(lay, rho);
    Eigen::Matrix2cd B;
    if (b.log_pair) {
      double lr = std::log(rho);
      B(0, 0) = rpow(rho, b.mu_plus);
      B(1, 0) = sg * b.mu_plus * rpow(rho, b.mu_plus - 1.0);
      B(0, 1) = rpow(rho, b.mu_plus) * lr;
      B(1, 1) = sg * rpow(rho, b.mu_plus - 1.0) * (b.mu_plus * lr + 1.0);
    } else {
      B(0, 0) = rpow(rho, b.mu_plus);
      B(1, 0) = sg * b.mu_plus * rpow(rho, b.mu_plus - 1.0);
      B(0, 1) = rpow(rho, b.mu_minus);
      B(1, 1) = sg * b.mu_minus * rpow(rho, b.mu_minus - 1.0);
    }
    return B;
  };
  Eigen::Matrix2cd Bo = raw_B(outer);
  return Bo.inverse() * raw_B(inner);
}

SolveResult solve_field(const RadialLayeredMedium& med, const std::vector<ModalSource>& sources,
                        int n_max, int threads) {
  med.validate();
  if (!(med.layers.front().r_in == 0.0))
    throw std::runtime_error("solve_field error: medium must start at the origin");
  if (med.layers.front().omega != 0.0)
    throw std::runtime_error("solve_field error: innermost layer must have omega == 0");
  if (n_max < 0) throw std::runtime_error("solve_field error: negative mode cutoff");
  double R = med.outer_radius();

  // refine the partition at every source radius
  std::vector<double> cuts;
  auto add_cut = [&](double r) {
    for (const Layer& l : med.layers)
      if (faces_equal(r, l.r_in, R) || faces_equal(r, l.r_out, R)) return;
    for (double c : cuts)
      if (faces_equal(r, c, R)) return;
    cuts.push_back(r);
  };
  for (const ModalSource& s : sources) {
    if (std::holds_alternative<RingSource>(s)) {
      double rr = std::get<RingSource>(s).radius;
      if (!(rr > 0.0) || rr >= R - kFaceTol * R)
        throw std::runtime_error("solve_field error: ring source outside the open domain");
      add_cut(rr);
    } else {
      const AnnulusSource& a = std::get<AnnulusSource>(s);
      if (a.r_in < 0.0 || !(a.r_out > a.r_in) || a.r_out > R + kFaceTol * R)
        throw std::runtime_error("solve_field error: annulus source outside the domain");
      if (a.r_in > 0.0) add_cut(a.r_in);
      if (a.r_out < R - kFaceTol * R) add_cut(a.r_out);
    }
  }
  std::sort(cuts.begin(), cuts.end());
  std::vector<Layer> lay;
  for (const Layer& l : med.layers) {
    double lo = l.r_in;
    for (double c : cuts)
      if (c > lo && c < l.r_out && !faces_equal(c, l.r_out, R)) {
        Layer nl = l;
        nl.r_in = lo;
        nl.r_out = c;
        lay.push_back(nl);
        lo = c;
      }
    Layer nl = l;
    nl.r_in = lo;
    lay.push_back(nl);
  }
  const int M = int(lay.size());
  std::vector<double> faces(M + 1);
  for (int j = 0; j < M; ++j) faces[j] = lay[j].r_in;
  faces[M] = R;
  auto face_index = [&](double r) {
    for (int f = 0; f <= M; ++f)
      if (faces_equal(r, faces[f], R)) return f;
    throw std::runtime_error("solve_field error: internal face lookup failure");
  };

  // gather per-mode ring jumps and layer densities
  struct PerMode {
    std::vector<complexd> face_g;
    std::vector<complexd> density;
  };
  std::map<ModeIndex, PerMode> data;
  int dropped = 0;
  auto slot = [&](ModeIndex m) -> PerMode& {
    auto it = data.find(m);
    if (it == data.end()) {
      PerMode pm;
      pm.face_g.assign(M + 1, complexd(0.0, 0.0));
      pm.density.assign(M, complexd(0.0, 0.0));
      it = data.emplace(m, std::move(pm)).first;
    }
    return it->second;
  };
  for (const ModalSource& s : sources) {
    if (std::holds_alternative<RingSource>(s)) {
      const RingSource& r = std::get<RingSource>(s);
      int f = face_index(r.radius);
      for (auto [m, g] : r.weights) {
        m = normalize_mode(med.dim, m);
        if (g == complexd(0.0, 0.0)) continue;
        if (m.n > n_max) {
          ++dropped;
          continue;
        }
        slot(m).face_g[f] += g;
      }
    } else {
      const AnnulusSource& a = std::get<AnnulusSource>(s);
      for (auto [m, c] : a.densities) {
        m = normalize_mode(med.dim, m);
        if (c == complexd(0.0, 0.0)) continue;
        if (m.n > n_max) {
          ++dropped;
          continue;
        }
        PerMode& pm = slot(m);
        for (int j = 0; j < M; ++j)
          if (lay[j].r_in >= a.r_in - kFaceTol * R && lay[j].r_out <= a.r_out + kFaceTol * R)
            pm.density[j] += c;
      }
    }
  }

  SolveResult res;
  res.field.dim = med.dim;
  res.field.n_max = n_max;
  res.field.layers = lay;
  res.field.modes.resize(data.size());
  res.diag.modes_dropped = dropped;
  if (dropped > 0)
    res.diag.warning = "source content above the mode cutoff was dropped";

  std::vector<std::pair<ModeIndex, const PerMode*>> todo;
  for (auto& [m, pm] : data) todo.emplace_back(m, &pm);

  std::vector<double> conds(todo.size(), 1.0), resids(todo.size(), 0.0);

  run_parallel(int(todo.size()), threads, [&](int idx) {
    const ModeIndex m = todo[idx].first;
    const PerMode& pm = *todo[idx].second;
    const int n = m.n;

    ModeSolution ms;
    ms.mode = m;
    ms.per_layer.resize(M);

    // particular term per layer for the constant annulus density
    for (int j = 0; j < M; ++j) {
      complexd c = pm.density[j];
      if (c == complexd(0.0, 0.0)) continue;
      double e = 2.0 - lay[j].omega;
      double Q = indicial_Q(med.dim, lay[j].omega, n, e);
      LayerCoeffs& lc = ms.per_layer[j];
      lc.part_e = e;
      if (std::abs(Q) > 1e-9 * (1.0 + e * e + kappa_of(med.dim, n))) {
        lc.part = c / (lay[j].sigma0 * Q);
        lc.part_logpow = 0;
      } else {
        double Qp = 2.0 * e + lay[j].omega + med.dim - 2.0;
        lc.part = c / (lay[j].sigma0 * Qp);
        lc.part_logpow = 1;
      }
    }

    std::vector<LayerEval> ev;
    ev.reserve(M);
    for (int j = 0; j < M; ++j) ev.emplace_back(med.dim, lay[j], n);

    Eigen::MatrixXcd A = Eigen::MatrixXcd::Zero(2 * M, 2 * M);
    Eigen::VectorXcd b = Eigen::VectorXcd::Zero(2 * M);

    A(0, 1) = 1.0;  // regularity at the origin: drop the singular branch
    for (int f = 1; f < M; ++f) {
      double r = faces[f];
      int jl = f - 1, jr = f;
      complexd sl = sigma_r(lay[jl], r), sr = sigma_r(lay[jr], r);
      int vrow = 2 * f - 1, frow = 2 * f;
      A(vrow, 2 * jl) = ev[jl].phi_p(r);
      A(vrow, 2 * jl + 1) = ev[jl].phi_m(r);
      A(vrow, 2 * jr) = -ev[jr].phi_p(r);
      A(vrow, 2 * jr + 1) = -ev[jr].phi_m(r);
      b(vrow) = particular_value(ms.per_layer[jr], r) - particular_value(ms.per_layer[jl], r);
      A(frow, 2 * jr) = sr * ev[jr].dphi_p(r);
      A(frow, 2 * jr + 1) = sr * ev[jr].dphi_m(r);
      A(frow, 2 * jl) = -sl * ev[jl].dphi_p(r);
      A(frow, 2 * jl + 1) = -sl * ev[jl].dphi_m(r);
      b(frow) = pm.face_g[f] + sl * particular_derivative(ms.per_layer[jl], r) -
                sr * particular_derivative(ms.per_layer[jr], r);
    }
    A(2 * M - 1, 2 * (M - 1)) = ev[M - 1].phi_p(R);
    A(2 * M - 1, 2 * (M - 1) + 1) = ev[M - 1].phi_m(R);
    b(2 * M - 1) = -particular_value(ms.per_layer[M - 1], R);

    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(A);
    Eigen::VectorXcd x = lu.solve(b);
    double rc = lu.rcond();
    conds[idx] = rc > 0.0 ? 1.0 / rc : std::numeric_limits<double>::infinity();
    if (!x.allFinite()) {
      std::ostringstream os;
      os << "solve_field error: singular mode system (n=" << n << ", k=" << m.k << ")";
      throw std::runtime_error(os.str());
    }

    Eigen::VectorXcd rvec = A * x - b;
    double xs = std::max(x.cwiseAbs().maxCoeff(), 1e-300);
    double rmax = 0.0;
    for (int i = 0; i < 2 * M; ++i) {
      double rows = A.row(i).cwiseAbs().sum() * xs + std::abs(b(i));
      if (rows > 0.0) rmax = std::max(rmax, std::abs(rvec(i)) / rows);
    }
    resids[idx] = rmax;

    for (int j = 0; j < M; ++j) {
      ms.per_layer[j].p = x[2 * j];
      ms.per_layer[j].q = x[2 * j + 1];
    }
    ms.per_layer[0].q = complexd(0.0, 0.0);  // the regularity row, enforced exactly
    res.field.modes[idx] = std::move(ms);
  });

  for (size_t i = 0; i < todo.size(); ++i) {
    if (conds[i] > res.diag.max_condition) res.diag.max_condition = conds[i];
    if (resids[i] >= res.diag.max_residual) {
      res.diag.max_residual = resids[i];
      res.diag.worst_mode = todo[i].first;
    }
  }
  if (!std::isfinite(res.diag.max_condition)) {
    if (!res.diag.warning.empty()) res.diag.warning += "; ";
    res.diag.warning += "a mode system is numerically singular";
  }
  return res;
}

WeakResidualReport weak_residual(const RadialLayeredMedium& med, const ModeExpansion& u,
                                 const std::vector<ModalSource>& sources) {
  med.validate();
  if (med.dim != u.dim) throw std::runtime_error("weak_residual error: dimension mismatch");
  double R = u.outer_radius();
  WeakResidualReport rep;
  double ang = angular_norm(u.dim);

  // breakpoints: expansion faces, medium faces, source radii
  std::vector<double> brk;
  auto add_brk = [&](double r) {
    if (r < u.inner_radius() - kFaceTol * R || r > R + kFaceTol * R) return;
    for (double x : brk)
      if (faces_equal(x, r, R)) return;
    brk.push_back(r);
  };
  for (const Layer& l : u.layers) {
    add_brk(l.r_in);
    add_brk(l.r_out);
  }
  for (const Layer& l : med.layers) {
    add_brk(l.r_in);
    add_brk(l.r_out);
  }
  for (const ModalSource& s : sources) {
    if (std::holds_alternative<RingSource>(s))
      add_brk(std::get<RingSource>(s).radius);
    else {
      add_brk(std::get<AnnulusSource>(s).r_in);
      add_brk(std::get<AnnulusSource>(s).r_out);
    }
  }
  std::sort(brk.begin(), brk.end());
  // hat nodes: breakpoints plus segment midpoints
  std::vector<double> nodes;
  for (size_t i = 0; i + 1 < brk.size(); ++i) {
    nodes.push_back(brk[i]);
    nodes.push_back(0.5 * (brk[i] + brk[i + 1]));
  }
  nodes.push_back(brk.back());

  for (const ModeSolution& ms : u.modes) {
    const ModeIndex m = ms.mode;
    double kap = kappa_of(u.dim, m.n);

    // per-segment stiffness action against a linear test piece h = h0 + h1 r
    auto stiffness = [&](double lo, double hi, double h0, double h1) -> complexd {
      int jm = layer_index_at(med.layers, 0.5 * (lo + hi), 0);
      int ju = layer_index_at(u.layers, 0.5 * (lo + hi), 0);
      complexd s0 = med.layers[jm].sigma0;
      double ow = med.layers[jm].omega;
      TermList tl{u.terms(ms, ju)};
      TermList dl = derivative_terms(tl);
      // the test function is real; pair_integral conjugates its second argument
      TermList ht, hd;
      ht.add(complexd(h0, 0.0), 0.0, 0);
      ht.add(complexd(h1, 0.0), 1.0, 0);
      hd.add(complexd(h1, 0.0), 0.0, 0);
      complexd v = pair_integral(dl, hd, lo, hi, u.dim - 1.0 + ow);
      if (kap > 0.0) v += kap * pair_integral(tl, ht, lo, hi, u.dim - 3.0 + ow);
      return s0 * v;
    };

    auto source_action = [&](double lo, double hi, double h0, double h1) {
      complexd F{0.0, 0.0};
      for (const ModalSource& s : sources) {
        if (!std::holds_alternative<AnnulusSource>(s)) continue;
        const AnnulusSource& a = std::get<AnnulusSource>(s);
        double l2 = std::max(lo, a.r_in), h2 = std::min(hi, a.r_out);
        if (h2 <= l2) continue;
        for (auto [mm, c] : a.densities) {
          if (!(normalize_mode(u.dim, mm) == m)) continue;
          F += c * (h0 * power_log_integral(l2, h2, u.dim - 1.0, 0) +
                    h1 * power_log_integral(l2, h2, u.dim + 0.0, 0));
        }
      }
      return F;
    };

    double mode_scale = 0.0, mode_worst = 0.0;
    std::vector<complexd> Svals(nodes.size(), complexd(0.0, 0.0));
    std::vector<complexd> Fvals(nodes.size(), complexd(0.0, 0.0));
    for (size_t i = 1; i + 1 < nodes.size(); ++i) {
      double rl = nodes[i - 1], rc = nodes[i], rr = nodes[i + 1];
      complexd S{0.0, 0.0};
      // the residual is a cancellation of per-segment actions; their size, not
      // the size of the (ideally zero) sum, sets the scale it is judged against
      double piece = 0.0;
      // rising piece on (rl, rc), falling piece on (rc, rr), split at breakpoints
      for (size_t kseg = 0; kseg + 1 < brk.size(); ++kseg) {
        double lo = std::max(brk[kseg], rl), hi = std::min(brk[kseg + 1], rc);
        if (hi > lo) {
          double h1 = 1.0 / (rc - rl), h0 = -rl * h1;
          complexd t = stiffness(lo, hi, h0, h1);
          S += t;
          piece = std::max(piece, std::abs(t));
          Fvals[i] += source_action(lo, hi, h0, h1);
        }
        lo = std::max(brk[kseg], rc);
        hi = std::min(brk[kseg + 1], rr);
        if (hi > lo) {
          double h1 = -1.0 / (rr - rc), h0 = -rr * h1;
          complexd t = stiffness(lo, hi, h0, h1);
          S += t;
          piece = std::max(piece, std::abs(t));
          Fvals[i] += source_action(lo, hi, h0, h1);
        }
      }
      for (const ModalSource& s : sources) {
        if (!std::holds_alternative<RingSource>(s)) continue;
        const RingSource& r = std::get<RingSource>(s);
        if (r.radius <= rl || r.radius >= rr) continue;
        double h = r.radius <= rc ? (r.radius - rl) / (rc - rl) : (rr - r.radius) / (rr - rc);
        for (auto [mm, g] : r.weights)
          if (normalize_mode(u.dim, mm) == m) Fvals[i] += g * rpow(r.radius, u.dim - 1.0) * h;
      }
      Svals[i] = S;
      mode_scale = std::max({mode_scale, piece, std::abs(Fvals[i])});
    }
    for (size_t i = 1; i + 1 < nodes.size(); ++i)
      mode_worst = std::max(mode_worst, std::abs(Svals[i] + Fvals[i]));
    if (mode_scale > 0.0)
      rep.max_rel_residual = std::max(rep.max_rel_residual, mode_worst / mode_scale);
  }

  // energy pairing with the field itself
  rep.sigma_grad_pairing = u.weighted_grad_pairing(u.inner_radius(), R, [&](int j) {
    double rc = 0.5 * (u.layers[j].r_in + u.layers[j].r_out);
    int jm = layer_index_at(med.layers, rc, 0);
    return std::make_pair(med.layers[jm].sigma0, med.layers[jm].omega);
  });
  complexd F{0.0, 0.0};
  for (const ModalSource& s : sources) {
    if (std::holds_alternative<RingSource>(s)) {
      const RingSource& r = std::get<RingSource>(s);
      for (auto [mm, g] : r.weights) {
        ModeIndex m = normalize_mode(u.dim, mm);
        const ModeSolution* ms = u.find_mode(m);
        if (!ms) continue;
        F += ang * g * rpow(r.radius, u.dim - 1.0) *
             std::conj(u.radial_value_side(*ms, r.radius, -1));
      }
    } else {
      const AnnulusSource& a = std::get<AnnulusSource>(s);
      for (auto [mm, c] : a.densities) {
        ModeIndex m = normalize_mode(u.dim, mm);
        const ModeSolution* ms = u.find_mode(m);
        if (!ms) continue;
        for (int j = 0; j < int(u.layers.size()); ++j) {
          double lo = std::max(a.r_in, u.layers[j].r_in), hi = std::min(a.r_out, u.layers[j].r_out);
          if (hi <= lo) continue;
          TermList tl{u.terms(*ms, j)};
          TermList one;
          one.add(complexd(1.0, 0.0), 0.0, 0);
          F += ang * c * pair_integral(one, tl, lo, hi, u.dim - 1.0);
        }
      }
    }
  }
  rep.source_pairing = F;
  double scale = std::max(std::abs(rep.sigma_grad_pairing), std::abs(F));
  if (scale > 0.0) {
    rep.pairing_residual = std::abs(rep.sigma_grad_pairing + F) / scale;
    rep.energy_residual = std::abs(std::imag(rep.sigma_grad_pairing + F)) / scale;
  }
  return rep;
}

// Associated Legendre without the Condon-Shortley phase; optionally with one
// factor of sin(theta) removed (for m >= 1), used for the phi-derivative.
static double assoc_P(int n, int m, double x, double s, bool drop_one_sin = false) {
  if (m < 0 || m > n) return 0.0;
  double pmm = 1.0;
  if (drop_one_sin && m >= 1) {
    for (int i = 1; i <= m; ++i) pmm *= (2 * i - 1);
    pmm *= rpow(std::abs(s), double(m - 1)) * (s < 0 ? ((m - 1) % 2 ? -1.0 : 1.0) : 1.0);
  } else {
    for (int i = 1; i <= m; ++i) pmm *= (2 * i - 1) * s;
  }
  if (n == m) return pmm;
  double pm1 = (2 * m + 1) * x * pmm;
  if (n == m + 1) return pm1;
  double p = 0.0;
  for (int l = m + 2; l <= n; ++l) {
    p = ((2 * l - 1) * x * pm1 - (l + m - 1) * pmm) / (l - m);
    pmm = pm1;
    pm1 = p;
  }
  return p;
}

static double sph_norm(int n, int m) {
  return std::sqrt((2.0 * n + 1.0) / (4.0 * M_PI) *
                   std::exp(std::lgamma(n - m + 1.0) - std::lgamma(n + m + 1.0)));
}

double real_sph_harm(int n, int k, double theta, double phi) {
  if (n < 0 || std::abs(k) > n) throw std::domain_error("real_sph_harm error: bad indices");
  if (n > 128) throw std::domain_error("real_sph_harm error: degree too large");
  int m = std::abs(k);
  double x = std::cos(theta), s = std::sin(theta);
  double base = sph_norm(n, m) * assoc_P(n, m, x, s);
  if (k == 0) return base;
  double sq2 = std::sqrt(2.0);
  return k > 0 ? sq2 * base * std::cos(m * phi) : sq2 * base * std::sin(m * phi);
}

void real_sph_harm_grad(int n, int k, double theta, double phi, double& dtheta,
                        double& dphi_over_sin) {
  if (n < 0 || std::abs(k) > n) throw std::domain_error("real_sph_harm error: bad indices");
  int m = std::abs(k);
  double x = std::cos(theta), s = std::sin(theta);
  double sguard = std::abs(s) < 1e-12 ? (s < 0.0 ? -1e-12 : 1e-12) : s;
  double Pn = assoc_P(n, m, x, s);
  double Pn1 = assoc_P(n - 1, m, x, s);
  double dP = (n * x * Pn - (n + m) * Pn1) / sguard;
  double N = sph_norm(n, m);
  double sq2 = std::sqrt(2.0);
  if (k == 0) {
    dtheta = N * dP;
    dphi_over_sin = 0.0;
    return;
  }
  double P_over_s = assoc_P(n, m, x, s, true);
  if (k > 0) {
    dtheta = sq2 * N * dP * std::cos(m * phi);
    dphi_over_sin = -sq2 * N * m * P_over_s * std::sin(m * phi);
  } else {
    dtheta = sq2 * N * dP * std::sin(m * phi);
    dphi_over_sin = sq2 * N * m * P_over_s * std::cos(m * phi);
  }
}

int threads_from_env() {
  const char* e = std::getenv("CLOAKSIM_THREADS");
  if (!e) return 0;
  char* end = nullptr;
  long v = std::strtol(e, &end, 10);
  if (end == e || v <= 0 || v > 1024) return 0;
  return int(v);
}

}  // namespace cloaksim::spectral
