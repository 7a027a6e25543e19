#include "cloaksim/gridsolver.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>
#include <variant>

#include <Eigen/SparseLU>

namespace cloaksim::grid {

namespace {

constexpr double kFaceTol = 1e-9;

// polar components of a Cartesian tensor at angle theta
struct PolarSigma {
  complexd rr, tt, rt;
};

PolarSigma rotate_to_polar(const MatC& s, double theta) {
  const double c = std::cos(theta), sn = std::sin(theta);
  const double off = std::abs(s(0, 1) - s(1, 0));
  const double scale = std::max({std::abs(s(0, 0)), std::abs(s(1, 1)), std::abs(s(0, 1)), 1.0});
  if (!(off <= 1e-10 * scale))
    throw std::runtime_error("assemble error: coefficient matrix must be symmetric");
  PolarSigma p;
  p.rr = c * c * s(0, 0) + 2.0 * c * sn * s(0, 1) + sn * sn * s(1, 1);
  p.tt = sn * sn * s(0, 0) - 2.0 * c * sn * s(0, 1) + c * c * s(1, 1);
  p.rt = c * sn * (s(1, 1) - s(0, 0)) + (c * c - sn * sn) * s(0, 1);
  return p;
}

// distance-weighted harmonic transmissibility; throws when a sample vanishes
// or the sign-changing pair cancels exactly
complexd transmissibility(double area, double d_lo, complexd s_lo, double d_hi, complexd s_hi) {
  if (std::abs(s_lo) == 0.0 || std::abs(s_hi) == 0.0)
    throw std::runtime_error("assemble error: coefficient vanishes at a flux point");
  const complexd den = d_lo / s_lo + d_hi / s_hi;
  const double den_scale = d_lo / std::abs(s_lo) + d_hi / std::abs(s_hi);
  if (!(std::abs(den) > 1e-14 * den_scale))
    throw std::runtime_error("assemble error: coefficient pair cancels at a flux point");
  return area / den;
}

// angular integral of the 2D mode basis over [a, b]
complexd angular_integral(spectral::ModeIndex m, double a, double b) {
  const int s = m.n == 0 ? 0 : (m.k < 0 ? -m.n : m.n);
  if (s == 0) return complexd(b - a, 0.0);
  const complexd is(0.0, double(s));
  return (std::exp(is * b) - std::exp(is * a)) / is;
}

// cellwise integral of the source terms
Eigen::VectorXcd integrate_source(const PolarGrid& g, const GridProblem& p) {
  Eigen::VectorXcd F = Eigen::VectorXcd::Zero(g.cells());
  for (const auto& s : p.sources) {
    if (std::holds_alternative<spectral::RingSource>(s)) {
      const auto& ring = std::get<spectral::RingSource>(s);
      const int f = g.face_near(ring.radius);
      if (f <= 0 || f >= g.n_r)
        throw std::runtime_error("assemble error: ring source radius must lie on an interior grid face");
      for (int j = 0; j < g.n_theta; ++j) {
        const double t0 = j * g.dtheta, t1 = (j + 1) * g.dtheta;
        complexd val{0.0, 0.0};
        for (const auto& [m, w] : ring.weights) val += w * angular_integral(m, t0, t1);
        val *= ring.radius * 0.5;  // line density split between the touching rings
        F[g.index(f - 1, j)] += val;
        F[g.index(f, j)] += val;
      }
    } else {
      const auto& an = std::get<spectral::AnnulusSource>(s);
      for (int i = 0; i < g.n_r; ++i) {
        const double lo = std::max(an.r_in, g.r_face[i]);
        const double hi = std::min(an.r_out, g.r_face[i + 1]);
        if (hi <= lo) continue;
        const double rad = 0.5 * (hi * hi - lo * lo);
        for (int j = 0; j < g.n_theta; ++j) {
          const double t0 = j * g.dtheta, t1 = (j + 1) * g.dtheta;
          complexd val{0.0, 0.0};
          for (const auto& [m, w] : an.densities) val += w * angular_integral(m, t0, t1);
          F[g.index(i, j)] += val * rad;
        }
      }
    }
  }
  if (p.density)
    for (int i = 0; i < g.n_r; ++i)
      for (int j = 0; j < g.n_theta; ++j)
        F[g.index(i, j)] += p.density(g.center(i, j)) * g.cell_volume(i);
  return F;
}

// sparse column 1-norm
double matrix_norm1(const Eigen::SparseMatrix<complexd>& m) {
  double best = 0.0;
  for (int k = 0; k < m.outerSize(); ++k) {
    double col = 0.0;
    for (Eigen::SparseMatrix<complexd>::InnerIterator it(m, k); it; ++it) col += std::abs(it.value());
    best = std::max(best, col);
  }
  return best;
}

// Hager-style 1-norm estimate of the inverse; the matrix is complex
// symmetric, so transpose solves reuse the same factorization
double inverse_norm1_estimate(const Eigen::SparseLU<Eigen::SparseMatrix<complexd>>& lu, int n) {
  Eigen::VectorXcd x = Eigen::VectorXcd::Constant(n, complexd(1.0 / n, 0.0));
  double best = 0.0;
  int last = -1;
  for (int iter = 0; iter < 5; ++iter) {
    Eigen::VectorXcd y = lu.solve(x);
    best = std::max(best, y.cwiseAbs().sum());
    Eigen::VectorXcd xi(n);
    for (int i = 0; i < n; ++i) {
      const double a = std::abs(y[i]);
      xi[i] = a > 0.0 ? y[i] / a : complexd(1.0, 0.0);
    }
    Eigen::VectorXcd z = lu.solve(xi.conjugate()).conjugate();
    int j = 0;
    double zj = 0.0;
    for (int i = 0; i < n; ++i)
      if (std::abs(z[i]) > zj) {
        zj = std::abs(z[i]);
        j = i;
      }
    if (j == last || zj <= std::real(z.dot(x)) + 1e-300) break;
    x.setZero();
    x[j] = complexd(1.0, 0.0);
    last = j;
  }
  return best;
}

}  // namespace

PolarGrid PolarGrid::make(int n_r, int n_theta, double outer_radius,
                          const std::vector<double>& snap) {
  if (n_r < 1) throw std::runtime_error("PolarGrid error: need at least one radial cell");
  if (n_theta < 4 || n_theta % 2 != 0)
    throw std::runtime_error("PolarGrid error: angular cell count must be even and at least 4");
  if (!(outer_radius > 0.0) || !std::isfinite(outer_radius))
    throw std::runtime_error("PolarGrid error: outer radius must be positive and finite");

  std::vector<double> cuts;
  for (double s : snap) {
    if (!(s > 0.0) || !std::isfinite(s))
      throw std::runtime_error("PolarGrid error: snap radii must be positive and finite");
    if (s >= outer_radius * (1.0 - kFaceTol)) continue;  // the boundary is already a face
    cuts.push_back(s);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end(),
                         [&](double a, double b) { return b - a <= kFaceTol * outer_radius; }),
             cuts.end());
  cuts.insert(cuts.begin(), 0.0);
  cuts.push_back(outer_radius);
  const int segs = int(cuts.size()) - 1;
  if (n_r < segs)
    throw std::runtime_error("PolarGrid error: more snap radii than radial cells");

  // proportional allocation, at least one cell per segment, exact total
  std::vector<int> count(segs, 1);
  std::vector<double> frac(segs, 0.0);
  int used = segs;
  for (int s = 0; s < segs; ++s) {
    const double raw = n_r * (cuts[s + 1] - cuts[s]) / outer_radius;
    const int extra = std::max(0, int(std::floor(raw)) - 1);
    count[s] += extra;
    used += extra;
    frac[s] = raw - std::floor(raw);
  }
  while (used < n_r) {
    int pick = int(std::max_element(frac.begin(), frac.end()) - frac.begin());
    count[pick] += 1;
    frac[pick] = -1.0;
    ++used;
  }
  while (used > n_r) {
    int pick = 0;
    for (int s = 1; s < segs; ++s)
      if (count[s] > count[pick]) pick = s;
    if (count[pick] <= 1) throw std::runtime_error("PolarGrid error: more snap radii than radial cells");
    count[pick] -= 1;
    --used;
  }

  PolarGrid g;
  g.n_r = n_r;
  g.n_theta = n_theta;
  g.outer_radius = outer_radius;
  g.dtheta = 2.0 * std::numbers::pi / n_theta;
  g.r_face.reserve(n_r + 1);
  g.r_face.push_back(0.0);
  for (int s = 0; s < segs; ++s)
    for (int k = 1; k <= count[s]; ++k)
      g.r_face.push_back(k == count[s] ? cuts[s + 1]
                                       : cuts[s] + (cuts[s + 1] - cuts[s]) * k / count[s]);
  g.r_center.resize(n_r);
  for (int i = 0; i < n_r; ++i) g.r_center[i] = 0.5 * (g.r_face[i] + g.r_face[i + 1]);
  return g;
}

double PolarGrid::cell_volume(int i) const {
  return 0.5 * (r_face[i + 1] * r_face[i + 1] - r_face[i] * r_face[i]) * dtheta;
}

Vec PolarGrid::center(int i, int j) const {
  Vec x(2);
  const double t = theta_center(j);
  x << r_center[i] * std::cos(t), r_center[i] * std::sin(t);
  return x;
}

int PolarGrid::face_near(double r, double tol) const {
  const double eps = tol * std::max(1.0, outer_radius);
  auto it = std::lower_bound(r_face.begin(), r_face.end(), r - eps);
  if (it != r_face.end() && std::abs(*it - r) <= eps) return int(it - r_face.begin());
  return -1;
}

complexd DiscreteField::at(int i, int j) const {
  if (i < 0 || i >= grid.n_r || j < 0 || j >= grid.n_theta)
    throw std::runtime_error("DiscreteField error: cell index out of range");
  return values[grid.index(i, j)];
}

GridSystem assemble(const CoefficientFn& sigma, const PolarGrid& g, const GridProblem& p,
                    int threads) {
  if (g.n_r < 2) throw std::runtime_error("assemble error: grid too coarse");
  const int nc = g.cells();

  // sample the rotated coefficient once per cell, in parallel by ring
  std::vector<PolarSigma> cell(nc);
  {
    int want = threads > 0 ? threads : spectral::threads_from_env();
    want = std::max(1, std::min(want, g.n_r));
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(want);
    auto work = [&](int t) {
      try {
        for (int i = t; i < g.n_r; i += want)
          for (int j = 0; j < g.n_theta; ++j)
            cell[g.index(i, j)] = rotate_to_polar(sigma(g.center(i, j)), g.theta_center(j));
      } catch (...) {
        errs[t] = std::current_exception();
      }
    };
    if (want == 1) {
      work(0);
    } else {
      pool.reserve(want);
      for (int t = 0; t < want; ++t) pool.emplace_back(work, t);
      for (auto& th : pool) th.join();
    }
    for (auto& e : errs)
      if (e) std::rethrow_exception(e);
  }

  GridSystem sys;
  sys.grid = g;
  sys.integrated_source = integrate_source(g, p);
  sys.boundary = Eigen::VectorXcd::Zero(g.n_theta);
  if (p.dirichlet)
    for (int j = 0; j < g.n_theta; ++j) sys.boundary[j] = p.dirichlet(g.theta_center(j));
  sys.rhs = -sys.integrated_source;

  std::vector<Eigen::Triplet<complexd>> trip;
  trip.reserve(size_t(nc) * 12);
  auto add = [&](int row, int col, complexd v) { trip.emplace_back(row, col, v); };

  for (int i = 0; i < g.n_r; ++i) {
    for (int j = 0; j < g.n_theta; ++j) {
      const int c = g.index(i, j);

      // radial face toward ring i+1 (each interior face assembled once)
      if (i + 1 < g.n_r) {
        const int h = g.index(i + 1, j);
        const double a = g.r_face[i + 1];
        const complexd T = transmissibility(a * g.dtheta, a - g.r_center[i], cell[c].rr,
                                            g.r_center[i + 1] - a, cell[h].rr);
        add(c, c, T);
        add(h, h, T);
        add(c, h, -T);
        add(h, c, -T);
      } else {
        // Dirichlet face on the outer circle
        const double d = g.outer_radius - g.r_center[i];
        if (std::abs(cell[c].rr) == 0.0)
          throw std::runtime_error("assemble error: coefficient vanishes at a flux point");
        const complexd T = g.outer_radius * g.dtheta * cell[c].rr / d;
        add(c, c, T);
        sys.rhs[c] += T * sys.boundary[j];
      }

      // angular face toward j+1 (periodic)
      {
        const int h = g.index(i, g.wrap(j + 1));
        const double dist = g.r_center[i] * g.dtheta;
        const double dr = g.r_face[i + 1] - g.r_face[i];
        const complexd T = transmissibility(dr, 0.5 * dist, cell[c].tt, 0.5 * dist, cell[h].tt);
        add(c, c, T);
        add(h, h, T);
        add(c, h, -T);
        add(h, c, -T);
      }

      // cross terms: symmetric cell-centered form
      //   vol * s_rt * (Gr(u) Gt(v) + Gt(u) Gr(v))
      // with Gr the mean of the face differences (Dirichlet ghost on the
      // boundary, one-sided at the origin) and Gt the centered difference
      if (std::abs(cell[c].rt) != 0.0) {
        std::vector<std::pair<int, double>> gr;
        double gr_const_scale = 0.0;  // multiplies the boundary value
        // mean of the available radial face differences; one-sided at the origin
        const double wr = i > 0 ? 0.5 : 1.0;
        if (i > 0) {
          const double d = g.r_center[i] - g.r_center[i - 1];
          gr.emplace_back(c, wr / d);
          gr.emplace_back(g.index(i - 1, j), -wr / d);
        }
        if (i + 1 < g.n_r) {
          const double d = g.r_center[i + 1] - g.r_center[i];
          gr.emplace_back(g.index(i + 1, j), wr / d);
          gr.emplace_back(c, -wr / d);
        } else {
          const double d = g.outer_radius - g.r_center[i];
          gr.emplace_back(c, -wr / d);
          gr_const_scale = wr / d;
        }
        const double gt_c = 1.0 / (2.0 * g.r_center[i] * g.dtheta);
        const std::pair<int, double> gt[2] = {{g.index(i, g.wrap(j + 1)), gt_c},
                                              {g.index(i, g.wrap(j - 1)), -gt_c}};
        const complexd w = g.cell_volume(i) * cell[c].rt;
        for (const auto& [ar, av] : gr)
          for (const auto& [bt, bv] : gt) {
            add(bt, ar, w * av * bv);  // Gr(u) Gt(v)
            add(ar, bt, w * av * bv);  // Gt(u) Gr(v)
          }
        if (gr_const_scale != 0.0)
          for (const auto& [bt, bv] : gt) sys.rhs[bt] -= w * gr_const_scale * sys.boundary[j] * bv;
      }
    }
  }

  sys.matrix.resize(nc, nc);
  sys.matrix.setFromTriplets(trip.begin(), trip.end());
  sys.matrix.makeCompressed();
  return sys;
}

GridSystem assemble(const media::Medium& m, const PolarGrid& g, const GridProblem& p,
                    int threads) {
  if (m.spec().dim != 2) throw std::runtime_error("assemble error: the grid oracle is two-dimensional");
  return assemble([&m](const Vec& x) { return m.sigma(x); }, g, p, threads);
}

GridSystem assemble(const xform::TensorField& a, const PolarGrid& g, const GridProblem& p,
                    int threads) {
  if (a.dim != 2) throw std::runtime_error("assemble error: the grid oracle is two-dimensional");
  return assemble([&a](const Vec& x) { return a.eval(x).cast<complexd>().eval(); }, g, p, threads);
}

GridSolution solve(const GridSystem& sys) {
  GridSolution out;
  out.field.grid = sys.grid;
  out.field.boundary = sys.boundary;
  out.stats.nonzeros = int(sys.matrix.nonZeros());

  Eigen::SparseLU<Eigen::SparseMatrix<complexd>> lu;
  lu.analyzePattern(sys.matrix);
  lu.factorize(sys.matrix);
  if (lu.info() != Eigen::Success) {
    out.field.values = Eigen::VectorXcd::Zero(sys.grid.cells());
    out.stats.message = "factorization failed: " + lu.lastErrorMessage();
    return out;
  }

  out.field.values = lu.solve(sys.rhs);
  const double bnorm = std::max(sys.rhs.norm(), 1e-300);
  out.stats.rel_residual = (sys.matrix * out.field.values - sys.rhs).norm() / bnorm;
  out.stats.condition_estimate =
      matrix_norm1(sys.matrix) * inverse_norm1_estimate(lu, sys.grid.cells());

  if (!out.field.values.allFinite()) {
    out.stats.message = "solution is not finite";
    out.field.values = Eigen::VectorXcd::Zero(sys.grid.cells());
    return out;
  }
  if (!(out.stats.rel_residual <= 1e-8)) {
    out.stats.message = "relative residual above 1e-8";
    return out;
  }
  if (!(out.stats.condition_estimate <= 1e14)) {
    out.stats.message = "condition estimate above trust threshold";
    return out;
  }
  out.stats.success = true;
  return out;
}

OracleComparison compare_with_spectral(const DiscreteField& u, const spectral::ModeExpansion& e,
                                       double r_in, double r_out,
                                       const std::vector<double>& exclude) {
  const PolarGrid& g = u.grid;
  OracleComparison rep;
  double err2 = 0.0, ref2 = 0.0;
  for (int i = 0; i < g.n_r; ++i) {
    const double rc = g.r_center[i];
    if (rc < r_in || rc >= r_out) continue;
    const double lo = g.r_face[std::max(0, i - 1)];
    const double hi = g.r_face[std::min(g.n_r, i + 2)];
    bool skip = false;
    for (double x : exclude)
      if (x >= lo && x <= hi) skip = true;
    if (skip) continue;
    const double vol = g.cell_volume(i);
    for (int j = 0; j < g.n_theta; ++j) {
      const complexd ref = e.value_at(g.center(i, j));
      const complexd diff = u.at(i, j) - ref;
      err2 += vol * std::norm(diff);
      ref2 += vol * std::norm(ref);
      rep.max_abs = std::max(rep.max_abs, std::abs(diff));
      ++rep.cells;
    }
  }
  rep.ref_l2 = std::sqrt(ref2);
  rep.rel_l2 = rep.ref_l2 > 0.0 ? std::sqrt(err2) / rep.ref_l2 : std::sqrt(err2);
  return rep;
}

double conservation_residual(const CoefficientFn& sigma, const PolarGrid& g,
                             const GridProblem& p, const DiscreteField& u) {
  const Eigen::VectorXcd F = integrate_source(g, p);
  Eigen::VectorXcd bnd = Eigen::VectorXcd::Zero(g.n_theta);
  if (p.dirichlet)
    for (int j = 0; j < g.n_theta; ++j) bnd[j] = p.dirichlet(g.theta_center(j));

  std::vector<complexd> s(g.cells());
  for (int i = 0; i < g.n_r; ++i)
    for (int j = 0; j < g.n_theta; ++j) {
      const MatC m = sigma(g.center(i, j));
      const double scale = std::max(std::abs(m(0, 0)), 1.0);
      if (std::abs(m(0, 1)) > 1e-10 * scale || std::abs(m(1, 0)) > 1e-10 * scale ||
          std::abs(m(0, 0) - m(1, 1)) > 1e-10 * scale)
        throw std::runtime_error(
            "conservation_residual error: the flux reconstruction needs an isotropic coefficient");
      s[g.index(i, j)] = m(0, 0);
    }

  double worst = 0.0;
  for (int i = 0; i < g.n_r; ++i)
    for (int j = 0; j < g.n_theta; ++j) {
      const int c = g.index(i, j);
      complexd net{0.0, 0.0};
      double scale = std::max(std::abs(F[c]), 1e-300);
      auto account = [&](complexd flux) {
        net += flux;
        scale = std::max(scale, std::abs(flux));
      };
      if (i > 0) {
        const double a = g.r_face[i];
        const complexd T = transmissibility(a * g.dtheta, a - g.r_center[i - 1],
                                            s[g.index(i - 1, j)], g.r_center[i] - a, s[c]);
        account(T * (u.at(i - 1, j) - u.at(i, j)));
      }
      if (i + 1 < g.n_r) {
        const double a = g.r_face[i + 1];
        const complexd T = transmissibility(a * g.dtheta, a - g.r_center[i], s[c],
                                            g.r_center[i + 1] - a, s[g.index(i + 1, j)]);
        account(T * (u.at(i + 1, j) - u.at(i, j)));
      } else {
        const double d = g.outer_radius - g.r_center[i];
        const complexd T = g.outer_radius * g.dtheta * s[c] / d;
        account(T * (bnd[j] - u.at(i, j)));
      }
      for (int dj : {-1, 1}) {
        const int h = g.index(i, g.wrap(j + dj));
        const double dist = g.r_center[i] * g.dtheta;
        const double dr = g.r_face[i + 1] - g.r_face[i];
        const complexd T = transmissibility(dr, 0.5 * dist, s[c], 0.5 * dist, s[h]);
        account(T * (u.values[h] - u.at(i, j)));
      }
      worst = std::max(worst, std::abs(net - F[c]) / scale);
    }
  return worst;
}

}  // namespace cloaksim::grid
