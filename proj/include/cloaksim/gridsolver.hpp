// Finite-volume oracle for div(sigma grad u) = f on a 2D disk with Dirichlet
// data. Cell-centered polar grid with material interfaces aligned to cell
// faces; conservative two-point fluxes for the diagonal polar tensor entries
// and a symmetric cell-centered form for the cross terms, so the assembled
// system is complex symmetric. This path never sees the modal structure and
// cross-validates the exact layered solver.

#ifndef CLOAKSIM_GRIDSOLVER_HPP
#define CLOAKSIM_GRIDSOLVER_HPP

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "cloaksim/common.hpp"
#include "cloaksim/media.hpp"
#include "cloaksim/spectral.hpp"
#include "cloaksim/transforms.hpp"

namespace cloaksim::grid {

// Cell-centered polar grid. Radial faces are piecewise uniform with every
// snap radius landing exactly on a face; angular spacing is uniform and
// periodic.
struct PolarGrid {
  int n_r = 0;
  int n_theta = 0;
  double outer_radius = 0.0;
  std::vector<double> r_face;    // n_r + 1 ascending, front == 0, back == outer_radius
  std::vector<double> r_center;  // cell midpoints
  double dtheta = 0.0;

  static PolarGrid make(int n_r, int n_theta, double outer_radius,
                        const std::vector<double>& snap = {});

  int cells() const { return n_r * n_theta; }
  int index(int i, int j) const { return i * n_theta + j; }
  int wrap(int j) const { return (j % n_theta + n_theta) % n_theta; }
  double theta_center(int j) const { return (j + 0.5) * dtheta; }
  double cell_volume(int i) const;
  Vec center(int i, int j) const;
  // index of the face within relative tolerance of r, or -1
  int face_near(double r, double tol = 1e-9) const;
};

// One assembled problem: modal sources (rings must sit on grid faces, the
// line density splitting evenly between the touching rings), an optional
// volumetric density integrated by the midpoint rule, and Dirichlet data on
// the outer circle (empty = homogeneous).
struct GridProblem {
  std::vector<spectral::ModalSource> sources;
  std::function<complexd(const Vec&)> density;
  std::function<complexd(double)> dirichlet;
};

struct DiscreteField {
  PolarGrid grid;
  Eigen::VectorXcd values;    // one per cell center
  Eigen::VectorXcd boundary;  // Dirichlet samples on the outer ring, n_theta of them

  complexd at(int i, int j) const;
};

struct GridSystem {
  PolarGrid grid;
  Eigen::SparseMatrix<complexd> matrix;  // complex symmetric
  Eigen::VectorXcd rhs;
  Eigen::VectorXcd integrated_source;  // cellwise integral of f
  Eigen::VectorXcd boundary;           // Dirichlet samples used in the rhs
};

// Pointwise coefficient in Cartesian components; must be symmetric with
// nonvanishing diagonal after rotation to polar axes.
using CoefficientFn = std::function<MatC(const Vec&)>;

GridSystem assemble(const CoefficientFn& sigma, const PolarGrid& g, const GridProblem& p,
                    int threads = 0);
GridSystem assemble(const media::Medium& m, const PolarGrid& g, const GridProblem& p,
                    int threads = 0);
GridSystem assemble(const xform::TensorField& a, const PolarGrid& g, const GridProblem& p,
                    int threads = 0);

struct GridStats {
  bool success = false;
  double rel_residual = 0.0;        // ||M u - b|| / ||b||
  double condition_estimate = 0.0;  // 1-norm, Hager-style
  int nonzeros = 0;
  std::string message;
};

struct GridSolution {
  DiscreteField field;
  GridStats stats;
};

// Direct sparse LU. Never throws on numerical breakdown: a failed or
// untrustworthy factorization comes back with success = false and a message.
GridSolution solve(const GridSystem& sys);

struct OracleComparison {
  double rel_l2 = 0.0;
  double max_abs = 0.0;
  double ref_l2 = 0.0;
  int cells = 0;
};

// Volume-weighted errors against the layered expansion on cell centers with
// r_in <= r < r_out, skipping one ring of cells on either side of every
// excluded radius (material interfaces, source rings).
OracleComparison compare_with_spectral(const DiscreteField& u, const spectral::ModeExpansion& e,
                                       double r_in, double r_out,
                                       const std::vector<double>& exclude = {});

// Double-entry check for isotropic coefficients: reconstructs the two-point
// face fluxes from the solved field and returns the worst interior cell
// imbalance |sum of outward fluxes - integrated source| relative to the
// largest flux through that cell.
double conservation_residual(const CoefficientFn& sigma, const PolarGrid& g,
                             const GridProblem& p, const DiscreteField& u);

}  // namespace cloaksim::grid

#endif
