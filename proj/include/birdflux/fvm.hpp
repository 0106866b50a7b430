#pragma once

#include <memory>
#include <span>
#include <vector>

#include "birdflux/autodiff.hpp"
#include "birdflux/run.hpp"
#include "birdflux/tessellation.hpp"

namespace birdflux::fvm {

// Scalar kernels ---------------------------------------------------------------

/// First-order upwind flux through face f_ij integrated over dt:
/// |f_ij| (a+ rho_i + a- rho_j) dt with a+- the positive/negative part of n^T (v_i + v_j)/2.
double upwind_flux(double rho_i, double rho_j, Vec2 v_i, Vec2 v_j, double face_length, Vec2 normal, double dt = 1.0);

/// Mass-flow-rate flux F_ij = A_ji V_i rho_i - A_ij V_j rho_j (A_ji moves mass out of i).
double flowrate_flux(double a_ji, double a_ij, double rho_i, double rho_j, double area_i, double area_j);

/// s = gamma - delta * rho.
double source_sink(double delta, double gamma, double rho);

// Field kernels ------------------------------------------------------------------

/// Upwind flux for every face of `tess`.
std::vector<double> upwind_fluxes(const Tessellation& tess, std::span<const double> rho, std::span<const double> vx,
                                  std::span<const double> vy, double dt = 1.0);

/// Net flux leaving each cell: sum over faces of F_{i->j}.
std::vector<double> net_outflow(const Tessellation& tess, std::span<const double> flux);

/// Explicit continuity update of interior cells followed by the boundary rule.
std::vector<double> continuity_step(const Tessellation& tess, std::span<const double> rho, std::span<const double> flux,
                                    std::span<const double> source);

/// Boundary cells take the mean of their interior neighbors; interior cells are untouched.
std::vector<double> apply_boundary(const Tessellation& tess, std::span<const double> field);

/// Sparse linear form of apply_boundary (n x n).
ad::SparseMatrix boundary_operator(const Tessellation& tess);

/// Largest |n^T v| dt perimeter / area over all cells for a uniform speed bound.
double cfl_number(const Tessellation& tess, double max_speed, double dt);

// Mass accounting --------------------------------------------------------------

struct LedgerEntry {
  int step = 0;
  double interior_mass = 0.0;     // after the step
  double boundary_outflow = 0.0;  // flux from interior into boundary cells during the step
  double net_source = 0.0;        // sum of s_i |C_i| over interior cells during the step
  int negative_cells = 0;
};

/// Per-step decomposition satisfying
/// interior_mass(k) = interior_mass(k-1) - boundary_outflow(k) + net_source(k).
/// Entry 0 holds the initial interior mass.
std::vector<LedgerEntry> mass_ledger(const Tessellation& tess, const ForecastRun& run);

/// Largest relative violation of the ledger identity over all steps.
double ledger_residual(const std::vector<LedgerEntry>& ledger);

// Differentiable kernels -------------------------------------------------------

/// Face/cell index structure for `batch` disjoint copies of a tessellation, laid out
/// cell-major per copy (row b * n + i). Geometry is taken as given (already scaled).
struct GraphOps {
  int num_cells = 0;  // per copy
  int batch = 1;
  ad::IndexList face_i;
  ad::IndexList face_j;
  ad::Matrix normals;        // faces x 2
  ad::Matrix length_dt;      // faces x 1
  ad::Matrix inv_area;       // rows x 1
  ad::Matrix area;           // rows x 1
  std::shared_ptr<const ad::SparseMatrix> boundary;

  GraphOps(const Tessellation& tess, int batch, double dt);
  int rows() const { return num_cells * batch; }
  int faces() const { return static_cast<int>(face_i.size()); }
};

ad::Var upwind_fluxes(const GraphOps& g, const ad::Var& rho, const ad::Var& velocity);
/// `a_out` holds A_ji (fraction leaving i across each face), `a_in` holds A_ij.
ad::Var flowrate_fluxes(const GraphOps& g, const ad::Var& rho, const ad::Var& a_out, const ad::Var& a_in);
ad::Var net_outflow(const GraphOps& g, const ad::Var& flux);
ad::Var source_sink(const ad::Var& delta, const ad::Var& gamma, const ad::Var& rho);
/// rho - outflow / |C| + s, then the boundary rule.
ad::Var continuity_step(const GraphOps& g, const ad::Var& rho, const ad::Var& flux, const ad::Var& source);
ad::Var apply_boundary(const GraphOps& g, const ad::Var& field);

}  // namespace birdflux::fvm
