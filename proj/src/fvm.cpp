#include "birdflux/fvm.hpp"

#include <algorithm>
#include <cmath>

#include "birdflux/errors.hpp"

namespace birdflux::fvm {

double upwind_flux(double rho_i, double rho_j, Vec2 v_i, Vec2 v_j, double face_length, Vec2 normal, double dt) {
  const Vec2 v_face = (v_i + v_j) * 0.5;
  const double a = dot(normal, v_face);
  const double a_plus = std::max(0.0, a);
  const double a_minus = std::min(0.0, a);
  return face_length * dt * (a_plus * rho_i + a_minus * rho_j);
}

double flowrate_flux(double a_ji, double a_ij, double rho_i, double rho_j, double area_i, double area_j) {
  return a_ji * area_i * rho_i - a_ij * area_j * rho_j;
}

double source_sink(double delta, double gamma, double rho) { return gamma - delta * rho; }

std::vector<double> upwind_fluxes(const Tessellation& tess, std::span<const double> rho, std::span<const double> vx,
                                  std::span<const double> vy, double dt) {
  std::vector<double> out(tess.faces.size());
  for (std::size_t f = 0; f < tess.faces.size(); ++f) {
    const Face& face = tess.faces[f];
    out[f] = upwind_flux(rho[face.i], rho[face.j], {vx[face.i], vy[face.i]}, {vx[face.j], vy[face.j]}, face.length,
                         face.normal, dt);
  }
  return out;
}

std::vector<double> net_outflow(const Tessellation& tess, std::span<const double> flux) {
  std::vector<double> out(tess.num_cells(), 0.0);
  for (std::size_t f = 0; f < tess.faces.size(); ++f) {
    out[tess.faces[f].i] += flux[f];
    out[tess.faces[f].j] -= flux[f];
  }
  return out;
}

std::vector<double> continuity_step(const Tessellation& tess, std::span<const double> rho, std::span<const double> flux,
                                    std::span<const double> source) {
  const std::vector<double> out_flux = net_outflow(tess, flux);
  std::vector<double> next(rho.begin(), rho.end());
  for (int i = 0; i < tess.num_cells(); ++i) {
    if (tess.is_boundary[i]) continue;
    next[i] = rho[i] - out_flux[i] / tess.areas[i] + source[i];
  }
  return apply_boundary(tess, next);
}

std::vector<double> apply_boundary(const Tessellation& tess, std::span<const double> field) {
  std::vector<double> out(field.begin(), field.end());
  for (int i = 0; i < tess.num_cells(); ++i) {
    if (!tess.is_boundary[i]) continue;
    double total = 0.0;
    int count = 0;
    for (const int j : tess.adjacency[i]) {
      if (tess.is_boundary[j]) continue;
      total += field[j];
      ++count;
    }
    if (count == 0) throw ConfigError("boundary cell " + std::to_string(i) + " has no interior neighbor");
    out[i] = total / count;
  }
  return out;
}

ad::SparseMatrix boundary_operator(const Tessellation& tess) {
  std::vector<Eigen::Triplet<double>> trip;
  for (int i = 0; i < tess.num_cells(); ++i) {
    if (!tess.is_boundary[i]) {
      trip.emplace_back(i, i, 1.0);
      continue;
    }
    std::vector<int> inner;
    for (const int j : tess.adjacency[i])
      if (!tess.is_boundary[j]) inner.push_back(j);
    if (inner.empty()) throw ConfigError("boundary cell " + std::to_string(i) + " has no interior neighbor");
    for (const int j : inner) trip.emplace_back(i, j, 1.0 / static_cast<double>(inner.size()));
  }
  ad::SparseMatrix m(tess.num_cells(), tess.num_cells());
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

double cfl_number(const Tessellation& tess, double max_speed, double dt) {
  double worst = 0.0;
  for (int i = 0; i < tess.num_cells(); ++i) {
    const double per = perimeter(tess.cells[i]);
    worst = std::max(worst, max_speed * dt * per / tess.areas[i]);
  }
  return worst;
}

std::vector<LedgerEntry> mass_ledger(const Tessellation& tess, const ForecastRun& run) {
  auto interior_mass = [&](const std::vector<double>& rho) {
    double m = 0.0;
    for (int i = 0; i < tess.num_cells(); ++i)
      if (!tess.is_boundary[i]) m += rho[i] * tess.areas[i];
    return m;
  };
  auto negatives = [](const std::vector<double>& rho) {
    return static_cast<int>(std::count_if(rho.begin(), rho.end(), [](double r) { return r < 0.0; }));
  };
  std::vector<LedgerEntry> ledger;
  ledger.push_back({0, interior_mass(run.initial_density), 0.0, 0.0, negatives(run.initial_density)});
  for (int k = 0; k < run.horizon(); ++k) {
    const StepRecord& s = run.steps[k];
    LedgerEntry e;
    e.step = k + 1;
    e.interior_mass = interior_mass(s.density);
    for (std::size_t f = 0; f < tess.faces.size(); ++f) {
      const Face& face = tess.faces[f];
      const bool bi = tess.is_boundary[face.i], bj = tess.is_boundary[face.j];
      if (!bi && bj) e.boundary_outflow += s.flux[f];
      if (bi && !bj) e.boundary_outflow -= s.flux[f];
    }
    for (int i = 0; i < tess.num_cells(); ++i)
      if (!tess.is_boundary[i]) e.net_source += s.source_sink[i] * tess.areas[i];
    e.negative_cells = negatives(s.density);
    ledger.push_back(e);
  }
  return ledger;
}

double ledger_residual(const std::vector<LedgerEntry>& ledger) {
  double worst = 0.0;
  for (std::size_t k = 1; k < ledger.size(); ++k) {
    const LedgerEntry& a = ledger[k - 1];
    const LedgerEntry& b = ledger[k];
    const double resid = b.interior_mass - (a.interior_mass - b.boundary_outflow + b.net_source);
    const double ref = std::max({std::abs(a.interior_mass), std::abs(b.interior_mass), std::abs(b.boundary_outflow),
                                 std::abs(b.net_source), 1e-300});
    worst = std::max(worst, std::abs(resid) / ref);
  }
  return worst;
}

GraphOps::GraphOps(const Tessellation& tess, int batch_size, double dt)
    : num_cells(tess.num_cells()), batch(batch_size) {
  const int nf = tess.num_faces();
  normals.resize(static_cast<Eigen::Index>(nf) * batch, 2);
  length_dt.resize(static_cast<Eigen::Index>(nf) * batch, 1);
  inv_area.resize(rows(), 1);
  area.resize(rows(), 1);
  for (int b = 0; b < batch; ++b) {
    const int off = b * num_cells;
    for (int f = 0; f < nf; ++f) {
      const Face& face = tess.faces[f];
      const Eigen::Index r = static_cast<Eigen::Index>(b) * nf + f;
      face_i.push_back(face.i + off);
      face_j.push_back(face.j + off);
      normals(r, 0) = face.normal.x;
      normals(r, 1) = face.normal.y;
      length_dt(r, 0) = face.length * dt;
    }
    for (int i = 0; i < num_cells; ++i) {
      area(off + i, 0) = tess.areas[i];
      inv_area(off + i, 0) = 1.0 / tess.areas[i];
    }
  }
  const ad::SparseMatrix single = boundary_operator(tess);
  std::vector<Eigen::Triplet<double>> trip;
  for (int b = 0; b < batch; ++b) {
    const int off = b * num_cells;
    for (int r = 0; r < single.outerSize(); ++r)
      for (ad::SparseMatrix::InnerIterator it(single, r); it; ++it)
        trip.emplace_back(off + r, off + static_cast<int>(it.col()), it.value());
  }
  auto m = std::make_shared<ad::SparseMatrix>(rows(), rows());
  m->setFromTriplets(trip.begin(), trip.end());
  boundary = std::move(m);
}

ad::Var upwind_fluxes(const GraphOps& g, const ad::Var& rho, const ad::Var& velocity) {
  ad::Tape& t = rho.tape();
  const ad::Var vi = ad::gather_rows(velocity, g.face_i);
  const ad::Var vj = ad::gather_rows(velocity, g.face_j);
  const ad::Var v_face = ad::scale(ad::add(vi, vj), 0.5);
  const ad::Var proj = ad::matmul(ad::mul(v_face, t.constant(g.normals)), t.constant(ad::Matrix::Ones(2, 1)));
  const ad::Var up = ad::mul(ad::pos(proj), ad::gather_rows(rho, g.face_i));
  const ad::Var down = ad::mul(ad::neg(proj), ad::gather_rows(rho, g.face_j));
  return ad::mul(t.constant(g.length_dt), ad::add(up, down));
}

ad::Var flowrate_fluxes(const GraphOps& g, const ad::Var& rho, const ad::Var& a_out, const ad::Var& a_in) {
  ad::Tape& t = rho.tape();
  const ad::Var mass = ad::mul(rho, t.constant(g.area));
  const ad::Var out = ad::mul(a_out, ad::gather_rows(mass, g.face_i));
  const ad::Var in = ad::mul(a_in, ad::gather_rows(mass, g.face_j));
  return ad::sub(out, in);
}

ad::Var net_outflow(const GraphOps& g, const ad::Var& flux) {
  return ad::sub(ad::scatter_add_rows(flux, g.face_i, g.rows()), ad::scatter_add_rows(flux, g.face_j, g.rows()));
}

ad::Var source_sink(const ad::Var& delta, const ad::Var& gamma, const ad::Var& rho) {
  return ad::sub(gamma, ad::mul(delta, rho));
}

ad::Var continuity_step(const GraphOps& g, const ad::Var& rho, const ad::Var& flux, const ad::Var& source) {
  ad::Tape& t = rho.tape();
  const ad::Var div = ad::mul(net_outflow(g, flux), t.constant(g.inv_area));
  return apply_boundary(g, ad::add(ad::sub(rho, div), source));
}

ad::Var apply_boundary(const GraphOps& g, const ad::Var& field) { return ad::spmm(g.boundary, field); }

}  // namespace birdflux::fvm
