#include <doctest.h>

#include <cmath>
#include <random>

#include "birdflux/errors.hpp"
#include "birdflux/fvm.hpp"
#include "gradcheck.hpp"
#include "gradient_suites.hpp"

using namespace birdflux;
namespace ad = birdflux::ad;

namespace {

std::vector<double> random_vector(int n, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

double mass(const Tessellation& t, const std::vector<double>& rho) {
  double m = 0.0;
  for (int i = 0; i < t.num_cells(); ++i) m += rho[i] * t.areas[i];
  return m;
}

}  // namespace

TEST_CASE("upwind flux examples") {
  CHECK(fvm::upwind_flux(5, 99, {0, 0}, {0, 0}, 10, {1, 0}) == 0.0);
  CHECK(fvm::upwind_flux(5, 99, {2, 0}, {2, 0}, 10, {1, 0}, 1.0) == 100.0);
  CHECK(fvm::upwind_flux(5, 99, {-2, 0}, {-2, 0}, 10, {1, 0}, 1.0) == -10.0 * 2.0 * 99.0);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto v = random_vector(8, rng, -5, 5);
    const Vec2 n = Vec2{v[6], v[7]} * (1.0 / norm({v[6], v[7]}));
    const double f = fvm::upwind_flux(std::abs(v[0]), std::abs(v[1]), {v[2], v[3]}, {v[4], v[5]}, 3.0, n, 0.5);
    const double r = fvm::upwind_flux(std::abs(v[1]), std::abs(v[0]), {v[4], v[5]}, {v[2], v[3]}, 3.0, -n, 0.5);
    CHECK(f == -r);
  }
}

TEST_CASE("flow-rate flux and source-sink examples") {
  CHECK(fvm::flowrate_flux(0, 0, 3, 4, 2, 5) == 0.0);
  CHECK(fvm::flowrate_flux(0.5, 0.0, 3, 4, 2, 5) == doctest::Approx(3.0));
  CHECK(fvm::flowrate_flux(0.3, 0.3, 4, 4, 2, 2) == 0.0);
  CHECK(fvm::source_sink(0, 0, 5) == 0.0);
  CHECK(fvm::source_sink(1, 0, 7) == -7.0);
  CHECK(fvm::source_sink(0.25, 2, 8) == 0.0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    const double rho = 100 * u(rng);
    CHECK(rho + fvm::source_sink(u(rng), 10 * u(rng), rho) >= 0.0);
  }
}

TEST_CASE("continuity step identities") {
  const Tessellation t = build_hex_patch({0, 0}, 2, 137.5);
  std::mt19937_64 rng(3);
  const auto rho = random_vector(t.num_cells(), rng, 0, 50);
  const std::vector<double> zero_f(t.num_faces(), 0.0), zero_s(t.num_cells(), 0.0);
  const auto same = fvm::continuity_step(t, rho, zero_f, zero_s);
  const auto bnd = fvm::apply_boundary(t, rho);
  for (int i = 0; i < t.num_cells(); ++i) CHECK(same[i] == bnd[i]);

  // Random fluxes: compare against a per-cell ledger that visits every face from both sides.
  const auto flux = random_vector(t.num_faces(), rng, -2e4, 2e4);
  const auto next = fvm::continuity_step(t, rho, flux, zero_s);
  double interior_before = 0.0, interior_after = 0.0, boundary_before = 0.0, boundary_after = 0.0, exchanged = 0.0;
  for (int i = 0; i < t.num_cells(); ++i) {
    if (t.is_boundary[i]) {
      boundary_before += rho[i] * t.areas[i];
      boundary_after += next[i] * t.areas[i];
      continue;
    }
    interior_before += rho[i] * t.areas[i];
    interior_after += next[i] * t.areas[i];
    for (const int j : t.adjacency[i]) {
      const int f = t.face_index(i, j);
      exchanged += t.faces[f].i == i ? flux[f] : -flux[f];
    }
  }
  const double total = mass(t, rho);
  CHECK(std::abs(interior_after - (interior_before - exchanged)) < 1e-12 * total);
  CHECK(std::abs(mass(t, next) - (total - exchanged - (boundary_before - boundary_after))) < 1e-12 * total);
}

TEST_CASE("two-cell system conserves mass") {
  Tessellation t;
  t.cells = {{{0, 0}, {1, 0}, {1, 1}, {0, 1}}, {{1, 0}, {3, 0}, {3, 1}, {1, 1}}};
  t.centers = {{0.5, 0.5}, {2, 0.5}};
  t.areas = {1.0, 2.0};
  t.faces = {{0, 1, 1.0, {1, 0}}};
  t.adjacency = {{1}, {0}};
  t.cell_faces = {{0}, {0}};
  t.is_boundary = {0, 0};
  const std::vector<double> rho{3.0, 7.0};
  const double f = fvm::upwind_flux(rho[0], rho[1], {0.4, 0}, {0.2, 0}, 1.0, {1, 0});
  const auto next = fvm::continuity_step(t, rho, std::vector<double>{f}, std::vector<double>{0, 0});
  CHECK(std::abs(mass(t, next) - mass(t, rho)) < 1e-12);
}

TEST_CASE("boundary rule") {
  const Tessellation t = build_hex_patch({0, 0}, 2, 100);
  const std::vector<double> constant(t.num_cells(), 4.5);
  for (double v : fvm::apply_boundary(t, constant)) CHECK(v == 4.5);
  std::mt19937_64 rng(5);
  const auto field = random_vector(t.num_cells(), rng, -1, 1);
  const auto once = fvm::apply_boundary(t, field);
  const auto twice = fvm::apply_boundary(t, once);
  for (int i = 0; i < t.num_cells(); ++i) {
    CHECK(once[i] == twice[i]);
    if (!t.is_boundary[i]) CHECK(once[i] == field[i]);
  }
  // A boundary cell with interior neighbors valued 2 and 4.
  for (int b : t.boundary_cells()) {
    std::vector<int> inner;
    for (int j : t.adjacency[b])
      if (!t.is_boundary[j]) inner.push_back(j);
    if (inner.size() != 2) continue;
    std::vector<double> f(t.num_cells(), 0.0);
    f[inner[0]] = 2;
    f[inner[1]] = 4;
    CHECK(fvm::apply_boundary(t, f)[b] == 3.0);
    break;
  }
  // The sparse form agrees with the direct rule.
  const auto op = fvm::boundary_operator(t);
  Eigen::Map<const Eigen::VectorXd> fv(field.data(), field.size());
  const Eigen::VectorXd applied = op * fv;
  for (int i = 0; i < t.num_cells(); ++i) CHECK(applied[i] == doctest::Approx(once[i]).epsilon(1e-15));

  Tessellation isolated = t;
  for (int i = 0; i < isolated.num_cells(); ++i) isolated.is_boundary[i] = 1;
  CHECK_THROWS_AS(fvm::apply_boundary(isolated, field), ConfigError);
  CHECK_THROWS_AS(validate_boundary_rule(isolated), ConfigError);
}

TEST_CASE("upwind keeps densities nonnegative under the CFL bound") {
  const Tessellation t = build_hex_tessellation({0, 1200, 0, 1000}, 100);
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto rho = random_vector(t.num_cells(), rng, 0, 100);
    const double vmax = 30.0;
    const double dt = 0.99 / fvm::cfl_number(t, vmax, 1.0);
    REQUIRE(fvm::cfl_number(t, vmax, dt) <= 1.0);
    for (int step = 0; step < 10; ++step) {
      // Random directions with speed at most vmax.
      auto ang = random_vector(t.num_cells(), rng, 0, 2 * M_PI);
      auto spd = random_vector(t.num_cells(), rng, 0, vmax);
      std::vector<double> vx(t.num_cells()), vy(t.num_cells());
      for (int i = 0; i < t.num_cells(); ++i) {
        vx[i] = spd[i] * std::cos(ang[i]);
        vy[i] = spd[i] * std::sin(ang[i]);
      }
      const auto flux = fvm::upwind_fluxes(t, rho, vx, vy, dt);
      rho = fvm::continuity_step(t, rho, flux, std::vector<double>(t.num_cells(), 0.0));
      for (double r : rho) CHECK(r >= 0.0);
    }
  }
}

TEST_CASE("mass ledger") {
  const Tessellation t = build_hex_patch({0, 0}, 3, 137.5);
  const int n = t.num_cells();
  std::mt19937_64 rng(9);
  auto run_with = [&](bool moving, double gamma, double delta) {
    ForecastRun run;
    run.initial_density = fvm::apply_boundary(t, random_vector(n, rng, 0, 80));
    std::vector<double> rho = run.initial_density;
    for (int k = 0; k < 12; ++k) {
      StepRecord s;
      s.vx = moving ? random_vector(n, rng, -20, 20) : std::vector<double>(n, 0.0);
      s.vy = moving ? random_vector(n, rng, -20, 20) : std::vector<double>(n, 0.0);
      s.delta.assign(n, delta);
      s.gamma.assign(n, gamma);
      s.flux = fvm::upwind_fluxes(t, rho, s.vx, s.vy);
      for (int i = 0; i < n; ++i) s.source_sink.push_back(fvm::source_sink(delta, gamma, rho[i]));
      rho = fvm::continuity_step(t, rho, s.flux, s.source_sink);
      s.density = rho;
      run.steps.push_back(std::move(s));
    }
    return run;
  };
  const auto closed = fvm::mass_ledger(t, run_with(false, 0, 0));
  for (const auto& e : closed) CHECK(e.interior_mass == doctest::Approx(closed[0].interior_mass).epsilon(1e-14));
  const auto growing = fvm::mass_ledger(t, run_with(false, 3.0, 0.0));
  for (std::size_t k = 1; k < growing.size(); ++k) CHECK(growing[k].interior_mass > growing[k - 1].interior_mass);
  for (int trial = 0; trial < 5; ++trial) {
    const auto ledger = fvm::mass_ledger(t, run_with(true, 1.5, 0.2));
    CHECK(fvm::ledger_residual(ledger) < 1e-9);
    CHECK(ledger.size() == 13);
  }
}

TEST_CASE("differentiable kernels agree with scalar kernels and match finite differences") {
  const Tessellation t = build_hex_patch({0, 0}, 1, 1.375);
  const int n = t.num_cells();
  const int batch = 2;
  const fvm::GraphOps g(t, batch, 1.0);
  CHECK(g.rows() == n * batch);
  CHECK(g.faces() == t.num_faces() * batch);
  const ad::Matrix rho = testing::random_matrix(n * batch, 1, 1, 0, 2);
  const ad::Matrix vel = testing::random_matrix(n * batch, 2, 2, -1, 1);
  const ad::Matrix src = testing::random_matrix(n * batch, 1, 3, -0.1, 0.1);

  ad::Tape tape;
  const auto r = tape.constant(rho), v = tape.constant(vel), s = tape.constant(src);
  const auto flux = fvm::upwind_fluxes(g, r, v);
  const auto next = fvm::continuity_step(g, r, flux, s);
  for (int b = 0; b < batch; ++b) {
    std::vector<double> rr(n), vx(n), vy(n), ss(n);
    for (int i = 0; i < n; ++i) {
      rr[i] = rho(b * n + i, 0);
      vx[i] = vel(b * n + i, 0);
      vy[i] = vel(b * n + i, 1);
      ss[i] = src(b * n + i, 0);
    }
    const auto f = fvm::upwind_fluxes(t, rr, vx, vy);
    const auto nx = fvm::continuity_step(t, rr, f, ss);
    for (int k = 0; k < t.num_faces(); ++k)
      CHECK(flux.value()(b * t.num_faces() + k, 0) == doctest::Approx(f[k]).epsilon(1e-14));
    for (int i = 0; i < n; ++i) CHECK(next.value()(b * n + i, 0) == doctest::Approx(nx[i]).epsilon(1e-13));
  }

  for (const auto& r : testing::fvm_kernel_suite()) {
    INFO(r.name);
    CHECK(r.max_rel_error < 1e-4);
  }

  const ad::Matrix a_out = testing::random_matrix(g.faces(), 1, 5, 0, 1);
  const ad::Matrix a_in = testing::random_matrix(g.faces(), 1, 6, 0, 1);
  ad::Tape t2;
  const auto flow = fvm::flowrate_fluxes(g, t2.constant(rho), t2.constant(a_out), t2.constant(a_in));
  for (int k = 0; k < t.num_faces(); ++k) {
    const Face& face = t.faces[k];
    CHECK(flow.value()(k, 0) == doctest::Approx(fvm::flowrate_flux(a_out(k, 0), a_in(k, 0), rho(face.i, 0),
                                                                   rho(face.j, 0), t.areas[face.i], t.areas[face.j]))
                                    .epsilon(1e-14));
  }
}
