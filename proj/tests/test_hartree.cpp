#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ksafem/assembly.hpp"
#include "ksafem/hartree.hpp"
#include "ksafem/quadrature.hpp"

#include <cmath>
#include <map>
#include <numbers>

using namespace ksafem;
using namespace ksafem::hartree;

namespace {

mesh::Box cube(double lo, double hi) {
    mesh::Box b;
    b.lo = Vec3::Constant(lo);
    b.hi = Vec3::Constant(hi);
    return b;
}

fem::FEFunction gaussian_density(fem::SpacePtr V, double mass, double sigma, const Vec3& center) {
    const double norm = mass / (std::pow(std::numbers::pi, 1.5) * sigma * sigma * sigma);
    fem::FEFunction rho(V, fem::Role::density);
    for (int i = 0; i < V->n_dofs(); ++i) {
        const Vec3 d = V->node(i) - center;
        rho.coeffs[i] = norm * std::exp(-d.squaredNorm() / (sigma * sigma));
    }
    return rho;
}

/// direct Coulomb integral of a nodal density, the oracle for far-field data
double direct_potential(const fem::FEFunction& rho, const Vec3& x) {
    const auto& m = rho.space->mesh();
    const auto& rule = quad::default_rule();
    double s = 0;
    for (int t = 0; t < m.n_tets(); ++t) {
        const auto& v = m.tets[t];
        const double vol = std::abs(m.tet_volume(t));
        for (const auto& q : rule.points) {
            double rv = 0;
            Vec3 y = Vec3::Zero();
            for (int i = 0; i < 4; ++i) {
                rv += q.bary[i] * rho.coeffs[v[i]];
                y += q.bary[i] * m.vertices[v[i]];
            }
            s += q.weight * vol * rv / (x - y).norm();
        }
    }
    return s;
}

} // namespace

TEST_CASE("moments of trivial and symmetric densities") {
    auto V = std::make_shared<fem::FESpace>(mesh::build_box_mesh(cube(-4, 4), 6));
    fem::FEFunction zero(V, fem::Role::density);
    const auto m0 = compute_moments(zero);
    CHECK(m0.charge == 0.0);
    CHECK(m0.dipole.norm() == 0.0);
    CHECK(m0.quadrupole.norm() == 0.0);
    CHECK(boundary_values(m0, *V).norm() == 0.0);

    const auto rho = gaussian_density(V, 4.0, 1.0, Vec3::Zero());
    const auto m = compute_moments(rho);
    CHECK(m.charge == doctest::Approx(4.0).epsilon(0.02));
    CHECK(m.dipole.norm() < 1e-8);
    CHECK(m.quadrupole.trace() == doctest::Approx(0.0).epsilon(1e-10));
    CHECK((m.quadrupole - m.quadrupole.transpose()).norm() < 1e-10);
}

TEST_CASE("monopole potential") {
    MultipoleMoments m;
    m.charge = 1.0;
    CHECK(multipole_potential(m, Vec3(6, 0, 0)) == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
}

TEST_CASE("far boundary data matches direct integration within 2 percent") {
    auto V = std::make_shared<fem::FESpace>(mesh::build_box_mesh(cube(-6, 6), 6));
    const auto rho = gaussian_density(V, 2.0, 0.8, Vec3(0.3, -0.2, 0.1));
    const auto m = compute_moments(rho);
    const VecX bc = boundary_values(m, *V);
    for (int dof : {V->boundary_dofs().front(), V->boundary_dofs().back()}) {
        const double direct = direct_potential(rho, V->node(dof));
        CHECK(std::abs(bc[dof] - direct) <= 0.02 * std::abs(direct));
    }
}

TEST_CASE("hartree solve: homogeneous and harmonic cases") {
    auto V = std::make_shared<fem::FESpace>(mesh::build_box_mesh(cube(-2, 2), 3));
    fem::FEFunction zero(V, fem::Role::density);
    const auto w0 = solve_hartree(V, zero, VecX::Zero(V->n_dofs()));
    CHECK(w0.coeffs.norm() == 0.0);

    // harmonic reproduction of a linear boundary function
    VecX bc = VecX::Zero(V->n_dofs());
    for (int d : V->boundary_dofs()) bc[d] = 2.0 * V->node(d)[0] - 0.5 * V->node(d)[2];
    const auto wl = solve_hartree(V, zero, bc, 1e-12);
    for (int i = 0; i < V->n_dofs(); ++i)
        CHECK(wl.coeffs[i] == doctest::Approx(2.0 * V->node(i)[0] - 0.5 * V->node(i)[2]).epsilon(1e-8));
}

TEST_CASE("unit charge: far field approaches 1/r") {
    auto coarse = mesh::build_box_mesh(cube(-6, 6), 6);
    auto V = std::make_shared<fem::FESpace>(mesh::uniform_refine(*coarse));
    const auto rho = gaussian_density(V, 1.0, 0.7, Vec3::Zero());
    const auto m = compute_moments(rho);
    const VecX bc = boundary_values(m, *V);
    const auto w = solve_hartree(V, rho, bc, 1e-10);
    int checked = 0;
    for (int i = 0; i < V->n_dofs(); ++i) {
        const double r = (V->node(i) - m.center).norm();
        if (r >= 4.5) {
            CHECK(w.coeffs[i] == doctest::Approx(m.charge / r).epsilon(0.05));
            if (++checked > 50) break;
        }
    }
    CHECK(checked > 0);
}

TEST_CASE("central symmetry is inherited by the potential") {
    auto V = std::make_shared<fem::FESpace>(mesh::build_box_mesh(cube(-3, 3), 4));
    const auto rho = gaussian_density(V, 2.0, 0.9, Vec3::Zero());
    const auto m = compute_moments(rho);
    const auto w = solve_hartree(V, rho, boundary_values(m, *V), 1e-11);

    std::map<std::array<long, 3>, int> index;
    auto key = [](const Vec3& x) {
        return std::array<long, 3>{std::lround(x[0] * 1e6), std::lround(x[1] * 1e6),
                                   std::lround(x[2] * 1e6)};
    };
    for (int i = 0; i < V->n_dofs(); ++i) index[key(V->node(i))] = i;
    int pairs = 0;
    for (int i = 0; i < V->n_dofs(); ++i) {
        const auto it = index.find(key(-V->node(i)));
        if (it != index.end()) {
            CHECK(std::abs(w.coeffs[i] - w.coeffs[it->second]) < 1e-7);
            ++pairs;
        }
    }
    CHECK(pairs > 100);
}

TEST_CASE("boundary data renewal is observable") {
    auto V = std::make_shared<fem::FESpace>(mesh::build_box_mesh(cube(-2, 2), 2));
    MultipoleMoments m;
    m.charge = 1.0;
    const auto before = boundary_renewal_count();
    boundary_values(m, *V);
    boundary_values(m, *V);
    CHECK(boundary_renewal_count() == before + 2);
}
