#include "ksafem/hartree.hpp"

#include "ksafem/assembly.hpp"
#include "ksafem/quadrature.hpp"

#include <atomic>
#include <cmath>

namespace ksafem::hartree {

namespace {
std::atomic<unsigned long long> g_renewals{0};
}

MultipoleMoments compute_moments(const fem::FEFunction& rho) {
    const auto& m = rho.space->mesh();
    const auto& rule = quad::default_rule();

    double q = 0;
    Vec3 first = Vec3::Zero();
    for (int t = 0; t < m.n_tets(); ++t) {
        const auto& v = m.tets[t];
        const double vol = std::abs(m.tet_volume(t));
        for (const auto& p : rule.points) {
            double rv = 0;
            Vec3 x = Vec3::Zero();
            for (int i = 0; i < 4; ++i) {
                rv += p.bary[i] * rho.coeffs[v[i]];
                x += p.bary[i] * m.vertices[v[i]];
            }
            q += p.weight * vol * rv;
            first += p.weight * vol * rv * x;
        }
    }

    MultipoleMoments out;
    out.charge = q;
    out.center = (std::abs(q) > 1e-14) ? Vec3(first / q) : m.box.center();

    Vec3 dip = Vec3::Zero();
    Mat3 quad = Mat3::Zero();
    for (int t = 0; t < m.n_tets(); ++t) {
        const auto& v = m.tets[t];
        const double vol = std::abs(m.tet_volume(t));
        for (const auto& p : rule.points) {
            double rv = 0;
            Vec3 x = Vec3::Zero();
            for (int i = 0; i < 4; ++i) {
                rv += p.bary[i] * rho.coeffs[v[i]];
                x += p.bary[i] * m.vertices[v[i]];
            }
            const Vec3 d = x - out.center;
            dip += p.weight * vol * rv * d;
            quad += p.weight * vol * rv * (3.0 * d * d.transpose() - d.squaredNorm() * Mat3::Identity());
        }
    }
    m.quad_counter.cells += 2ull * m.n_tets();
    out.dipole = dip;
    out.quadrupole = 0.5 * (quad + quad.transpose());
    const double tr = out.quadrupole.trace() / 3.0;
    out.quadrupole -= tr * Mat3::Identity();
    return out;
}

double multipole_potential(const MultipoleMoments& m, const Vec3& x) {
    const Vec3 d = x - m.center;
    const double r = d.norm();
    if (r == 0.0) fail("invalid-argument", "multipole evaluated at its center");
    const Vec3 u = d / r;
    const double mono = m.charge / r;
    const double dip = m.dipole.dot(u) / (r * r);
    const double quad = 0.5 * u.dot(m.quadrupole * u) / (r * r * r);
    return mono + dip + quad;
}

VecX boundary_values(const MultipoleMoments& m, const fem::FESpace& space) {
    ++g_renewals;
    VecX bc = VecX::Zero(space.n_dofs());
    if (m.charge == 0.0 && m.dipole.isZero(0.0) && m.quadrupole.isZero(0.0)) return bc;
    for (int dof : space.boundary_dofs()) bc[dof] = multipole_potential(m, space.node(dof));
    return bc;
}

unsigned long long boundary_renewal_count() { return g_renewals.load(); }

fem::FEFunction solve_hartree(fem::SpacePtr space, const fem::FEFunction& rho, const VecX& bc,
                              double tol) {
    const SpMat S = fem::assemble_stiffness(*space);
    const SpMat M = fem::assemble_mass(*space);
    fem::EllipticSolver solver(S, space);
    return solve_hartree_cached(solver, M, rho, bc, tol);
}

fem::FEFunction solve_hartree_cached(const fem::EllipticSolver& stiffness, const SpMat& mass,
                                     const fem::FEFunction& rho, const VecX& bc, double tol) {
    const VecX load = 4.0 * std::numbers::pi * (mass * rho.coeffs);
    fem::SolverOptions opt;
    opt.tol = tol;
    fem::SolveStats st;
    VecX w = stiffness.solve(load, bc, opt, &st);
    if (!st.converged)
        fail("nonconvergence", "hartree solve stalled at residual " + std::to_string(st.relative_residual));
    fem::FEFunction out(rho.space, fem::Role::hartree);
    out.coeffs = std::move(w);
    return out;
}

VecX squared_density_load(const fem::FESpace& space, const std::vector<fem::FEFunction>& orbitals,
                          double occupancy) {
    const auto& m = space.mesh();
    const auto& rule = quad::default_rule();
    VecX out = VecX::Zero(space.n_dofs());
    for (int t = 0; t < m.n_tets(); ++t) {
        const auto& v = m.tets[t];
        const double vol = std::abs(m.tet_volume(t));
        for (const auto& q : rule.points) {
            double dens = 0;
            for (const auto& phi : orbitals) {
                double val = 0;
                for (int k = 0; k < 4; ++k) val += q.bary[k] * phi.coeffs[v[k]];
                dens += val * val;
            }
            const double s = q.weight * vol * occupancy * dens;
            for (int k = 0; k < 4; ++k) out[v[k]] += s * q.bary[k];
        }
    }
    m.quad_counter.cells += static_cast<unsigned long long>(m.n_tets());
    return out;
}

fem::FEFunction solve_hartree_exact(const fem::EllipticSolver& stiffness, const fem::FESpace& space,
                                    const std::vector<fem::FEFunction>& orbitals, double occupancy,
                                    const VecX& bc, double tol) {
    const VecX load = 4.0 * std::numbers::pi * squared_density_load(space, orbitals, occupancy);
    fem::SolverOptions opt;
    opt.tol = tol;
    fem::SolveStats st;
    VecX w = stiffness.solve(load, bc, opt, &st);
    if (!st.converged)
        fail("nonconvergence", "hartree solve stalled at residual " + std::to_string(st.relative_residual));
    fem::FEFunction out(orbitals.front().space, fem::Role::hartree);
    out.coeffs = std::move(w);
    return out;
}

} // namespace ksafem::hartree
