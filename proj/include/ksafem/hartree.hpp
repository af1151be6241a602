#pragma once

#include "ksafem/fespace.hpp"
#include "ksafem/solver.hpp"
#include "ksafem/types.hpp"

namespace ksafem::hartree {

/// Charge moments about the charge centroid. The dipole is retained in the
/// expansion even though centering makes it vanish up to quadrature error.
struct MultipoleMoments {
    double charge = 0;           // q = int rho
    Vec3 center = Vec3::Zero();  // charge centroid (box center when q = 0)
    Vec3 dipole = Vec3::Zero();  // int rho (x - c)
    Mat3 quadrupole = Mat3::Zero(); // int rho (3(x-c)(x-c)^T - |x-c|^2 I), traceless
};

MultipoleMoments compute_moments(const fem::FEFunction& rho);

/// Far-field potential of the moments at x.
double multipole_potential(const MultipoleMoments& m, const Vec3& x);

/// Dirichlet data on the boundary dofs of rho's box: full-length vector with
/// multipole values at boundary nodes (interior entries zero). Counted so the
/// per-outer-iteration renewal rule can be audited.
VecX boundary_values(const MultipoleMoments& m, const fem::FESpace& space);
unsigned long long boundary_renewal_count();

/// Electrostatic potential of rho: (grad w, grad v) = 4 pi (rho, v) with the
/// given Dirichlet data.
fem::FEFunction solve_hartree(fem::SpacePtr space, const fem::FEFunction& rho, const VecX& bc,
                              double tol = 1e-9);

/// Same weak problem against a prebuilt stiffness solver and mass matrix;
/// the driver reuses this for every Poisson solve on a level.
fem::FEFunction solve_hartree_cached(const fem::EllipticSolver& stiffness, const SpMat& mass,
                                     const fem::FEFunction& rho, const VecX& bc, double tol = 1e-9);

/// Load vector of the exact squared orbital sum: b_j = occupancy sum_i
/// int phi_i^2 psi_j (degree-3 integrand, integrated exactly).
VecX squared_density_load(const fem::FESpace& space, const std::vector<fem::FEFunction>& orbitals,
                          double occupancy);

/// Poisson solve against the exact squared orbital sum; shares the contract
/// of solve_hartree with the source supplied as orbitals.
fem::FEFunction solve_hartree_exact(const fem::EllipticSolver& stiffness, const fem::FESpace& space,
                                    const std::vector<fem::FEFunction>& orbitals, double occupancy,
                                    const VecX& bc, double tol = 1e-9);

} // namespace ksafem::hartree
