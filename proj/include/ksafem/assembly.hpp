#pragma once

#include "ksafem/fespace.hpp"
#include "ksafem/quadrature.hpp"
#include "ksafem/types.hpp"
#include "ksafem/worker_pool.hpp"

#include <functional>
#include <string>

namespace ksafem::fem {

using ScalarField = std::function<double(const Vec3&)>;

/// S_jk = (grad psi_k, grad psi_j). Exact for P1; rows sum to zero.
SpMat assemble_stiffness(const FESpace& V, WorkerPool* pool = nullptr);

/// M_jk = int w psi_k psi_j. Unit weight when w is absent. FEFunction weights
/// must live on the same mesh and integrate exactly (piecewise-cubic integrand).
SpMat assemble_mass(const FESpace& V, WorkerPool* pool = nullptr);
SpMat assemble_mass(const FESpace& V, const ScalarField& w, WorkerPool* pool = nullptr);
SpMat assemble_mass(const FESpace& V, const FEFunction& w, WorkerPool* pool = nullptr);

/// Weighted mass under an explicit rule; diagnostic hook for quadrature studies.
SpMat assemble_mass_with_rule(const FESpace& V, const ScalarField& w, const quad::TetRule& rule);

/// b_j = int f psi_j.
VecX assemble_load(const FESpace& V, const ScalarField& f, WorkerPool* pool = nullptr);
VecX assemble_load(const FESpace& V, const FEFunction& f, WorkerPool* pool = nullptr);

/// int f over the mesh by the default rule; f is evaluated at quadrature points.
double integrate(const FESpace& V, const ScalarField& f);
/// int g(u(x), x) for a P1 function u -- used for energy densities.
double integrate_of(const FEFunction& u, const std::function<double(double, const Vec3&)>& g);

/// Sobolev norms through the assembled quadratic forms.
double l2_norm(const FEFunction& f);
double h1_seminorm(const FEFunction& f);
double h1_norm(const FEFunction& f);
double l1_norm(const FEFunction& f);
/// Root-sum-square of per-orbital norms for an orbital set.
double l2_norm(const std::vector<FEFunction>& fs);
double h1_norm(const std::vector<FEFunction>& fs);

/// Interior-dof restriction (homogeneous Dirichlet elimination for pencils).
SpMat interior_block(const SpMat& A, const FESpace& V);
VecX interior_part(const VecX& full, const FESpace& V);
VecX scatter_interior(const VecX& interior, const FESpace& V);

/// MatrixMarket export (coordinate, general symmetric stored fully).
void write_matrix_market(const SpMat& A, const std::string& path);

/// Largest relative asymmetry |A - A^T| / |A|; assembled matrices stay < 1e-13.
double symmetry_defect(const SpMat& A);

} // namespace ksafem::fem
