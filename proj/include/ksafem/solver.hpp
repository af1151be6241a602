#pragma once

#include "ksafem/fespace.hpp"
#include "ksafem/types.hpp"

#include <optional>

namespace ksafem::fem {

struct SolveStats {
    int iterations = 0;
    double relative_residual = 0.0;
    bool converged = false;
    bool breakdown = false; // CG met a non-positive curvature direction
};

struct SolverOptions {
    double tol = 1e-9; // relative residual reduction
    int max_iterations = 20000;
};

/// Dirichlet-reduced operator for repeated solves against one matrix.
/// Boundary rows/columns are eliminated; boundary values move to the
/// right-hand side, which keeps the reduced system symmetric.
class EllipticSolver {
public:
    EllipticSolver(const SpMat& A, SpacePtr space);

    /// b is the full-length load; bc holds boundary values (full-length,
    /// interior entries ignored). Returns the full-length solution.
    VecX solve(const VecX& b, const VecX& bc, const SolverOptions& opt, SolveStats* stats = nullptr) const;
    VecX solve_zero_bc(const VecX& b, const SolverOptions& opt, SolveStats* stats = nullptr) const;

    const FESpace& space() const { return *space_; }
    double min_diagonal() const { return min_diag_; }

private:
    SpacePtr space_;
    SpMat A_ii_;       // interior block
    SpMat A_ib_;       // interior x boundary coupling
    VecX diag_;    // interior diagonal, middle factor of the SGS sweep
    double min_diag_ = 0.0;

    VecX pcg(const VecX& rhs, const SolverOptions& opt, SolveStats* stats) const;
    VecX apply_sgs(const VecX& r) const;
};

/// One-shot contract: x with boundary dofs = bc and relative interior
/// residual <= tol. Throws "nonconvergence" with the achieved residual.
VecX solve_spd(const SpMat& A, const VecX& b, SpacePtr space, const VecX& bc, double tol,
               SolveStats* stats = nullptr);

} // namespace ksafem::fem
