#pragma once

#include "ksafem/eigensolve.hpp"
#include "ksafem/hartree.hpp"
#include "ksafem/ks_model.hpp"
#include "ksafem/solver.hpp"
#include "ksafem/worker_pool.hpp"

#include <vector>

namespace ksafem::scf {

struct ScfOptions {
    double tol = 1e-6;    // density-change norm that stops the iteration
    int max_iterations = 200;
    double mixing = 0.3;  // linear density mixing weight
    bool hartree_on = true;
    bool xc_on = true;
    bool norm_l1 = false; // density change measured in H1 unless set
    double tol_eig = 1e-9;
    int dense_threshold = 800;
    const MatX* guess = nullptr; // interior eigenvector warm start
};

struct ScfResult {
    VecX lambdas;
    std::vector<fem::FEFunction> orbitals; // zero trace, mass-orthonormal
    fem::FEFunction hartree;
    fem::FEFunction rho;
    int iterations = 0;
    std::vector<double> history; // density-change norms per step
};

/// Full nonlinear solve on one space by self-consistent iteration: build the
/// Hamiltonian from the current density, take the lowest eigenpairs, mix the
/// density, rebuild the potentials. Used for the entry solve on the coarsest
/// space and by the single-loop reference methods.
ScfResult self_consistent_solve(const model::MolecularSystem& sys, fem::SpacePtr space,
                                const ScfOptions& opt, WorkerPool* pool = nullptr);

/// Entry solve on the coarsest space (step one of the adaptive driver).
ScfResult initial_coarse_solve(const model::MolecularSystem& sys, fem::SpacePtr space, double scf_tol,
                               ScfOptions opt = {}, WorkerPool* pool = nullptr);

} // namespace ksafem::scf
