#pragma once

#include "ksafem/fespace.hpp"
#include "ksafem/ks_model.hpp"
#include "ksafem/types.hpp"
#include "ksafem/worker_pool.hpp"

#include <vector>

namespace ksafem::est {

struct Indicators {
    VecX eta_sq;          // one entry per tet
    double total_sq = 0;  // sum of eta_sq
};

/// Residual indicators for an eigenpair set: squared element residual of
/// (V_ext + w + v_xc - lambda_i) phi_i (the P1 Laplacian term vanishes) plus
/// the half-flux jumps of grad phi_i across interior faces, each scaled by
/// the local mesh size.
Indicators compute_indicators(const fem::FESpace& V, const model::MolecularSystem& sys,
                              const VecX& lambdas, const std::vector<fem::FEFunction>& orbitals,
                              const fem::FEFunction& hartree_fn, const fem::FEFunction& vxc_fn,
                              WorkerPool* pool = nullptr);

/// Minimal greedy set with sum_eta_sq >= theta * total (descending values,
/// index order on ties). Empty when the total vanishes.
std::vector<int> dorfler_mark(const Indicators& ind, double theta);

} // namespace ksafem::est
