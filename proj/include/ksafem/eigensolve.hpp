#pragma once

#include "ksafem/types.hpp"

#include <Eigen/SparseCholesky>

#include <memory>
#include <optional>

namespace ksafem::eig {

struct GeneralizedEigResult {
    VecX eigenvalues;  // ascending
    MatX eigenvectors; // columns, M-orthonormal
    VecX residuals;    // ||A v - lambda M v|| / ||A v|| per pair
};

struct EigOptions {
    double tol = 1e-9;
    int dense_threshold = 800; // use a dense decomposition at or below this size
    int lanczos_max_dim = 60000;
    int max_restarts = 8;
    const MatX* guess = nullptr; // warm start (used by the block iteration)
};

/// nev smallest eigenpairs of A x = lambda M x (A symmetric, M SPD).
/// Dispatches between a dense decomposition, shift-invert Lanczos with a
/// sparse factorization, and a preconditioned block iteration for large
/// problems. Deterministic up to eigenvector sign, which is normalized.
GeneralizedEigResult solve_smallest(const SpMat& A, const SpMat& M, int nev, const EigOptions& opt = {});

/// Coarse block bordered by one augmentation row/column:
///   [ A_H  b ] [phi  ]          [ M_H  c ] [phi  ]
///   [ b^T  β ] [theta] = lambda [ c^T  γ ] [theta]
struct BorderedSystem {
    const SpMat* A_H = nullptr;
    VecX b;
    double beta = 0;
    const SpMat* M_H = nullptr;
    VecX c;
    double gamma = 0;
};

struct BorderedResult {
    double lambda = 0;
    VecX phi_H;
    double theta = 0;
    double score = 0;  // mass-normalized overlap with the augmentation direction
    int scanned = 0;
};

struct BorderedOptions {
    int nev_scan = 6;          // candidates examined by the selection rule
    double score_floor = 1e-8; // all-candidates-below-floor means the augmentation collapsed
    int dense_threshold = 800;
    double tol = 1e-9;
    double shift_hint = 0;     // lower bound guess for the spectrum (sparse path)
};

/// Factorization of the shifted coarse block, shareable by every bordered
/// solve built on the same A_H within one sweep.
struct BorderedFactor {
    double sigma = 0;
    std::shared_ptr<Eigen::SimplicialLDLT<SpMat>> ldlt;
    const SpMat* A_H = nullptr;
    const SpMat* M_H = nullptr;
};

/// Shifted factorization with A_H - sigma M_H positive definite, probing
/// downward from the hint.
BorderedFactor factor_bordered(const SpMat& A_H, const SpMat& M_H, double shift_hint);

/// Lowest nev_scan pairs of the bordered pencil; returns the one with the
/// largest mass-inner-product component along the augmentation direction.
/// `shared` skips the per-call factorization on the sparse path.
BorderedResult solve_bordered(const BorderedSystem& sys, const BorderedOptions& opt = {},
                              const BorderedFactor* shared = nullptr);

/// Canonical sign: the entry of largest magnitude (lowest index on ties) is
/// made positive. Keeps results reproducible across solvers and worker counts.
void normalize_sign(Eigen::Ref<MatX> vectors);

} // namespace ksafem::eig
