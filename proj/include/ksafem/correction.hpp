#pragma once

#include "ksafem/eigensolve.hpp"
#include "ksafem/fespace.hpp"
#include "ksafem/hartree.hpp"
#include "ksafem/ks_model.hpp"
#include "ksafem/solver.hpp"
#include "ksafem/worker_pool.hpp"

#include <Eigen/SparseCholesky>

#include <memory>
#include <mutex>
#include <vector>

namespace ksafem::corr {

/// Linearized fine-space operator of one outer iteration:
///   H = 1/2 S + V_ext + w_hat + V_xc (all as weighted mass terms).
/// Shared read-only by the per-orbital solves.
class OuterOperator {
public:
    OuterOperator(fem::SpacePtr space, const SpMat& a_op, const SpMat* mass,
                  const fem::FEFunction& w_hat, const fem::FEFunction& v_xc, double tol_linear,
                  WorkerPool* pool);

    const fem::FESpace& space() const { return *space_; }
    const SpMat& mass() const { return *mass_; }
    const SpMat& matrix() const { return H_; }

    /// Residual-driven correction source: solve H u = lambda_prev M phi_prev
    /// with zero trace. A breakdown of the conjugate-gradient sweep on the
    /// indefinite operator triggers one retry of the level-shifted fixed
    /// point (H + sigma M) u = (lambda_prev + sigma) M phi_prev.
    fem::FEFunction solve_orbital(double lambda_prev, const fem::FEFunction& phi_prev) const;

private:
    /// shift ladder entry `attempt`; values depend on the operator only, so
    /// concurrent per-orbital retries stay reproducible
    const fem::EllipticSolver* shifted(int attempt, double* sigma) const;

    fem::SpacePtr space_;
    const SpMat* mass_;
    SpMat H_;
    std::unique_ptr<fem::EllipticSolver> solver_;
    double tol_;
    mutable std::mutex shift_mu_;
    mutable std::vector<std::unique_ptr<fem::EllipticSolver>> shifted_;
    mutable std::vector<double> sigmas_;
};

fem::FEFunction bvp_orbital(const OuterOperator& op, double lambda_prev,
                            const fem::FEFunction& phi_prev);

/// Correction source for the electrostatic problem: Poisson solve against the
/// nodal density of the freshly corrected orbitals, outer-frozen boundary data.
fem::FEFunction bvp_hartree(const fem::EllipticSolver& stiffness, const SpMat& mass,
                            const std::vector<fem::FEFunction>& phi_tilde, double occupancy,
                            const VecX& bc, double tol);

/// Every block of the augmented eigenvalue and electrostatic systems that is
/// fixed while the inner iteration runs. Assembled once per outer iteration
/// with fine-space work; the inner loop touches only these arrays and
/// coarse-mesh quadrature.
///
/// The electrostatic augmentation vector is the zero-trace part of the
/// correction potential; its Dirichlet data travels separately as the nodal
/// lift `ell` folded into the static operator blocks. Testing the weak form
/// against a nonzero-trace function would be inconsistent for a charged
/// density (the missing boundary flux is first order), so the bordered
/// system is posed entirely over zero-trace functions.
struct AugmentedBlocks {
    fem::SpacePtr space_H;
    fem::SpacePtr space_h;
    SpMat P_int; // fine dofs x interior coarse dofs
    int n_orbitals = 0;
    double occupancy = 2.0;
    bool hartree_on = true;

    // shared blocks, interior coarse indexing
    SpMat A_H1; // 1/2 stiffness + external potential + boundary lift
    SpMat A_H3; // w_tilde0 weighted mass; doubles as the source matrix G
    SpMat A_H4; // frozen exchange-correlation weighted mass
    SpMat M_H;  // coarse mass
    SpMat C_H;  // coarse stiffness
    VecX d_Hh;  // (grad w_tilde0, grad psi_j)
    double zeta = 0;
    VecX lift_load;        // (grad ell, grad psi_j)
    double lift_load0 = 0; // (grad ell, grad w_tilde0)

    // per-orbital blocks; F_i aliases b_H3, f_{H,i,3} aliases rhs, g_{i,3} aliases beta3
    std::vector<SpMat> A_h4;
    std::vector<VecX> b_H1, b_H3, b_H4, rhs;
    VecX beta1, beta3, beta4;
    std::vector<VecX> c_Hh;
    VecX gamma_mass;
    std::vector<VecX> d_phi; // stiffness borders, used by the stopping norm
    VecX zeta_phi;

    // augmentation vectors (fine coefficients); w_tilde0 has zero trace
    std::vector<VecX> phi_tilde;
    VecX w_tilde0;
    VecX ell; // nodal boundary lift of the outer-frozen Dirichlet data

    // electrostatic coarse block factored once per outer iteration
    std::shared_ptr<Eigen::SimplicialLDLT<SpMat>> hartree_ldlt;
    VecX hartree_u;
    double hartree_schur = 0;

    const mesh::TetMesh* fine_mesh = nullptr;
};

/// hartree_bc holds the outer-frozen Dirichlet data (full length, interior
/// entries ignored); pass an empty vector when the electrostatic term is off.
AugmentedBlocks prepare_blocks(fem::SpacePtr space_H, fem::SpacePtr space_h, const SpMat& P_full,
                               const SpMat& S_f, const SpMat& M_f, const SpMat& a_f,
                               const std::vector<fem::FEFunction>& phi_tilde,
                               const fem::FEFunction& w_tilde, const fem::FEFunction& v_xc,
                               double occupancy, bool hartree_on, const VecX& hartree_bc,
                               WorkerPool* pool = nullptr);

/// Solution coordinates inside the augmented spaces: coarse coefficients plus
/// one scalar along the augmentation vector, per orbital and for the
/// electrostatic potential.
struct AugmentedState {
    VecX lambda;
    std::vector<VecX> phi_H;
    VecX theta2;
    VecX w_H;
    double theta1 = 0;
};

/// Start of the inner iteration: the freshly corrected functions themselves.
AugmentedState pure_augmentation_state(const AugmentedBlocks& blocks, const VecX& lambda_init);

/// Pieces rebuilt inside every inner sweep (coarse-only work).
SpMat assemble_A_H2(const AugmentedBlocks& blocks, const VecX& w_H);
VecX assemble_b_H2(const AugmentedBlocks& blocks, int i, const VecX& w_H);
double assemble_beta2(const AugmentedBlocks& blocks, int i, const VecX& w_H);
VecX assemble_f_H(const AugmentedBlocks& blocks, const AugmentedState& s);
double assemble_g(const AugmentedBlocks& blocks, const AugmentedState& s);

struct InnerOptions {
    double tol = 1e-8;      // orbital-set H1 change computed from the blocks
    int max_iterations = 400;
    int dense_threshold = 800;
    double score_floor = 1e-8;
    int nev_scan_pad = 4;   // candidates examined: n_orbitals + pad
    WorkerPool* pool = nullptr;
};

struct InnerResult {
    AugmentedState state;
    int iterations = 0;
    std::vector<double> history;
};

/// Alternates per-orbital bordered eigensolves with the bordered
/// electrostatic solve until the orbital change stalls. Performs no
/// fine-space quadrature; this is asserted against the mesh counter.
InnerResult inner_scf(const AugmentedBlocks& blocks, const AugmentedState& init,
                      const InnerOptions& opt);

struct Expanded {
    VecX lambda;
    std::vector<fem::FEFunction> orbitals;
    fem::FEFunction hartree;
};

/// Back to fine coefficients: phi_i = P phi_{i,H} + theta_{2,i} phi_tilde_i,
/// w = P w_H + theta_1 w_tilde.
Expanded expand(const AugmentedState& s, const AugmentedBlocks& blocks);

} // namespace ksafem::corr
