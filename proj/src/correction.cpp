#include "ksafem/correction.hpp"

#include "ksafem/assembly.hpp"
#include "ksafem/ks_model.hpp"
#include "ksafem/quadrature.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace ksafem::corr {

using fem::FEFunction;

OuterOperator::OuterOperator(fem::SpacePtr space, const SpMat& a_op, const SpMat* mass,
                             const fem::FEFunction& w_hat, const fem::FEFunction& v_xc,
                             double tol_linear, WorkerPool* pool)
    : space_(std::move(space)), mass_(mass), tol_(tol_linear) {
    FEFunction pot(space_);
    pot.coeffs = w_hat.coeffs + v_xc.coeffs;
    H_ = a_op;
    if (pot.coeffs.lpNorm<Eigen::Infinity>() > 0) H_ += fem::assemble_mass(*space_, pot, pool);
    solver_ = std::make_unique<fem::EllipticSolver>(H_, space_);
}

fem::FEFunction OuterOperator::solve_orbital(double lambda_prev, const FEFunction& phi_prev) const {
    FEFunction out(space_, fem::Role::wavefunction);
    const VecX rhs = lambda_prev * ((*mass_) * phi_prev.coeffs);

    fem::SolverOptions opt;
    opt.tol = tol_;
    fem::SolveStats st;
    out.coeffs = solver_->solve_zero_bc(rhs, opt, &st);
    if (st.converged) return out;

    // Level shift keeps the fixed point and restores definiteness. The
    // diagonal alone does not bound the spectrum, so the shift escalates
    // until the sweep holds; all values derive from the operator alone.
    for (int attempt = 0; attempt < 4; ++attempt) {
        double sigma = 0;
        const fem::EllipticSolver* shifted = this->shifted(attempt, &sigma);
        const VecX rhs_shifted = (lambda_prev + sigma) * ((*mass_) * phi_prev.coeffs);
        out.coeffs = shifted->solve_zero_bc(rhs_shifted, opt, &st);
        if (st.converged) return out;
    }
    fail("nonconvergence", "orbital correction solve failed even after the level shift (residual " +
                               std::to_string(st.relative_residual) + ")");
}

const fem::EllipticSolver* OuterOperator::shifted(int attempt, double* sigma) const {
    std::lock_guard<std::mutex> lk(shift_mu_);
    while (static_cast<int>(shifted_.size()) <= attempt) {
        const int k = static_cast<int>(shifted_.size());
        const double base = std::abs(solver_->min_diagonal());
        const double s = (k == 0) ? base : std::pow(4.0, k) * (base + 1.0);
        shifted_.push_back(std::make_unique<fem::EllipticSolver>(SpMat(H_ + s * (*mass_)), space_));
        sigmas_.push_back(s);
    }
    *sigma = sigmas_[attempt];
    return shifted_[attempt].get();
}

fem::FEFunction bvp_orbital(const OuterOperator& op, double lambda_prev, const FEFunction& phi_prev) {
    return op.solve_orbital(lambda_prev, phi_prev);
}

fem::FEFunction bvp_hartree(const fem::EllipticSolver& stiffness, const SpMat& mass,
                            const std::vector<FEFunction>& phi_tilde, double occupancy, const VecX& bc,
                            double tol) {
    (void)mass;
    // exact squared source keeps this solve consistent with the block algebra
    // of the inner iteration, which expands the same squares analytically
    return hartree::solve_hartree_exact(stiffness, *phi_tilde.front().space, phi_tilde, occupancy, bc,
                                        tol);
}

namespace {

SpMat interior_columns(const SpMat& P_full, const fem::FESpace& coarse) {
    std::vector<Triplet> trip;
    trip.reserve(P_full.nonZeros());
    for (int k = 0; k < P_full.outerSize(); ++k)
        for (SpMat::InnerIterator it(P_full, k); it; ++it) {
            const int c = coarse.interior_index(static_cast<int>(it.col()));
            if (c >= 0) trip.emplace_back(it.row(), c, it.value());
        }
    SpMat P(P_full.rows(), coarse.n_interior());
    P.setFromTriplets(trip.begin(), trip.end());
    return P;
}

/// coarse load of the exact square of a coarse P1 function (degree-3 integrand)
VecX coarse_square_load(const fem::FESpace& V, const VecX& full_coeffs) {
    const auto& m = V.mesh();
    const auto& rule = quad::default_rule();
    VecX out = VecX::Zero(V.n_dofs());
    for (int t = 0; t < m.n_tets(); ++t) {
        const auto& v = m.tets[t];
        const double vol = std::abs(m.tet_volume(t));
        for (const auto& q : rule.points) {
            double u = 0;
            for (int i = 0; i < 4; ++i) u += q.bary[i] * full_coeffs[v[i]];
            const double s = q.weight * vol * u * u;
            for (int i = 0; i < 4; ++i) out[v[i]] += s * q.bary[i];
        }
    }
    m.quad_counter.cells += static_cast<unsigned long long>(m.n_tets());
    return out;
}

} // namespace

AugmentedBlocks prepare_blocks(fem::SpacePtr space_H, fem::SpacePtr space_h, const SpMat& P_full,
                               const SpMat& S_f, const SpMat& M_f, const SpMat& a_f,
                               const std::vector<FEFunction>& phi_tilde, const FEFunction& w_tilde,
                               const FEFunction& v_xc, double occupancy, bool hartree_on,
                               const VecX& hartree_bc, WorkerPool* pool) {
    AugmentedBlocks B;
    B.space_H = space_H;
    B.space_h = space_h;
    B.n_orbitals = static_cast<int>(phi_tilde.size());
    B.occupancy = occupancy;
    B.hartree_on = hartree_on;
    B.fine_mesh = &space_h->mesh();
    B.P_int = interior_columns(P_full, *space_H);
    const SpMat Pt = B.P_int.transpose();

    // split the correction potential into its zero-trace part plus the lift
    B.ell = VecX::Zero(space_h->n_dofs());
    if (hartree_bc.size() == space_h->n_dofs())
        for (int d : space_h->boundary_dofs()) B.ell[d] = hartree_bc[d];
    B.w_tilde0 = w_tilde.coeffs - B.ell;

    FEFunction wt0(space_h);
    wt0.coeffs = B.w_tilde0;
    const SpMat M_wt = fem::assemble_mass(*space_h, wt0, pool);
    SpMat M_xc;
    const bool has_xc = v_xc.coeffs.lpNorm<Eigen::Infinity>() > 0;
    if (has_xc) M_xc = fem::assemble_mass(*space_h, v_xc, pool);

    SpMat a_eff = a_f;
    if (B.ell.lpNorm<Eigen::Infinity>() > 0) {
        FEFunction lift(space_h);
        lift.coeffs = B.ell;
        a_eff = SpMat(a_f + fem::assemble_mass(*space_h, lift, pool));
    }

    B.A_H1 = Pt * a_eff * B.P_int;
    B.A_H3 = Pt * M_wt * B.P_int;
    B.A_H4 = has_xc ? SpMat(Pt * M_xc * B.P_int) : SpMat(B.A_H1.rows(), B.A_H1.cols());
    B.M_H = fem::interior_block(fem::assemble_mass(*space_H), *space_H);
    B.C_H = fem::interior_block(fem::assemble_stiffness(*space_H), *space_H);
    B.d_Hh = Pt * (S_f * B.w_tilde0);
    B.zeta = B.w_tilde0.dot(S_f * B.w_tilde0);
    B.lift_load = Pt * (S_f * B.ell);
    B.lift_load0 = B.w_tilde0.dot(S_f * B.ell);

    const int n = B.n_orbitals;
    B.A_h4.resize(n);
    B.b_H1.resize(n);
    B.b_H3.resize(n);
    B.b_H4.resize(n);
    B.rhs.resize(n);
    B.c_Hh.resize(n);
    B.d_phi.resize(n);
    B.beta1.resize(n);
    B.beta3.resize(n);
    B.beta4.resize(n);
    B.gamma_mass.resize(n);
    B.zeta_phi.resize(n);
    B.phi_tilde.resize(n);

    auto per_orbital = [&](int i) {
        const VecX& ph = phi_tilde[i].coeffs;
        B.phi_tilde[i] = ph;
        const SpMat M_ph = fem::assemble_mass(*space_h, phi_tilde[i], nullptr);
        B.A_h4[i] = Pt * M_ph * B.P_int;
        B.rhs[i] = Pt * (M_ph * ph);
        B.b_H1[i] = Pt * (a_eff * ph);
        B.beta1[i] = ph.dot(a_eff * ph);
        B.b_H3[i] = Pt * (M_wt * ph);
        B.beta3[i] = ph.dot(M_wt * ph);
        if (has_xc) {
            B.b_H4[i] = Pt * (M_xc * ph);
            B.beta4[i] = ph.dot(M_xc * ph);
        } else {
            B.b_H4[i] = VecX::Zero(B.P_int.cols());
            B.beta4[i] = 0.0;
        }
        B.c_Hh[i] = Pt * (M_f * ph);
        B.gamma_mass[i] = ph.dot(M_f * ph);
        B.d_phi[i] = Pt * (S_f * ph);
        B.zeta_phi[i] = ph.dot(S_f * ph);
    };
    if (pool && n > 1) {
        pool->parallel_for(n, per_orbital);
    } else {
        for (int i = 0; i < n; ++i) per_orbital(i);
    }

    if (hartree_on) {
        B.hartree_ldlt = std::make_shared<Eigen::SimplicialLDLT<SpMat>>();
        B.hartree_ldlt->compute(B.C_H);
        if (B.hartree_ldlt->info() != Eigen::Success)
            fail("internal", "coarse stiffness factorization failed");
        B.hartree_u = B.hartree_ldlt->solve(B.d_Hh);
        B.hartree_schur = B.zeta - B.d_Hh.dot(B.hartree_u);
        if (!(B.hartree_schur > 0))
            fail("ambiguous-selection", "electrostatic augmentation vector lies in the coarse space");
    }
    return B;
}

AugmentedState pure_augmentation_state(const AugmentedBlocks& blocks, const VecX& lambda_init) {
    AugmentedState s;
    const int nh = static_cast<int>(blocks.M_H.rows());
    s.lambda = lambda_init;
    s.theta2 = VecX::Ones(blocks.n_orbitals);
    for (int i = 0; i < blocks.n_orbitals; ++i) s.phi_H.push_back(VecX::Zero(nh));
    s.w_H = VecX::Zero(nh);
    s.theta1 = blocks.hartree_on ? 1.0 : 0.0;
    return s;
}

SpMat assemble_A_H2(const AugmentedBlocks& blocks, const VecX& w_H) {
    FEFunction w(blocks.space_H);
    w.coeffs = fem::scatter_interior(w_H, *blocks.space_H);
    return fem::interior_block(fem::assemble_mass(*blocks.space_H, w, nullptr), *blocks.space_H);
}

VecX assemble_b_H2(const AugmentedBlocks& blocks, int i, const VecX& w_H) {
    return blocks.A_h4[i] * w_H;
}

double assemble_beta2(const AugmentedBlocks& blocks, int i, const VecX& w_H) {
    return blocks.rhs[i].dot(w_H);
}

VecX assemble_f_H(const AugmentedBlocks& blocks, const AugmentedState& s) {
    VecX f = VecX::Zero(blocks.M_H.rows());
    for (int i = 0; i < blocks.n_orbitals; ++i) {
        const VecX full = fem::scatter_interior(s.phi_H[i], *blocks.space_H);
        f += fem::interior_part(coarse_square_load(*blocks.space_H, full), *blocks.space_H);
        f += 2.0 * s.theta2[i] * (blocks.A_h4[i] * s.phi_H[i]);
        f += s.theta2[i] * s.theta2[i] * blocks.rhs[i];
    }
    return blocks.occupancy * f;
}

double assemble_g(const AugmentedBlocks& blocks, const AugmentedState& s) {
    double g = 0;
    for (int i = 0; i < blocks.n_orbitals; ++i) {
        g += s.phi_H[i].dot(blocks.A_H3 * s.phi_H[i]);           // phi' G phi
        g += 2.0 * s.theta2[i] * blocks.b_H3[i].dot(s.phi_H[i]); // F_i term
        g += s.theta2[i] * s.theta2[i] * blocks.beta3[i];        // g_{i,3}
    }
    return blocks.occupancy * g;
}

namespace {

/// H1 norm squared of the expanded orbital difference, from the blocks only
double state_change_sq(const AugmentedBlocks& B, const AugmentedState& a, const AugmentedState& b) {
    double total = 0;
    for (int i = 0; i < B.n_orbitals; ++i) {
        const VecX dphi = a.phi_H[i] - b.phi_H[i];
        const double dth = a.theta2[i] - b.theta2[i];
        const double semi = dphi.dot(B.C_H * dphi) + 2.0 * dth * B.d_phi[i].dot(dphi) +
                            dth * dth * B.zeta_phi[i];
        const double l2 = dphi.dot(B.M_H * dphi) + 2.0 * dth * B.c_Hh[i].dot(dphi) +
                          dth * dth * B.gamma_mass[i];
        total += semi + l2;
    }
    return total;
}

} // namespace

InnerResult inner_scf(const AugmentedBlocks& B, const AugmentedState& init, const InnerOptions& opt) {
    InnerResult out;
    out.state = init;
    const int n = B.n_orbitals;
    const int nh = static_cast<int>(B.M_H.rows());
    const SpMat A_base = B.A_H1 + B.A_H4;
    const unsigned long long fine_quads_before = B.fine_mesh->quad_counter.cells.load();

    for (int sweep = 1; sweep <= opt.max_iterations; ++sweep) {
        AugmentedState next = out.state;

        SpMat A_H = A_base;
        if (B.hartree_on) {
            A_H += assemble_A_H2(B, out.state.w_H);
            if (out.state.theta1 != 0.0) A_H += SpMat(out.state.theta1 * B.A_H3);
        }

        // one shifted factorization serves every orbital of this sweep
        eig::BorderedFactor shared;
        const bool sparse_path = nh + 1 > opt.dense_threshold;
        const double hint =
            out.state.lambda.size() ? out.state.lambda.minCoeff() - 1.0 : -1.0;
        if (sparse_path) shared = eig::factor_bordered(A_H, B.M_H, hint);

        auto orbital_solve = [&](int i) {
            VecX border = B.b_H1[i] + B.b_H4[i];
            double beta = B.beta1[i] + B.beta4[i];
            if (B.hartree_on) {
                border += assemble_b_H2(B, i, out.state.w_H) + out.state.theta1 * B.b_H3[i];
                beta += assemble_beta2(B, i, out.state.w_H) + out.state.theta1 * B.beta3[i];
            }
            eig::BorderedSystem sys;
            sys.A_H = &A_H;
            sys.b = border;
            sys.beta = beta;
            sys.M_H = &B.M_H;
            sys.c = B.c_Hh[i];
            sys.gamma = B.gamma_mass[i];
            eig::BorderedOptions bopt;
            bopt.nev_scan = std::min(nh + 1, n + opt.nev_scan_pad);
            bopt.score_floor = opt.score_floor;
            bopt.dense_threshold = opt.dense_threshold;
            bopt.shift_hint = hint;
            const auto r = eig::solve_bordered(sys, bopt, sparse_path ? &shared : nullptr);
            next.lambda[i] = r.lambda;
            next.phi_H[i] = r.phi_H;
            next.theta2[i] = r.theta;
            // keep the sign aligned with the previous sweep
            const double ip = next.phi_H[i].dot(B.M_H * out.state.phi_H[i]) +
                              next.theta2[i] * B.c_Hh[i].dot(out.state.phi_H[i]) +
                              out.state.theta2[i] * B.c_Hh[i].dot(next.phi_H[i]) +
                              next.theta2[i] * out.state.theta2[i] * B.gamma_mass[i];
            if (ip < 0) {
                next.phi_H[i] = -next.phi_H[i];
                next.theta2[i] = -next.theta2[i];
            }
        };
        if (opt.pool && n > 1) {
            opt.pool->parallel_for(n, orbital_solve);
        } else {
            for (int i = 0; i < n; ++i) orbital_solve(i);
        }

        if (B.hartree_on) {
            const double four_pi = 4.0 * std::numbers::pi;
            const VecX f = four_pi * assemble_f_H(B, next) - B.lift_load;
            const double g = four_pi * assemble_g(B, next) - B.lift_load0;
            // bordered SPD solve through the cached factorization
            const VecX t = B.hartree_ldlt->solve(f);
            next.theta1 = (g - B.d_Hh.dot(t)) / B.hartree_schur;
            next.w_H = t - next.theta1 * B.hartree_u;
        }

        const double delta = std::sqrt(state_change_sq(B, next, out.state));
        out.history.push_back(delta);
        out.state = std::move(next);
        out.iterations = sweep;

        if (B.fine_mesh->quad_counter.cells.load() != fine_quads_before)
            fail("internal", "fine-space quadrature detected inside the inner iteration");

        if (delta < opt.tol || !B.hartree_on) return out;
    }

    std::ostringstream ss;
    ss << "inner iteration exceeded " << opt.max_iterations << " sweeps; recent changes:";
    const std::size_t from = out.history.size() > 6 ? out.history.size() - 6 : 0;
    for (std::size_t i = from; i < out.history.size(); ++i) ss << " " << out.history[i];
    fail("nonconvergence", ss.str());
}

Expanded expand(const AugmentedState& s, const AugmentedBlocks& B) {
    Expanded e;
    e.lambda = s.lambda;
    for (int i = 0; i < B.n_orbitals; ++i) {
        FEFunction phi(B.space_h, fem::Role::wavefunction);
        phi.coeffs = B.P_int * s.phi_H[i] + s.theta2[i] * B.phi_tilde[i];
        e.orbitals.push_back(std::move(phi));
    }
    e.hartree = FEFunction(B.space_h, fem::Role::hartree);
    e.hartree.coeffs = B.ell + B.P_int * s.w_H + s.theta1 * B.w_tilde0;
    return e;
}

} // namespace ksafem::corr
