#include "ksafem/scf.hpp"

#include "ksafem/assembly.hpp"

#include <cmath>
#include <sstream>

namespace ksafem::scf {

using fem::FEFunction;

namespace {

double density_change(const FEFunction& a, const FEFunction& b, bool l1) {
    FEFunction d(a.space);
    d.coeffs = a.coeffs - b.coeffs;
    return l1 ? fem::l1_norm(d) : fem::h1_norm(d);
}

} // namespace

ScfResult self_consistent_solve(const model::MolecularSystem& sys, fem::SpacePtr space,
                                const ScfOptions& opt, WorkerPool* pool) {
    sys.validate();
    const auto& V = *space;
    const SpMat S = fem::assemble_stiffness(V, pool);
    const SpMat M = fem::assemble_mass(V, pool);
    const SpMat M_ext = fem::assemble_mass(
        V, fem::ScalarField([&](const Vec3& x) { return model::v_ext(sys, x); }), pool);
    const SpMat M_ii = fem::interior_block(M, V);
    const SpMat base_ii = fem::interior_block(SpMat(0.5 * S + M_ext), V);

    ScfResult res;
    res.rho = FEFunction(space, fem::Role::density);
    res.hartree = FEFunction(space, fem::Role::hartree);

    MatX guess;
    if (opt.guess && opt.guess->rows() == V.n_interior() && opt.guess->cols() >= sys.n_pairs)
        guess = opt.guess->leftCols(sys.n_pairs);

    for (int iter = 1; iter <= opt.max_iterations; ++iter) {
        // potential carried by a nodal field so one weighted mass covers both terms
        FEFunction w_tot(space);
        if (opt.hartree_on) w_tot.coeffs += res.hartree.coeffs;
        if (opt.xc_on)
            for (int i = 0; i < w_tot.coeffs.size(); ++i)
                w_tot.coeffs[i] += model::xc_potential(sys.xc, res.rho.coeffs[i]);

        SpMat A_ii = base_ii;
        if (opt.hartree_on || opt.xc_on)
            A_ii += fem::interior_block(fem::assemble_mass(V, w_tot, pool), V);

        eig::EigOptions eopt;
        eopt.tol = opt.tol_eig;
        eopt.dense_threshold = opt.dense_threshold;
        if (guess.size() > 0) eopt.guess = &guess;
        const auto eres = eig::solve_smallest(A_ii, M_ii, sys.n_pairs, eopt);
        guess = eres.eigenvectors;

        res.lambdas = eres.eigenvalues;
        res.orbitals.clear();
        for (int i = 0; i < sys.n_pairs; ++i) {
            FEFunction phi(space, fem::Role::wavefunction);
            phi.coeffs = fem::scatter_interior(eres.eigenvectors.col(i), V);
            res.orbitals.push_back(std::move(phi));
        }

        const FEFunction rho_new = model::density(res.orbitals, sys.occupancy);
        const double delta = density_change(rho_new, res.rho, opt.norm_l1);
        res.history.push_back(delta);
        res.iterations = iter;

        // without a density-dependent potential there is nothing to damp
        const double mix = (opt.hartree_on || opt.xc_on) ? opt.mixing : 1.0;
        res.rho.coeffs = (1.0 - mix) * res.rho.coeffs + mix * rho_new.coeffs;
        if (opt.hartree_on) {
            const auto moments = hartree::compute_moments(res.rho);
            const VecX bc = hartree::boundary_values(moments, V);
            res.hartree = hartree::solve_hartree(space, res.rho, bc, opt.tol_eig);
        }

        if (delta < opt.tol && iter >= 2) return res;
    }

    std::ostringstream ss;
    ss << "self-consistent iteration exceeded " << opt.max_iterations << " steps; density changes:";
    const std::size_t from = res.history.size() > 6 ? res.history.size() - 6 : 0;
    for (std::size_t i = from; i < res.history.size(); ++i) ss << " " << res.history[i];
    fail("nonconvergence", ss.str());
}

ScfResult initial_coarse_solve(const model::MolecularSystem& sys, fem::SpacePtr space, double scf_tol,
                               ScfOptions opt, WorkerPool* pool) {
    opt.tol = scf_tol;
    return self_consistent_solve(sys, space, opt, pool);
}

} // namespace ksafem::scf
