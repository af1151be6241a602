#include "ksafem/solver.hpp"

#include <cmath>
#include <limits>

namespace ksafem::fem {

namespace {

/// Gather submatrix A(rows, cols) given index maps (-1 = dropped).
SpMat gather(const SpMat& A, const std::vector<int>& row_of, int n_rows, const std::vector<int>& col_of,
             int n_cols) {
    std::vector<Triplet> trip;
    trip.reserve(A.nonZeros());
    for (int k = 0; k < A.outerSize(); ++k)
        for (SpMat::InnerIterator it(A, k); it; ++it) {
            const int r = row_of[it.row()];
            const int c = col_of[it.col()];
            if (r >= 0 && c >= 0) trip.emplace_back(r, c, it.value());
        }
    SpMat S(n_rows, n_cols);
    S.setFromTriplets(trip.begin(), trip.end());
    return S;
}

} // namespace

EllipticSolver::EllipticSolver(const SpMat& A, SpacePtr space) : space_(std::move(space)) {
    const int n = space_->n_dofs();
    if (A.rows() != n || A.cols() != n) fail("mismatched-spaces", "matrix size does not match space");
    const int ni = space_->n_interior();
    std::vector<int> int_of(n, -1), bnd_of(n, -1);
    for (int i = 0; i < ni; ++i) int_of[space_->interior_dofs()[i]] = i;
    const auto& bd = space_->boundary_dofs();
    for (std::size_t i = 0; i < bd.size(); ++i) bnd_of[bd[i]] = static_cast<int>(i);

    A_ii_ = gather(A, int_of, ni, int_of, ni);
    A_ib_ = gather(A, int_of, ni, bnd_of, static_cast<int>(bd.size()));

    diag_ = VecX::Ones(ni);
    min_diag_ = std::numeric_limits<double>::infinity();
    for (int i = 0; i < ni; ++i) {
        const double d = A_ii_.coeff(i, i);
        min_diag_ = std::min(min_diag_, d);
        diag_[i] = (d != 0.0) ? d : 1.0;
    }
    if (ni == 0) min_diag_ = 0.0;
}

VecX EllipticSolver::apply_sgs(const VecX& r) const {
    // symmetric Gauss-Seidel: (D+L)^-1 D (D+U)^-1
    VecX z = A_ii_.triangularView<Eigen::Lower>().solve(r);
    z.array() *= diag_.array();
    return A_ii_.triangularView<Eigen::Upper>().solve(z);
}

VecX EllipticSolver::pcg(const VecX& rhs, const SolverOptions& opt, SolveStats* stats) const {
    const int n = static_cast<int>(rhs.size());
    VecX x = VecX::Zero(n);
    const double bnorm = rhs.norm();
    SolveStats local;
    if (bnorm == 0.0) {
        local.converged = true;
        if (stats) *stats = local;
        return x;
    }
    VecX r = rhs;
    VecX z = apply_sgs(r);
    VecX p = z;
    double rz = r.dot(z);
    for (int it = 0; it < opt.max_iterations; ++it) {
        const VecX Ap = A_ii_ * p;
        const double pAp = p.dot(Ap);
        if (!(pAp > 0.0)) {
            local.breakdown = true;
            local.iterations = it;
            local.relative_residual = r.norm() / bnorm;
            break;
        }
        const double alpha = rz / pAp;
        x += alpha * p;
        r -= alpha * Ap;
        double rel = r.norm() / bnorm;
        if (rel <= opt.tol) {
            // the recursive residual drifts from b - Ax near machine
            // precision; the contract is on the true residual
            r = rhs - A_ii_ * x;
            rel = r.norm() / bnorm;
            if (rel <= opt.tol) {
                local.converged = true;
                local.iterations = it + 1;
                local.relative_residual = rel;
                break;
            }
            z = apply_sgs(r);
            p = z;
            rz = r.dot(z);
            local.iterations = it + 1;
            local.relative_residual = rel;
            continue;
        }
        z = apply_sgs(r);
        const double rz_new = r.dot(z);
        p = z + (rz_new / rz) * p;
        rz = rz_new;
        local.iterations = it + 1;
        local.relative_residual = rel;
    }
    if (stats) *stats = local;
    return x;
}

VecX EllipticSolver::solve(const VecX& b, const VecX& bc, const SolverOptions& opt, SolveStats* stats) const {
    const int n = space_->n_dofs();
    const int ni = space_->n_interior();
    const auto& bd = space_->boundary_dofs();

    VecX xb(bd.size());
    for (std::size_t i = 0; i < bd.size(); ++i) xb[i] = bc.size() ? bc[bd[i]] : 0.0;

    VecX rhs(ni);
    for (int i = 0; i < ni; ++i) rhs[i] = b[space_->interior_dofs()[i]];
    if (xb.size() > 0) rhs -= A_ib_ * xb;

    const VecX xi = pcg(rhs, opt, stats);

    VecX x = VecX::Zero(n);
    for (int i = 0; i < ni; ++i) x[space_->interior_dofs()[i]] = xi[i];
    for (std::size_t i = 0; i < bd.size(); ++i) x[bd[i]] = xb[i];
    return x;
}

VecX EllipticSolver::solve_zero_bc(const VecX& b, const SolverOptions& opt, SolveStats* stats) const {
    return solve(b, VecX(), opt, stats);
}

VecX solve_spd(const SpMat& A, const VecX& b, SpacePtr space, const VecX& bc, double tol,
               SolveStats* stats) {
    EllipticSolver solver(A, std::move(space));
    SolverOptions opt;
    opt.tol = tol;
    SolveStats st;
    VecX x = solver.solve(b, bc, opt, &st);
    if (stats) *stats = st;
    if (!st.converged)
        fail("nonconvergence", "linear solve stalled at relative residual " +
                                   std::to_string(st.relative_residual) + " after " +
                                   std::to_string(st.iterations) + " iterations");
    return x;
}

} // namespace ksafem::fem
