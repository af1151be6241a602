#include "ksafem/eigensolve.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace ksafem::eig {

namespace {

MatX dense_of(const SpMat& A) { return MatX(A); }

VecX pencil_residuals(const SpMat& A, const SpMat& M, const VecX& vals, const MatX& vecs) {
    VecX res(vals.size());
    for (int i = 0; i < vals.size(); ++i) {
        const VecX Av = A * vecs.col(i);
        const VecX Mv = M * vecs.col(i);
        const double den = std::max(Av.norm(), 1e-300);
        res[i] = (Av - vals[i] * Mv).norm() / den;
    }
    return res;
}

/// Deterministic pseudo-random matrix; fixed seed so results never depend on
/// run-to-run state or worker count.
MatX seeded_random(int rows, int cols, unsigned seed) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    MatX X(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) X(i, j) = dist(gen);
    return X;
}

/// M-orthonormalize the columns of X in place (SVQB); drops directions whose
/// Gram eigenvalue falls below a relative floor. Returns the kept count.
int svqb(const SpMat& M, MatX& X) {
    if (X.cols() == 0) return 0;
    for (int pass = 0; pass < 2; ++pass) {
        MatX G = X.transpose() * (M * X);
        G = 0.5 * (G + G.transpose());
        Eigen::SelfAdjointEigenSolver<MatX> es(G);
        const VecX d = es.eigenvalues();
        const double floor = std::max(d.maxCoeff(), 0.0) * 1e-12;
        int kept = 0;
        MatX U(G.rows(), G.cols());
        VecX scale(G.cols());
        for (int i = 0; i < d.size(); ++i) {
            if (d[i] > floor && d[i] > 0) {
                U.col(kept) = es.eigenvectors().col(i);
                scale[kept] = 1.0 / std::sqrt(d[i]);
                ++kept;
            }
        }
        if (kept == 0) {
            X.conservativeResize(Eigen::NoChange, 0);
            return 0;
        }
        X = X * U.leftCols(kept) * scale.head(kept).asDiagonal();
    }
    return static_cast<int>(X.cols());
}

struct ShiftedFactor {
    double sigma = 0;
    Eigen::SimplicialLDLT<SpMat> ldlt;
};

/// Find sigma with A - sigma M positive definite (checked by LDLT inertia).
void factor_below_spectrum(const SpMat& A, const SpMat& M, double sigma0, ShiftedFactor& f) {
    double sigma = sigma0;
    double step = 1.0 + 0.1 * std::abs(sigma0);
    for (int tries = 0; tries < 60; ++tries) {
        const SpMat K = A - sigma * M;
        f.ldlt.compute(K);
        if (f.ldlt.info() == Eigen::Success && (f.ldlt.vectorD().array() > 0.0).all()) {
            f.sigma = sigma;
            return;
        }
        sigma -= step;
        step *= 2.0;
    }
    fail("nonconvergence", "could not find a definite shift for the pencil");
}

double diag_ratio_min(const SpMat& A, const SpMat& M) {
    double r = std::numeric_limits<double>::infinity();
    for (int i = 0; i < A.rows(); ++i) {
        const double m = M.coeff(i, i);
        if (m > 0) r = std::min(r, A.coeff(i, i) / m);
    }
    return std::isfinite(r) ? r : 0.0;
}

GeneralizedEigResult dense_path(const SpMat& A, const SpMat& M, int nev) {
    Eigen::GeneralizedSelfAdjointEigenSolver<MatX> ges(dense_of(A), dense_of(M));
    if (ges.info() != Eigen::Success) fail("nonconvergence", "dense eigendecomposition failed");
    GeneralizedEigResult out;
    out.eigenvalues = ges.eigenvalues().head(nev);
    out.eigenvectors = ges.eigenvectors().leftCols(nev);
    return out;
}

/// Shift-invert Lanczos in the M inner product with full reorthogonalization.
bool lanczos_path(const SpMat& A, const SpMat& M, int nev, double tol, double sigma_hint,
                  GeneralizedEigResult& out) {
    const int n = static_cast<int>(A.rows());
    ShiftedFactor f;
    factor_below_spectrum(A, M, sigma_hint, f);

    const int m_max = std::min(n, std::max(240, 4 * nev + 80));
    MatX V(n, m_max + 1);
    MatX MV(n, m_max + 1);
    VecX alpha = VecX::Zero(m_max);
    VecX beta = VecX::Zero(m_max);

    VecX v = seeded_random(n, 1, 0xC0FFEEu).col(0);
    VecX Mv = M * v;
    v /= std::sqrt(v.dot(Mv));
    V.col(0) = v;
    MV.col(0) = M * v;

    int m = 0;
    auto extract = [&](int steps) -> bool {
        MatX T = MatX::Zero(steps, steps);
        for (int i = 0; i < steps; ++i) {
            T(i, i) = alpha[i];
            if (i + 1 < steps) {
                T(i, i + 1) = beta[i];
                T(i + 1, i) = beta[i];
            }
        }
        Eigen::SelfAdjointEigenSolver<MatX> es(T);
        if (es.info() != Eigen::Success) return false;
        // largest mu of the inverted operator <-> smallest lambda of the pencil
        MatX vecs(n, nev);
        VecX vals(nev);
        for (int i = 0; i < nev; ++i) {
            const int k = steps - 1 - i;
            const double mu = es.eigenvalues()[k];
            if (!(mu > 0)) return false;
            vals[i] = f.sigma + 1.0 / mu;
            vecs.col(i) = V.leftCols(steps) * es.eigenvectors().col(k);
        }
        const VecX res = pencil_residuals(A, M, vals, vecs);
        if ((res.array() <= tol).all()) {
            out.eigenvalues = vals;
            out.eigenvectors = vecs;
            out.residuals = res;
            return true;
        }
        return false;
    };

    unsigned refresh = 1;
    while (m < m_max) {
        VecX u = f.ldlt.solve(MV.col(m));
        alpha[m] = u.dot(MV.col(m));
        u -= alpha[m] * V.col(m);
        if (m > 0) u -= beta[m - 1] * V.col(m - 1);
        // full reorthogonalization, two sweeps
        for (int sweep = 0; sweep < 2; ++sweep) {
            const VecX proj = MV.leftCols(m + 1).transpose() * u;
            u -= V.leftCols(m + 1) * proj;
        }
        VecX Mu = M * u;
        double b = std::sqrt(std::max(0.0, u.dot(Mu)));
        if (b < 1e-13) {
            // invariant subspace reached; restart direction
            u = seeded_random(n, 1, 0xC0FFEEu + (++refresh)).col(0);
            for (int sweep = 0; sweep < 2; ++sweep) {
                const VecX proj = MV.leftCols(m + 1).transpose() * u;
                u -= V.leftCols(m + 1) * proj;
            }
            Mu = M * u;
            b = std::sqrt(std::max(0.0, u.dot(Mu)));
            if (b < 1e-13) break;
            beta[m] = 0.0;
        } else {
            beta[m] = b;
        }
        u /= b;
        Mu /= b;
        V.col(m + 1) = u;
        MV.col(m + 1) = Mu;
        ++m;
        if (m >= std::max(2 * nev + 6, 16) && (m % 12 == 0 || m == m_max))
            if (extract(m)) return true;
    }
    return m >= nev && extract(m);
}

struct Preconditioner {
    Eigen::IncompleteCholesky<double, Eigen::Lower, Eigen::AMDOrdering<int>> ic;
    bool ok = false;

    void build(const SpMat& A, const SpMat& M) {
        // rough lower bound of the pencil spectrum so the preconditioner
        // target A + s M is positive definite
        double g = std::numeric_limits<double>::infinity();
        VecX offdiag = VecX::Zero(A.rows());
        for (int k = 0; k < A.outerSize(); ++k)
            for (SpMat::InnerIterator it(A, k); it; ++it)
                if (it.row() != it.col()) offdiag[it.row()] += std::abs(it.value());
        double m_min = std::numeric_limits<double>::infinity();
        for (int i = 0; i < M.rows(); ++i) m_min = std::min(m_min, M.coeff(i, i));
        for (int i = 0; i < A.rows(); ++i) g = std::min(g, (A.coeff(i, i) - offdiag[i]) / m_min);
        double s = (g < 0) ? -1.1 * g : 0.0;
        for (int tries = 0; tries < 8; ++tries) {
            const SpMat B = A + s * M;
            ic.compute(B);
            if (ic.info() == Eigen::Success) {
                ok = true;
                return;
            }
            s = (s == 0.0) ? 1.0 : 2.0 * s;
        }
        ok = false;
    }

    MatX apply(const MatX& R) const {
        if (!ok) return R;
        MatX W(R.rows(), R.cols());
        for (int j = 0; j < R.cols(); ++j) W.col(j) = ic.solve(R.col(j));
        return W;
    }
};

/// Preconditioned block iteration (LOBPCG-style three-term subspace).
bool block_path(const SpMat& A, const SpMat& M, int nev, double tol, const MatX* guess,
                GeneralizedEigResult& out) {
    const int n = static_cast<int>(A.rows());
    Preconditioner prec;
    prec.build(A, M);

    MatX X = guess && guess->rows() == n && guess->cols() >= nev
                 ? MatX(guess->leftCols(nev))
                 : seeded_random(n, nev, 0x5EEDu);
    if (svqb(M, X) < nev) {
        X = seeded_random(n, nev, 0x5EED2u);
        if (svqb(M, X) < nev) return false;
    }

    MatX P(n, 0);
    VecX vals = VecX::Zero(nev);
    const int maxit = 300;
    for (int it = 0; it < maxit; ++it) {
        // Rayleigh-Ritz inside span(X)
        MatX G = X.transpose() * (A * X);
        G = 0.5 * (G + G.transpose());
        Eigen::SelfAdjointEigenSolver<MatX> es(G);
        X = X * es.eigenvectors();
        vals = es.eigenvalues();

        const MatX AX = A * X;
        const MatX MX = M * X;
        MatX R = AX - MX * vals.asDiagonal();
        VecX res(nev);
        for (int i = 0; i < nev; ++i)
            res[i] = R.col(i).norm() / std::max(AX.col(i).norm(), 1e-300);
        if ((res.array() <= tol).all()) {
            out.eigenvalues = vals;
            out.eigenvectors = X;
            out.residuals = res;
            return true;
        }

        MatX W = prec.apply(R);
        // strip the X component and rescale so small corrections are not
        // drowned during the joint orthonormalization
        W -= X * (MX.transpose() * W);
        for (int j = 0; j < W.cols(); ++j) {
            const double nn = std::sqrt(std::max(0.0, W.col(j).dot(M * W.col(j))));
            if (nn > 1e-300) W.col(j) /= nn;
        }
        for (int j = 0; j < P.cols(); ++j) {
            const double nn = std::sqrt(std::max(0.0, P.col(j).dot(M * P.col(j))));
            if (nn > 1e-300) P.col(j) /= nn;
        }
        MatX S(n, X.cols() + W.cols() + P.cols());
        S << X, W, P;
        if (svqb(M, S) < nev) return false;

        MatX GS = S.transpose() * (A * S);
        GS = 0.5 * (GS + GS.transpose());
        Eigen::SelfAdjointEigenSolver<MatX> ess(GS);
        const MatX C = ess.eigenvectors().leftCols(nev);
        const MatX Xn = S * C;
        MatX Cp = C;
        Cp.topRows(std::min<int>(nev, C.rows())).setZero();
        P = S * Cp;
        svqb(M, P);
        if (P.cols() > nev) P = P.leftCols(nev).eval();
        X = Xn;
    }
    return false;
}

} // namespace

void normalize_sign(Eigen::Ref<MatX> vectors) {
    for (int j = 0; j < vectors.cols(); ++j) {
        int arg = 0;
        double best = -1.0;
        for (int i = 0; i < vectors.rows(); ++i) {
            const double a = std::abs(vectors(i, j));
            if (a > best + 1e-300 && a > best) {
                best = a;
                arg = i;
            }
        }
        if (vectors(arg, j) < 0) vectors.col(j) = -vectors.col(j);
    }
}

GeneralizedEigResult solve_smallest(const SpMat& A, const SpMat& M, int nev, const EigOptions& opt) {
    const int n = static_cast<int>(A.rows());
    if (A.rows() != A.cols() || M.rows() != M.cols() || A.rows() != M.rows())
        fail("invalid-argument", "pencil dimensions disagree");
    if (nev < 1 || nev > n) fail("invalid-argument", "nev out of range");

    GeneralizedEigResult out;
    bool done = false;
    if (n <= opt.dense_threshold) {
        out = dense_path(A, M, nev);
        done = true;
    } else if (n <= opt.lanczos_max_dim) {
        const double hint = diag_ratio_min(A, M) - 1.0;
        done = lanczos_path(A, M, nev, opt.tol, hint, out);
        if (!done) done = block_path(A, M, nev, opt.tol, opt.guess, out);
    } else {
        done = block_path(A, M, nev, opt.tol, opt.guess, out);
    }
    if (!done) fail("nonconvergence", "eigensolver did not reach the requested tolerance");

    // enforce ordering, M-orthonormality and the sign convention
    std::vector<int> order(nev);
    for (int i = 0; i < nev; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return out.eigenvalues[a] < out.eigenvalues[b]; });
    VecX vals(nev);
    MatX vecs(n, nev);
    for (int i = 0; i < nev; ++i) {
        vals[i] = out.eigenvalues[order[i]];
        vecs.col(i) = out.eigenvectors.col(order[i]);
    }
    MatX G = vecs.transpose() * (M * vecs);
    Eigen::LLT<MatX> llt(G);
    if (llt.info() == Eigen::Success)
        vecs = llt.matrixL().solve(vecs.transpose()).transpose();
    normalize_sign(vecs);

    out.eigenvalues = vals;
    out.eigenvectors = vecs;
    out.residuals = pencil_residuals(A, M, vals, vecs);
    if ((out.residuals.array() > std::max(opt.tol, 1e-8)).any()) {
        std::ostringstream ss;
        ss << "eigen residuals " << out.residuals.transpose() << " exceed tol " << opt.tol;
        fail("nonconvergence", ss.str());
    }
    return out;
}

namespace {

BorderedResult select_candidate(const BorderedSystem& sys, const VecX& vals, const MatX& vecs,
                                double score_floor) {
    const int n = static_cast<int>(sys.b.size());
    if (!(sys.gamma > 0)) fail("ambiguous-selection", "augmentation vector has no mass");
    BorderedResult best;
    best.scanned = static_cast<int>(vals.size());
    double best_score = -1.0;
    for (int i = 0; i < vals.size(); ++i) {
        const VecX head = vecs.col(i).head(n);
        const double theta = vecs(n, i);
        const double overlap = sys.c.dot(head) + sys.gamma * theta;
        const double vnorm = std::sqrt(std::max(
            1e-300, head.dot((*sys.M_H) * head) + 2.0 * theta * sys.c.dot(head) + sys.gamma * theta * theta));
        const double score = std::abs(overlap) / (vnorm * std::sqrt(sys.gamma));
        if (score > best_score) {
            best_score = score;
            best.lambda = vals[i];
            best.phi_H = head;
            best.theta = theta;
            best.score = score;
        }
    }
    if (best_score < score_floor)
        fail("ambiguous-selection", "all scanned pairs have negligible augmentation component");
    return best;
}

} // namespace

BorderedFactor factor_bordered(const SpMat& A_H, const SpMat& M_H, double shift_hint) {
    BorderedFactor f;
    f.A_H = &A_H;
    f.M_H = &M_H;
    f.ldlt = std::make_shared<Eigen::SimplicialLDLT<SpMat>>();
    double sigma = shift_hint;
    double step = 1.0 + 0.1 * std::abs(sigma);
    for (int tries = 0; tries < 60; ++tries) {
        f.ldlt->compute(SpMat(A_H - sigma * M_H));
        if (f.ldlt->info() == Eigen::Success && (f.ldlt->vectorD().array() > 0.0).all()) {
            f.sigma = sigma;
            return f;
        }
        sigma -= step;
        step *= 2.0;
    }
    fail("nonconvergence", "could not shift the coarse block definite");
}

BorderedResult solve_bordered(const BorderedSystem& sys, const BorderedOptions& opt,
                              const BorderedFactor* shared) {
    const int n = static_cast<int>(sys.b.size());
    const int dim = n + 1;
    const int nev = std::min(opt.nev_scan, dim);

    if (dim <= opt.dense_threshold) {
        MatX Ad(dim, dim), Md(dim, dim);
        Ad.topLeftCorner(n, n) = dense_of(*sys.A_H);
        Ad.block(0, n, n, 1) = sys.b;
        Ad.block(n, 0, 1, n) = sys.b.transpose();
        Ad(n, n) = sys.beta;
        Md.topLeftCorner(n, n) = dense_of(*sys.M_H);
        Md.block(0, n, n, 1) = sys.c;
        Md.block(n, 0, 1, n) = sys.c.transpose();
        Md(n, n) = sys.gamma;

        Eigen::LLT<MatX> llt(Md);
        if (llt.info() != Eigen::Success)
            fail("ambiguous-selection", "bordered mass matrix is not positive definite");
        Eigen::GeneralizedSelfAdjointEigenSolver<MatX> ges(Ad, Md);
        if (ges.info() != Eigen::Success) fail("nonconvergence", "bordered eigendecomposition failed");
        return select_candidate(sys, ges.eigenvalues().head(nev), ges.eigenvectors().leftCols(nev),
                                opt.score_floor);
    }

    // sparse path: shift-invert Lanczos with the border folded in by a Schur
    // complement around the factored coarse block
    BorderedFactor local;
    const BorderedFactor* fac = nullptr;
    if (shared && shared->A_H == sys.A_H && shared->M_H == sys.M_H && shared->ldlt) {
        // the shared shift must also keep the bordered Schur scalar positive
        const VecX bs_try = sys.b - shared->sigma * sys.c;
        const VecX u_try = shared->ldlt->solve(bs_try);
        if ((sys.beta - shared->sigma * sys.gamma) - bs_try.dot(u_try) > 0) fac = shared;
    }
    double sigma = 0;
    VecX u;
    double schur = 0;
    if (fac) {
        sigma = fac->sigma;
        const VecX bs = sys.b - sigma * sys.c;
        u = fac->ldlt->solve(bs);
        schur = (sys.beta - sigma * sys.gamma) - bs.dot(u);
    } else {
        double try_sigma = shared ? shared->sigma : opt.shift_hint;
        double step = 1.0 + 0.1 * std::abs(try_sigma);
        bool have = false;
        for (int tries = 0; tries < 60 && !have; ++tries) {
            local = factor_bordered(*sys.A_H, *sys.M_H, try_sigma);
            const VecX bs = sys.b - local.sigma * sys.c;
            u = local.ldlt->solve(bs);
            schur = (sys.beta - local.sigma * sys.gamma) - bs.dot(u);
            if (schur > 0) {
                have = true;
                sigma = local.sigma;
                break;
            }
            try_sigma = local.sigma - step;
            step *= 2.0;
        }
        if (!have) fail("nonconvergence", "could not shift the bordered pencil definite");
        fac = &local;
    }

    const VecX bs = sys.b - sigma * sys.c;
    auto apply_M = [&](const VecX& x) {
        VecX y(dim);
        y.head(n) = (*sys.M_H) * x.head(n) + x[n] * sys.c;
        y[n] = sys.c.dot(x.head(n)) + sys.gamma * x[n];
        return y;
    };
    auto solve_K = [&](const VecX& z) {
        VecX y(dim);
        const VecX t = fac->ldlt->solve(z.head(n));
        y[n] = (z[n] - bs.dot(t)) / schur;
        y.head(n) = t - y[n] * u;
        return y;
    };
    auto apply_A = [&](const VecX& x) {
        VecX y(dim);
        y.head(n) = (*sys.A_H) * x.head(n) + x[n] * sys.b;
        y[n] = sys.b.dot(x.head(n)) + sys.beta * x[n];
        return y;
    };

    const int m_max = std::min(dim, std::max(120, 4 * nev + 40));
    MatX V(dim, m_max + 1), MV(dim, m_max + 1);
    VecX alpha = VecX::Zero(m_max), beta_l = VecX::Zero(m_max);
    VecX v = seeded_random(dim, 1, 0xB0DEu).col(0);
    VecX Mv = apply_M(v);
    v /= std::sqrt(v.dot(Mv));
    V.col(0) = v;
    MV.col(0) = apply_M(v);

    VecX vals(nev);
    MatX vecs(dim, nev);
    auto extract = [&](int steps) -> bool {
        MatX T = MatX::Zero(steps, steps);
        for (int i = 0; i < steps; ++i) {
            T(i, i) = alpha[i];
            if (i + 1 < steps) T(i, i + 1) = T(i + 1, i) = beta_l[i];
        }
        Eigen::SelfAdjointEigenSolver<MatX> es(T);
        for (int i = 0; i < nev; ++i) {
            const int k = steps - 1 - i;
            const double mu = es.eigenvalues()[k];
            if (!(mu > 0)) return false;
            vals[i] = sigma + 1.0 / mu;
            vecs.col(i) = V.leftCols(steps) * es.eigenvectors().col(k);
            const double nrm = std::sqrt(vecs.col(i).dot(apply_M(vecs.col(i))));
            vecs.col(i) /= nrm;
        }
        for (int i = 0; i < nev; ++i) {
            const VecX Av = apply_A(vecs.col(i));
            const double den = std::max(Av.norm(), 1e-300);
            if ((Av - vals[i] * apply_M(vecs.col(i))).norm() > opt.tol * den) return false;
        }
        return true;
    };

    int m = 0;
    bool done = false;
    while (m < m_max && !done) {
        VecX w = solve_K(MV.col(m));
        alpha[m] = w.dot(MV.col(m));
        w -= alpha[m] * V.col(m);
        if (m > 0) w -= beta_l[m - 1] * V.col(m - 1);
        for (int sweep = 0; sweep < 2; ++sweep) {
            const VecX proj = MV.leftCols(m + 1).transpose() * w;
            w -= V.leftCols(m + 1) * proj;
        }
        const VecX Mw = apply_M(w);
        const double b = std::sqrt(std::max(0.0, w.dot(Mw)));
        if (b < 1e-13) {
            done = m >= nev && extract(m);
            break;
        }
        beta_l[m] = b;
        V.col(m + 1) = w / b;
        MV.col(m + 1) = Mw / b;
        ++m;
        if (m >= std::max(2 * nev, 8) && (m % 8 == 0 || m == m_max)) done = extract(m);
    }
    if (!done && !(m >= nev && extract(m)))
        fail("nonconvergence", "bordered eigensolve stalled");
    return select_candidate(sys, vals, vecs, opt.score_floor);
}

} // namespace ksafem::eig
