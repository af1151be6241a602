#include "ksafem/assembly.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace ksafem::fem {

namespace {

constexpr int kChunks = 64; // fixed chunk count keeps parallel assembly reproducible

struct TetGeom {
    Eigen::Matrix<double, 4, 3> grad;
    double volume;
    std::array<Vec3, 4> x;
};

TetGeom tet_geom(const mesh::TetMesh& m, int t) {
    TetGeom g;
    const auto& v = m.tets[t];
    for (int i = 0; i < 4; ++i) g.x[i] = m.vertices[v[i]];
    Mat3 J;
    for (int i = 0; i < 3; ++i) J.col(i) = g.x[i + 1] - g.x[0];
    g.volume = std::abs(J.determinant()) / 6.0;
    const Mat3 Jinv = J.inverse();
    for (int i = 0; i < 3; ++i) g.grad.row(i + 1) = Jinv.row(i);
    g.grad.row(0) = -(g.grad.row(1) + g.grad.row(2) + g.grad.row(3));
    return g;
}

inline Vec3 quad_point(const TetGeom& g, const std::array<double, 4>& b) {
    return b[0] * g.x[0] + b[1] * g.x[1] + b[2] * g.x[2] + b[3] * g.x[3];
}

template <class PerTet>
SpMat assemble_matrix(const FESpace& V, PerTet&& per_tet, WorkerPool* pool) {
    const auto& m = V.mesh();
    const int nt = m.n_tets();
    const int nc = std::clamp(nt, 1, kChunks);
    std::vector<std::vector<Triplet>> chunks(nc);
    auto run = [&](int c) {
        const int lo = static_cast<int>(std::int64_t(nt) * c / nc);
        const int hi = static_cast<int>(std::int64_t(nt) * (c + 1) / nc);
        auto& trip = chunks[c];
        trip.reserve(static_cast<std::size_t>(hi - lo) * 16);
        for (int t = lo; t < hi; ++t) per_tet(t, trip);
    };
    if (pool && nt > 256) {
        pool->parallel_for(nc, run);
    } else {
        for (int c = 0; c < nc; ++c) run(c);
    }
    std::vector<Triplet> all;
    std::size_t total = 0;
    for (const auto& c : chunks) total += c.size();
    all.reserve(total);
    for (const auto& c : chunks) all.insert(all.end(), c.begin(), c.end());
    SpMat A(V.n_dofs(), V.n_dofs());
    A.setFromTriplets(all.begin(), all.end());
    m.quad_counter.cells += static_cast<unsigned long long>(nt);
    return A;
}

template <class PerTet>
VecX assemble_vector(const FESpace& V, PerTet&& per_tet, WorkerPool* pool) {
    const auto& m = V.mesh();
    const int nt = m.n_tets();
    const int nc = std::clamp(nt, 1, kChunks);
    std::vector<VecX> chunks(nc, VecX::Zero(V.n_dofs()));
    auto run = [&](int c) {
        const int lo = static_cast<int>(std::int64_t(nt) * c / nc);
        const int hi = static_cast<int>(std::int64_t(nt) * (c + 1) / nc);
        for (int t = lo; t < hi; ++t) per_tet(t, chunks[c]);
    };
    if (pool && nt > 256) {
        pool->parallel_for(nc, run);
    } else {
        for (int c = 0; c < nc; ++c) run(c);
    }
    VecX b = VecX::Zero(V.n_dofs());
    for (const auto& c : chunks) b += c;
    m.quad_counter.cells += static_cast<unsigned long long>(nt);
    return b;
}

void check_same_mesh(const FESpace& V, const FEFunction& w) {
    if (&w.space->mesh() != &V.mesh()) fail("mismatched-spaces", "weight lives on a different mesh");
}

} // namespace

SpMat assemble_stiffness(const FESpace& V, WorkerPool* pool) {
    const auto& m = V.mesh();
    return assemble_matrix(
        V,
        [&](int t, std::vector<Triplet>& trip) {
            const TetGeom g = tet_geom(m, t);
            const Eigen::Matrix4d K = g.volume * (g.grad * g.grad.transpose());
            const auto& v = m.tets[t];
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) trip.emplace_back(v[i], v[j], K(i, j));
        },
        pool);
}

namespace {

template <class WeightAt>
SpMat weighted_mass(const FESpace& V, WeightAt&& wat, WorkerPool* pool) {
    const auto& m = V.mesh();
    const auto& rule = quad::default_rule();
    return assemble_matrix(
        V,
        [&](int t, std::vector<Triplet>& trip) {
            const TetGeom g = tet_geom(m, t);
            const auto& v = m.tets[t];
            Eigen::Matrix4d K = Eigen::Matrix4d::Zero();
            for (const auto& q : rule.points) {
                const double w = wat(t, g, q.bary);
                if (!std::isfinite(w))
                    fail("singular-quadrature", "weight is not finite at a quadrature point");
                const double s = q.weight * g.volume * w;
                for (int i = 0; i < 4; ++i)
                    for (int j = 0; j < 4; ++j) K(i, j) += s * q.bary[i] * q.bary[j];
            }
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) trip.emplace_back(v[i], v[j], K(i, j));
        },
        pool);
}

} // namespace

SpMat assemble_mass(const FESpace& V, WorkerPool* pool) {
    return weighted_mass(
        V, [](int, const TetGeom&, const std::array<double, 4>&) { return 1.0; }, pool);
}

SpMat assemble_mass(const FESpace& V, const ScalarField& w, WorkerPool* pool) {
    return weighted_mass(
        V,
        [&](int, const TetGeom& g, const std::array<double, 4>& b) { return w(quad_point(g, b)); },
        pool);
}

SpMat assemble_mass(const FESpace& V, const FEFunction& w, WorkerPool* pool) {
    check_same_mesh(V, w);
    const auto& m = V.mesh();
    return weighted_mass(
        V,
        [&](int t, const TetGeom&, const std::array<double, 4>& b) {
            const auto& v = m.tets[t];
            return b[0] * w.coeffs[v[0]] + b[1] * w.coeffs[v[1]] + b[2] * w.coeffs[v[2]] +
                   b[3] * w.coeffs[v[3]];
        },
        pool);
}

SpMat assemble_mass_with_rule(const FESpace& V, const ScalarField& w, const quad::TetRule& rule) {
    const auto& m = V.mesh();
    return assemble_matrix(
        V,
        [&](int t, std::vector<Triplet>& trip) {
            const TetGeom g = tet_geom(m, t);
            const auto& v = m.tets[t];
            Eigen::Matrix4d K = Eigen::Matrix4d::Zero();
            for (const auto& q : rule.points) {
                const double s = q.weight * g.volume * w(quad_point(g, q.bary));
                for (int i = 0; i < 4; ++i)
                    for (int j = 0; j < 4; ++j) K(i, j) += s * q.bary[i] * q.bary[j];
            }
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) trip.emplace_back(v[i], v[j], K(i, j));
        },
        nullptr);
}

namespace {

template <class ValueAt>
VecX load_vector(const FESpace& V, ValueAt&& fat, WorkerPool* pool) {
    const auto& m = V.mesh();
    const auto& rule = quad::default_rule();
    return assemble_vector(
        V,
        [&](int t, VecX& b) {
            const TetGeom g = tet_geom(m, t);
            const auto& v = m.tets[t];
            for (const auto& q : rule.points) {
                const double f = fat(t, g, q.bary);
                if (!std::isfinite(f))
                    fail("singular-quadrature", "load is not finite at a quadrature point");
                const double s = q.weight * g.volume * f;
                for (int i = 0; i < 4; ++i) b[v[i]] += s * q.bary[i];
            }
        },
        pool);
}

} // namespace

VecX assemble_load(const FESpace& V, const ScalarField& f, WorkerPool* pool) {
    return load_vector(
        V, [&](int, const TetGeom& g, const std::array<double, 4>& b) { return f(quad_point(g, b)); },
        pool);
}

VecX assemble_load(const FESpace& V, const FEFunction& f, WorkerPool* pool) {
    check_same_mesh(V, f);
    const auto& m = V.mesh();
    return load_vector(
        V,
        [&](int t, const TetGeom&, const std::array<double, 4>& b) {
            const auto& v = m.tets[t];
            return b[0] * f.coeffs[v[0]] + b[1] * f.coeffs[v[1]] + b[2] * f.coeffs[v[2]] +
                   b[3] * f.coeffs[v[3]];
        },
        pool);
}

double integrate(const FESpace& V, const ScalarField& f) {
    const auto& m = V.mesh();
    const auto& rule = quad::default_rule();
    double s = 0;
    for (int t = 0; t < m.n_tets(); ++t) {
        const TetGeom g = tet_geom(m, t);
        for (const auto& q : rule.points) s += q.weight * g.volume * f(quad_point(g, q.bary));
    }
    m.quad_counter.cells += static_cast<unsigned long long>(m.n_tets());
    return s;
}

double integrate_of(const FEFunction& u, const std::function<double(double, const Vec3&)>& g) {
    const auto& m = u.space->mesh();
    const auto& rule = quad::default_rule();
    double s = 0;
    for (int t = 0; t < m.n_tets(); ++t) {
        const TetGeom geo = tet_geom(m, t);
        const auto& v = m.tets[t];
        for (const auto& q : rule.points) {
            const double val = q.bary[0] * u.coeffs[v[0]] + q.bary[1] * u.coeffs[v[1]] +
                               q.bary[2] * u.coeffs[v[2]] + q.bary[3] * u.coeffs[v[3]];
            s += q.weight * geo.volume * g(val, quad_point(geo, q.bary));
        }
    }
    m.quad_counter.cells += static_cast<unsigned long long>(m.n_tets());
    return s;
}

double l2_norm(const FEFunction& f) {
    const auto& m = f.space->mesh();
    double s = 0;
    for (int t = 0; t < m.n_tets(); ++t) {
        const auto& v = m.tets[t];
        const double vol = std::abs(m.tet_volume(t));
        // exact P1 mass: int l_i l_j = V/10 (i==j), V/20 otherwise
        double sum = 0, sq = 0;
        for (int i = 0; i < 4; ++i) {
            sum += f.coeffs[v[i]];
            sq += f.coeffs[v[i]] * f.coeffs[v[i]];
        }
        s += vol * (sum * sum + sq) / 20.0;
    }
    m.quad_counter.cells += static_cast<unsigned long long>(m.n_tets());
    return std::sqrt(std::max(0.0, s));
}

double h1_seminorm(const FEFunction& f) {
    const auto& m = f.space->mesh();
    double s = 0;
    for (int t = 0; t < m.n_tets(); ++t) {
        const TetGeom g = tet_geom(m, t);
        const auto& v = m.tets[t];
        Vec3 grad = Vec3::Zero();
        for (int i = 0; i < 4; ++i) grad += f.coeffs[v[i]] * g.grad.row(i).transpose();
        s += g.volume * grad.squaredNorm();
    }
    m.quad_counter.cells += static_cast<unsigned long long>(m.n_tets());
    return std::sqrt(std::max(0.0, s));
}

double h1_norm(const FEFunction& f) {
    const double l2 = l2_norm(f);
    const double semi = h1_seminorm(f);
    return std::sqrt(l2 * l2 + semi * semi);
}

double l1_norm(const FEFunction& f) {
    return integrate_of(f, [](double v, const Vec3&) { return std::abs(v); });
}

double l2_norm(const std::vector<FEFunction>& fs) {
    double s = 0;
    for (const auto& f : fs) {
        const double n = l2_norm(f);
        s += n * n;
    }
    return std::sqrt(s);
}

double h1_norm(const std::vector<FEFunction>& fs) {
    double s = 0;
    for (const auto& f : fs) {
        const double n = h1_norm(f);
        s += n * n;
    }
    return std::sqrt(s);
}

SpMat interior_block(const SpMat& A, const FESpace& V) {
    const int ni = V.n_interior();
    std::vector<Triplet> trip;
    trip.reserve(A.nonZeros());
    for (int k = 0; k < A.outerSize(); ++k)
        for (SpMat::InnerIterator it(A, k); it; ++it) {
            const int r = V.interior_index(static_cast<int>(it.row()));
            const int c = V.interior_index(static_cast<int>(it.col()));
            if (r >= 0 && c >= 0) trip.emplace_back(r, c, it.value());
        }
    SpMat S(ni, ni);
    S.setFromTriplets(trip.begin(), trip.end());
    return S;
}

VecX interior_part(const VecX& full, const FESpace& V) {
    VecX out(V.n_interior());
    for (int i = 0; i < V.n_interior(); ++i) out[i] = full[V.interior_dofs()[i]];
    return out;
}

VecX scatter_interior(const VecX& interior, const FESpace& V) {
    VecX out = VecX::Zero(V.n_dofs());
    for (int i = 0; i < V.n_interior(); ++i) out[V.interior_dofs()[i]] = interior[i];
    return out;
}

void write_matrix_market(const SpMat& A, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) fail("io", "cannot open " + path);
    std::fprintf(f, "%%%%MatrixMarket matrix coordinate real general\n");
    std::fprintf(f, "%ld %ld %ld\n", long(A.rows()), long(A.cols()), long(A.nonZeros()));
    for (int k = 0; k < A.outerSize(); ++k)
        for (SpMat::InnerIterator it(A, k); it; ++it)
            std::fprintf(f, "%ld %ld %.16e\n", long(it.row() + 1), long(it.col() + 1), it.value());
    std::fclose(f);
}

double symmetry_defect(const SpMat& A) {
    const SpMat D = SpMat(A - SpMat(A.transpose()));
    double num = 0, den = 0;
    for (int k = 0; k < D.outerSize(); ++k)
        for (SpMat::InnerIterator it(D, k); it; ++it) num = std::max(num, std::abs(it.value()));
    for (int k = 0; k < A.outerSize(); ++k)
        for (SpMat::InnerIterator it(A, k); it; ++it) den = std::max(den, std::abs(it.value()));
    return den > 0 ? num / den : 0.0;
}

} // namespace ksafem::fem
