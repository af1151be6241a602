#include "ksafem/fespace.hpp"

#include <map>

namespace ksafem::fem {

FESpace::FESpace(mesh::MeshPtr m) : mesh_(std::move(m)) {
    const int n = mesh_->n_vertices();
    interior_index_.assign(n, -1);
    for (int v = 0; v < n; ++v) {
        if (mesh_->vertex_on_boundary[v]) {
            boundary_.push_back(v);
        } else {
            interior_index_[v] = static_cast<int>(interior_.size());
            interior_.push_back(v);
        }
    }
}

double FEFunction::eval(const Vec3& x) const {
    const auto& m = space->mesh();
    const double eps = 1e-10 * m.box.extent().maxCoeff();
    for (int t = 0; t < m.n_tets(); ++t) {
        const auto& v = m.tets[t];
        Mat3 J;
        for (int i = 0; i < 3; ++i) J.col(i) = m.vertices[v[i + 1]] - m.vertices[v[0]];
        const Vec3 b = J.colPivHouseholderQr().solve(x - m.vertices[v[0]]);
        const double b0 = 1.0 - b.sum();
        if (b0 >= -eps && b[0] >= -eps && b[1] >= -eps && b[2] >= -eps)
            return eval_in_tet(t, {b0, b[0], b[1], b[2]});
    }
    fail("invalid-argument", "point outside mesh");
}

SpMat prolongation_matrix(const mesh::TetMesh& fine) {
    const int n_coarse = fine.n_parent_vertices;
    const int n_fine = fine.n_vertices();
    // Each fine vertex value is a convex combination of at most four coarse
    // vertex values; accumulate rows in creation order so parent rows exist.
    std::vector<std::map<int, double>> rows(n_fine);
    for (int v = 0; v < n_fine; ++v) {
        const auto [a, b] = fine.vertex_parents[v];
        if (v < n_coarse) {
            rows[v][v] = 1.0;
        } else {
            for (const auto& [col, val] : rows[a]) rows[v][col] += 0.5 * val;
            for (const auto& [col, val] : rows[b]) rows[v][col] += 0.5 * val;
        }
    }
    std::vector<Triplet> trip;
    for (int v = 0; v < n_fine; ++v)
        for (const auto& [col, val] : rows[v]) trip.emplace_back(v, col, val);
    SpMat P(n_fine, n_coarse);
    P.setFromTriplets(trip.begin(), trip.end());
    return P;
}

void SpaceHierarchy::push(mesh::MeshPtr m) {
    if (!spaces_.empty()) step_.push_back(prolongation_matrix(*m));
    meshes_.push(m);
    spaces_.push_back(std::make_shared<FESpace>(std::move(m)));
}

SpMat SpaceHierarchy::prolongation(int from, int to) const {
    if (from > to || to >= n_levels()) fail("hierarchy", "levels are not nested");
    if (from == to) {
        SpMat I(spaces_[from]->n_dofs(), spaces_[from]->n_dofs());
        I.setIdentity();
        return I;
    }
    SpMat P = step_[from];
    for (int k = from + 1; k < to; ++k) P = (step_[k] * P).eval();
    return P;
}

FEFunction SpaceHierarchy::prolong(const FEFunction& coarse, int to) const {
    const int from = level_of(*coarse.space);
    if (from < 0 || from > to) fail("hierarchy", "levels are not nested");
    FEFunction out(spaces_.at(to), coarse.role);
    VecX c = coarse.coeffs;
    for (int k = from; k < to; ++k) c = (step_[k] * c).eval();
    out.coeffs = std::move(c);
    return out;
}

int SpaceHierarchy::level_of(const FESpace& s) const {
    for (int k = 0; k < n_levels(); ++k)
        if (spaces_[k].get() == &s) return k;
    return -1;
}

} // namespace ksafem::fem
