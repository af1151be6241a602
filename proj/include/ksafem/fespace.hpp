#pragma once

#include "ksafem/mesh.hpp"
#include "ksafem/types.hpp"

#include <memory>
#include <vector>

namespace ksafem::fem {

/// P1 nodal space: one dof per mesh vertex, boundary dofs on the box faces.
class FESpace {
public:
    explicit FESpace(mesh::MeshPtr m);

    const mesh::TetMesh& mesh() const { return *mesh_; }
    mesh::MeshPtr mesh_ptr() const { return mesh_; }
    int n_dofs() const { return mesh_->n_vertices(); }
    int n_interior() const { return static_cast<int>(interior_.size()); }
    const std::vector<int>& interior_dofs() const { return interior_; }
    const std::vector<int>& boundary_dofs() const { return boundary_; }
    /// position in interior_dofs(), or -1 for boundary dofs
    int interior_index(int dof) const { return interior_index_[dof]; }
    const Vec3& node(int dof) const { return mesh_->vertices[dof]; }

private:
    mesh::MeshPtr mesh_;
    std::vector<int> interior_;
    std::vector<int> boundary_;
    std::vector<int> interior_index_;
};

using SpacePtr = std::shared_ptr<const FESpace>;

enum class Role { generic, wavefunction, density, hartree };

struct FEFunction {
    SpacePtr space;
    VecX coeffs;
    Role role = Role::generic;

    FEFunction() = default;
    FEFunction(SpacePtr s, Role r = Role::generic)
        : space(std::move(s)), coeffs(VecX::Zero(space->n_dofs())), role(r) {}
    FEFunction(SpacePtr s, VecX c, Role r = Role::generic)
        : space(std::move(s)), coeffs(std::move(c)), role(r) {}

    /// value inside tet t at barycentric coordinates b
    double eval_in_tet(int t, const std::array<double, 4>& b) const {
        const auto& v = space->mesh().tets[t];
        return b[0] * coeffs[v[0]] + b[1] * coeffs[v[1]] + b[2] * coeffs[v[2]] + b[3] * coeffs[v[3]];
    }

    /// point evaluation by element search (linear scan; intended for tests and
    /// small diagnostics, not inner loops)
    double eval(const Vec3& x) const;
};

/// One-level prolongation: rows are fine vertices, columns coarse vertices.
/// New vertices interpolate their parent edge; inherited vertices map to
/// themselves. Exact for P1 on nested meshes.
SpMat prolongation_matrix(const mesh::TetMesh& fine);

/// Nested spaces over a refinement hierarchy with cached transfer matrices.
class SpaceHierarchy {
public:
    void push(mesh::MeshPtr m);
    int n_levels() const { return static_cast<int>(spaces_.size()); }
    SpacePtr space(int k) const { return spaces_.at(k); }
    const mesh::MeshHierarchy& meshes() const { return meshes_; }

    /// transfer matrix from level `from` to finer level `to`
    SpMat prolongation(int from, int to) const;
    FEFunction prolong(const FEFunction& coarse, int to) const;
    int level_of(const FESpace& s) const;

private:
    mesh::MeshHierarchy meshes_;
    std::vector<SpacePtr> spaces_;
    std::vector<SpMat> step_; // [k]: level k -> k+1
};

} // namespace ksafem::fem
