#pragma once

#include "ksafem/types.hpp"

#include <array>
#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace ksafem::mesh {

struct Box {
    Vec3 lo{-1.0, -1.0, -1.0};
    Vec3 hi{1.0, 1.0, 1.0};
    bool valid() const {
        return (hi.array() > lo.array()).all() && lo.allFinite() && hi.allFinite();
    }
    Vec3 extent() const { return hi - lo; }
    Vec3 center() const { return 0.5 * (lo + hi); }
    double volume() const { return extent().prod(); }
};

/// Per-mesh tally of quadrature element visits. Lets callers assert that a
/// phase did no integration work on a given mesh.
struct QuadCounter {
    mutable std::atomic<unsigned long long> cells{0};
    QuadCounter() = default;
    QuadCounter(const QuadCounter&) noexcept : cells(0) {}
    QuadCounter& operator=(const QuadCounter&) noexcept { return *this; }
};

struct InteriorFace {
    std::array<int, 3> verts; // sorted vertex ids
    int tet_plus = -1;        // lower tet index
    int tet_minus = -1;
    Vec3 normal = Vec3::Zero(); // unit, outward from tet_plus
    double area = 0.0;
    double diameter = 0.0; // longest edge of the face
};

/// Conforming tetrahedral mesh over a box. Tets carry the ordered vertex
/// tuple and tag that drive bisection refinement; `tets` itself is reordered
/// to positive orientation for all geometric queries.
class TetMesh {
public:
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 4>> tets;         // positively oriented
    std::vector<std::array<int, 4>> bisect_tuple; // refinement ordering (Maubach)
    std::vector<std::int8_t> tag;                 // bisection tag in {1,2,3}
    std::vector<int> parent_map;                  // ancestor tet in the previous level
    std::vector<std::array<int, 2>> vertex_parents; // edge endpoints; {v,v} for inherited vertices
    int n_parent_vertices = 0;                    // vertex count of the previous level
    int level = 0;
    Box box;

    // derived connectivity, filled by finalize()
    std::vector<InteriorFace> interior_faces;
    std::vector<std::array<int, 3>> boundary_faces;
    std::vector<char> vertex_on_boundary;

    QuadCounter quad_counter;

    int n_vertices() const { return static_cast<int>(vertices.size()); }
    int n_tets() const { return static_cast<int>(tets.size()); }

    double tet_volume(int t) const;
    double total_volume() const;
    double tet_diameter(int t) const;              // longest edge
    double tet_inradius(int t) const;
    double shape_ratio(int t) const { return tet_diameter(t) / tet_inradius(t); }
    double max_shape_ratio() const;

    /// P1 gradients of the four vertex basis functions on tet t (rows).
    Eigen::Matrix<double, 4, 3> p1_gradients(int t) const;

    /// Face-pairing audit: every face belongs to one or two tets, and
    /// single-tet faces lie on the domain boundary. Positive volumes too.
    bool conforming(std::string* why = nullptr) const;

    void finalize(); // builds faces / boundary flags

    void write_vtk(const std::string& path, const VecX* point_scalars = nullptr,
                   const char* point_name = "u", const VecX* cell_scalars = nullptr,
                   const char* cell_name = "indicator") const;
};

using MeshPtr = std::shared_ptr<const TetMesh>;

/// Kuhn triangulation of the box: n^3 cubes, 6 tets each.
MeshPtr build_box_mesh(const Box& box, int n_per_axis);

/// Every tet replaced by its 8 bisection grandchildren (red refinement via
/// edge midpoints for this tet family).
MeshPtr uniform_refine(const TetMesh& m);

/// Bisect all marked tets, then restore conformity by recursive neighbor
/// bisection. Shape regularity is inherited from the tagged-bisection family.
MeshPtr adapt_refine(const TetMesh& m, const std::vector<int>& marked);

class MeshHierarchy {
public:
    void push(MeshPtr m);
    int n_levels() const { return static_cast<int>(levels_.size()); }
    const TetMesh& level(int k) const { return *levels_.at(k); }
    MeshPtr level_ptr(int k) const { return levels_.at(k); }
    /// children of tet t on level k (indices into level k+1)
    const std::vector<int>& children(int k, int t) const { return child_map_.at(k).at(t); }

private:
    std::vector<MeshPtr> levels_;
    std::vector<std::vector<std::vector<int>>> child_map_;
};

} // namespace ksafem::mesh
