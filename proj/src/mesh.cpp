#include "ksafem/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <unordered_map>

namespace ksafem::mesh {

namespace {

inline std::uint64_t edge_key(int a, int b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
}

double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    return (b - a).cross(c - a).dot(d - a) / 6.0;
}

/// Working state for one refinement call. Tets are bisected in place;
/// children are appended and parents marked dead.
struct Refiner {
    explicit Refiner(const TetMesh& in) : in(in) {
        verts = in.vertices;
        vparents = in.vertex_parents;
        work.reserve(in.n_tets() * 2);
        for (int t = 0; t < in.n_tets(); ++t)
            work.push_back({in.bisect_tuple[t], in.tag[t], t, true});
    }

    const TetMesh& in;
    std::vector<Vec3> verts;
    std::vector<std::array<int, 2>> vparents;
    struct WorkTet {
        std::array<int, 4> tuple;
        std::int8_t tag;
        int root;
        bool alive;
    };
    std::vector<WorkTet> work;
    std::unordered_map<std::uint64_t, int> midpoint; // edges split during this call

    int edge_midpoint(int a, int b) {
        const auto key = edge_key(a, b);
        auto it = midpoint.find(key);
        if (it != midpoint.end()) return it->second;
        const int v = static_cast<int>(verts.size());
        verts.push_back(0.5 * (verts[a] + verts[b]));
        vparents.push_back({std::min(a, b), std::max(a, b)});
        midpoint.emplace(key, v);
        return v;
    }

    void bisect(int t) {
        const auto tup = work[t].tuple;
        const int d = work[t].tag;
        const int z = edge_midpoint(tup[0], tup[d]);
        const std::int8_t child_tag = (d > 1) ? std::int8_t(d - 1) : std::int8_t(3);

        std::array<int, 4> c1 = tup;
        c1[d] = z; // (x0, .., x_{d-1}, z, x_{d+1}, ..)
        std::array<int, 4> c2;
        int w = 0;
        for (int j = 1; j <= d; ++j) c2[w++] = tup[j];
        c2[w++] = z;
        for (int j = d + 1; j < 4; ++j) c2[w++] = tup[j];

        work[t].alive = false;
        work.push_back({c1, child_tag, work[t].root, true});
        work.push_back({c2, child_tag, work[t].root, true});
    }

    bool has_broken_edge(const WorkTet& wt) const {
        for (int i = 0; i < 4; ++i)
            for (int j = i + 1; j < 4; ++j)
                if (midpoint.count(edge_key(wt.tuple[i], wt.tuple[j]))) return true;
        return false;
    }

    /// Bisect until no live tet has an edge carrying a hanging midpoint.
    void close() {
        const int max_passes = 200;
        for (int pass = 0; pass < max_passes; ++pass) {
            bool changed = false;
            for (std::size_t t = 0; t < work.size(); ++t) {
                if (!work[t].alive) continue;
                if (has_broken_edge(work[t])) {
                    bisect(static_cast<int>(t));
                    changed = true;
                }
            }
            if (!changed) return;
        }
        fail("internal", "conforming closure did not terminate");
    }

    std::shared_ptr<TetMesh> build() const {
        auto out = std::make_shared<TetMesh>();
        out->vertices = verts;
        out->vertex_parents = vparents;
        out->n_parent_vertices = in.n_vertices();
        out->level = in.level + 1;
        out->box = in.box;
        for (const auto& wt : work) {
            if (!wt.alive) continue;
            std::array<int, 4> t = wt.tuple;
            if (signed_volume(verts[t[0]], verts[t[1]], verts[t[2]], verts[t[3]]) < 0)
                std::swap(t[2], t[3]);
            out->tets.push_back(t);
            out->bisect_tuple.push_back(wt.tuple);
            out->tag.push_back(wt.tag);
            out->parent_map.push_back(wt.root);
        }
        out->finalize();
        return out;
    }
};

} // namespace

double TetMesh::tet_volume(int t) const {
    const auto& v = tets[t];
    return signed_volume(vertices[v[0]], vertices[v[1]], vertices[v[2]], vertices[v[3]]);
}

double TetMesh::total_volume() const {
    double s = 0;
    for (int t = 0; t < n_tets(); ++t) s += tet_volume(t);
    return s;
}

double TetMesh::tet_diameter(int t) const {
    const auto& v = tets[t];
    double d = 0;
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j)
            d = std::max(d, (vertices[v[i]] - vertices[v[j]]).norm());
    return d;
}

double TetMesh::tet_inradius(int t) const {
    const auto& v = tets[t];
    const Vec3& a = vertices[v[0]];
    const Vec3& b = vertices[v[1]];
    const Vec3& c = vertices[v[2]];
    const Vec3& d = vertices[v[3]];
    const double vol = std::abs(signed_volume(a, b, c, d));
    auto tri_area = [](const Vec3& p, const Vec3& q, const Vec3& r) {
        return 0.5 * (q - p).cross(r - p).norm();
    };
    const double areas = tri_area(b, c, d) + tri_area(a, c, d) + tri_area(a, b, d) + tri_area(a, b, c);
    return 3.0 * vol / areas;
}

double TetMesh::max_shape_ratio() const {
    double r = 0;
    for (int t = 0; t < n_tets(); ++t) r = std::max(r, shape_ratio(t));
    return r;
}

Eigen::Matrix<double, 4, 3> TetMesh::p1_gradients(int t) const {
    const auto& v = tets[t];
    Mat3 J;
    for (int i = 0; i < 3; ++i) J.col(i) = vertices[v[i + 1]] - vertices[v[0]];
    const Mat3 Jinv = J.inverse();
    Eigen::Matrix<double, 4, 3> g;
    for (int i = 0; i < 3; ++i) g.row(i + 1) = Jinv.row(i);
    g.row(0) = -(g.row(1) + g.row(2) + g.row(3));
    return g;
}

void TetMesh::finalize() {
    interior_faces.clear();
    boundary_faces.clear();
    vertex_on_boundary.assign(vertices.size(), 0);

    std::map<std::array<int, 3>, std::vector<int>> faces;
    for (int t = 0; t < n_tets(); ++t) {
        const auto& v = tets[t];
        const int local[4][3] = {{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}};
        for (const auto& f : local) {
            std::array<int, 3> key{v[f[0]], v[f[1]], v[f[2]]};
            std::sort(key.begin(), key.end());
            faces[key].push_back(t);
        }
    }
    for (const auto& [key, owners] : faces) {
        if (owners.size() == 1) {
            boundary_faces.push_back(key);
            for (int vid : key) vertex_on_boundary[vid] = 1;
        } else if (owners.size() == 2) {
            InteriorFace f;
            f.verts = key;
            f.tet_plus = std::min(owners[0], owners[1]);
            f.tet_minus = std::max(owners[0], owners[1]);
            const Vec3& a = vertices[key[0]];
            const Vec3& b = vertices[key[1]];
            const Vec3& c = vertices[key[2]];
            Vec3 n = (b - a).cross(c - a);
            f.area = 0.5 * n.norm();
            n.normalize();
            f.diameter = std::max({(b - a).norm(), (c - a).norm(), (c - b).norm()});
            // orient away from tet_plus
            Vec3 centroid_plus = Vec3::Zero();
            for (int i = 0; i < 4; ++i) centroid_plus += vertices[tets[f.tet_plus][i]];
            centroid_plus /= 4.0;
            const Vec3 face_centroid = (a + b + c) / 3.0;
            if (n.dot(face_centroid - centroid_plus) < 0) n = -n;
            f.normal = n;
            interior_faces.push_back(f);
        } else {
            fail("internal", "face shared by more than two tets");
        }
    }
}

bool TetMesh::conforming(std::string* why) const {
    auto explain = [&](const std::string& s) {
        if (why) *why = s;
        return false;
    };
    for (int t = 0; t < n_tets(); ++t)
        if (tet_volume(t) <= 0) return explain("non-positive volume at tet " + std::to_string(t));

    std::map<std::array<int, 3>, int> count;
    for (int t = 0; t < n_tets(); ++t) {
        const auto& v = tets[t];
        const int local[4][3] = {{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}};
        for (const auto& f : local) {
            std::array<int, 3> key{v[f[0]], v[f[1]], v[f[2]]};
            std::sort(key.begin(), key.end());
            ++count[key];
        }
    }
    const double eps = 1e-9 * box.extent().maxCoeff();
    for (const auto& [key, c] : count) {
        if (c > 2) return explain("face with more than two owners");
        if (c == 1) {
            // must lie on one of the six box planes
            bool on_plane = false;
            for (int axis = 0; axis < 3 && !on_plane; ++axis)
                for (double side : {box.lo[axis], box.hi[axis]}) {
                    bool all = true;
                    for (int vid : key) all = all && std::abs(vertices[vid][axis] - side) <= eps;
                    if (all) {
                        on_plane = true;
                        break;
                    }
                }
            if (!on_plane) return explain("interior face with a single owner (hanging refinement)");
        }
    }
    return true;
}

void TetMesh::write_vtk(const std::string& path, const VecX* point_scalars, const char* point_name,
                        const VecX* cell_scalars, const char* cell_name) const {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) fail("io", "cannot open " + path);
    std::fprintf(f, "# vtk DataFile Version 3.0\nmesh level %d\nASCII\nDATASET UNSTRUCTURED_GRID\n", level);
    std::fprintf(f, "POINTS %d double\n", n_vertices());
    for (const auto& v : vertices) std::fprintf(f, "%.10g %.10g %.10g\n", v[0], v[1], v[2]);
    std::fprintf(f, "CELLS %d %d\n", n_tets(), 5 * n_tets());
    for (const auto& t : tets) std::fprintf(f, "4 %d %d %d %d\n", t[0], t[1], t[2], t[3]);
    std::fprintf(f, "CELL_TYPES %d\n", n_tets());
    for (int t = 0; t < n_tets(); ++t) std::fprintf(f, "10\n");
    if (point_scalars && point_scalars->size() == n_vertices()) {
        std::fprintf(f, "POINT_DATA %d\nSCALARS %s double 1\nLOOKUP_TABLE default\n", n_vertices(), point_name);
        for (int i = 0; i < n_vertices(); ++i) std::fprintf(f, "%.10g\n", (*point_scalars)[i]);
    }
    if (cell_scalars && cell_scalars->size() == n_tets()) {
        std::fprintf(f, "CELL_DATA %d\nSCALARS %s double 1\nLOOKUP_TABLE default\n", n_tets(), cell_name);
        for (int t = 0; t < n_tets(); ++t) std::fprintf(f, "%.10g\n", (*cell_scalars)[t]);
    }
    std::fclose(f);
}

MeshPtr build_box_mesh(const Box& box, int n_per_axis) {
    if (!box.valid()) fail("invalid-domain", "box is degenerate");
    if (n_per_axis < 1) fail("invalid-domain", "n_per_axis must be >= 1");

    auto m = std::make_shared<TetMesh>();
    m->box = box;
    m->level = 0;

    const int n = n_per_axis;
    const int nv = n + 1;
    auto vid = [&](int i, int j, int k) { return (i * nv + j) * nv + k; };
    for (int i = 0; i < nv; ++i)
        for (int j = 0; j < nv; ++j)
            for (int k = 0; k < nv; ++k) {
                Vec3 p;
                p[0] = box.lo[0] + box.extent()[0] * double(i) / n;
                p[1] = box.lo[1] + box.extent()[1] * double(j) / n;
                p[2] = box.lo[2] + box.extent()[2] * double(k) / n;
                m->vertices.push_back(p);
            }

    // Kuhn split: each cube into the 6 path tets from its low corner to its
    // high corner; identical per cube, which keeps neighboring cubes matching.
    const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k)
                for (const auto& perm : perms) {
                    std::array<int, 3> c{i, j, k};
                    std::array<int, 4> tet;
                    tet[0] = vid(c[0], c[1], c[2]);
                    for (int step = 0; step < 3; ++step) {
                        ++c[perm[step]];
                        tet[step + 1] = vid(c[0], c[1], c[2]);
                    }
                    m->bisect_tuple.push_back(tet);
                    if (signed_volume(m->vertices[tet[0]], m->vertices[tet[1]], m->vertices[tet[2]],
                                      m->vertices[tet[3]]) < 0)
                        std::swap(tet[2], tet[3]);
                    m->tets.push_back(tet);
                    m->tag.push_back(3);
                }

    m->parent_map.resize(m->tets.size());
    for (std::size_t t = 0; t < m->tets.size(); ++t) m->parent_map[t] = static_cast<int>(t);
    m->vertex_parents.resize(m->vertices.size());
    for (int v = 0; v < m->n_vertices(); ++v) m->vertex_parents[v] = {v, v};
    m->n_parent_vertices = m->n_vertices();
    m->finalize();
    return m;
}

MeshPtr uniform_refine(const TetMesh& in) {
    Refiner r(in);
    // Three bisection generations split all six edges of every tet: the
    // result is the 8-child midpoint subdivision.
    for (int round = 0; round < 3; ++round) {
        const std::size_t count = r.work.size();
        for (std::size_t t = 0; t < count; ++t)
            if (r.work[t].alive) r.bisect(static_cast<int>(t));
    }
    return r.build();
}

MeshPtr adapt_refine(const TetMesh& in, const std::vector<int>& marked) {
    for (int t : marked)
        if (t < 0 || t >= in.n_tets()) fail("invalid-argument", "marked tet out of range");

    if (marked.empty()) {
        // identity copy
        auto out = std::make_shared<TetMesh>();
        *out = in;
        out->level = in.level + 1;
        out->n_parent_vertices = in.n_vertices();
        for (int v = 0; v < out->n_vertices(); ++v) out->vertex_parents[v] = {v, v};
        for (int t = 0; t < out->n_tets(); ++t) out->parent_map[t] = t;
        return out;
    }

    std::vector<int> sorted(marked);
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

    Refiner r(in);
    for (int t : sorted) r.bisect(t);
    r.close();
    return r.build();
}

void MeshHierarchy::push(MeshPtr m) {
    if (!levels_.empty()) {
        const auto& prev = *levels_.back();
        std::vector<std::vector<int>> cm(prev.n_tets());
        for (int t = 0; t < m->n_tets(); ++t) cm[m->parent_map[t]].push_back(t);
        child_map_.push_back(std::move(cm));
    }
    levels_.push_back(std::move(m));
}

} // namespace ksafem::mesh
