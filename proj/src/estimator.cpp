#include "ksafem/estimator.hpp"

#include "ksafem/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ksafem::est {

Indicators compute_indicators(const fem::FESpace& V, const model::MolecularSystem& sys,
                              const VecX& lambdas, const std::vector<fem::FEFunction>& orbitals,
                              const fem::FEFunction& hartree_fn, const fem::FEFunction& vxc_fn,
                              WorkerPool* pool) {
    const auto& m = V.mesh();
    const int nt = m.n_tets();
    const int n_orb = static_cast<int>(orbitals.size());
    const auto& rule = quad::default_rule();

    Indicators ind;
    ind.eta_sq = VecX::Zero(nt);

    // element residual: h_T^2 int_T sum_i ((V_ext + w + v_xc - lambda_i) phi_i)^2
    const int nc = std::clamp(nt, 1, 64);
    auto element_chunk = [&](int c) {
        const int lo = static_cast<int>(std::int64_t(nt) * c / nc);
        const int hi = static_cast<int>(std::int64_t(nt) * (c + 1) / nc);
        for (int t = lo; t < hi; ++t) {
            const auto& v = m.tets[t];
            const double vol = std::abs(m.tet_volume(t));
            double acc = 0;
            for (const auto& q : rule.points) {
                Vec3 x = Vec3::Zero();
                double w = 0, vxc = 0;
                for (int k = 0; k < 4; ++k) {
                    x += q.bary[k] * m.vertices[v[k]];
                    w += q.bary[k] * hartree_fn.coeffs[v[k]];
                    vxc += q.bary[k] * vxc_fn.coeffs[v[k]];
                }
                const double pot = model::v_ext(sys, x) + w + vxc;
                double sum_sq = 0;
                for (int i = 0; i < n_orb; ++i) {
                    double phi = 0;
                    for (int k = 0; k < 4; ++k) phi += q.bary[k] * orbitals[i].coeffs[v[k]];
                    const double r = (pot - lambdas[i]) * phi;
                    sum_sq += r * r;
                }
                acc += q.weight * vol * sum_sq;
            }
            const double hT = m.tet_diameter(t);
            ind.eta_sq[t] += hT * hT * acc;
        }
    };
    if (pool && nt > 512) {
        pool->parallel_for(nc, element_chunk);
    } else {
        for (int c = 0; c < nc; ++c) element_chunk(c);
    }
    m.quad_counter.cells += static_cast<unsigned long long>(nt);

    // jump residual: h_e int_e |1/2 [grad phi_i] . n|^2 added to both owners
    std::vector<Eigen::Matrix<double, 4, 3>> grads(nt);
    for (int t = 0; t < nt; ++t) grads[t] = m.p1_gradients(t);
    auto grad_of = [&](int t, const fem::FEFunction& f) {
        Vec3 g = Vec3::Zero();
        const auto& v = m.tets[t];
        for (int k = 0; k < 4; ++k) g += f.coeffs[v[k]] * grads[t].row(k).transpose();
        return g;
    };
    for (const auto& face : m.interior_faces) {
        double jump_sq = 0;
        for (int i = 0; i < n_orb; ++i) {
            const double jn =
                0.5 * (grad_of(face.tet_plus, orbitals[i]) - grad_of(face.tet_minus, orbitals[i]))
                          .dot(face.normal);
            jump_sq += jn * jn;
        }
        const double contrib = face.diameter * jump_sq * face.area;
        ind.eta_sq[face.tet_plus] += contrib;
        ind.eta_sq[face.tet_minus] += contrib;
    }

    ind.total_sq = ind.eta_sq.sum();
    return ind;
}

std::vector<int> dorfler_mark(const Indicators& ind, double theta) {
    if (!(theta > 0.0) || theta >= 1.0) fail("invalid-argument", "theta must lie in (0,1)");
    if (ind.total_sq <= 0.0) return {};
    std::vector<int> order(ind.eta_sq.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (ind.eta_sq[a] != ind.eta_sq[b]) return ind.eta_sq[a] > ind.eta_sq[b];
        return a < b;
    });
    std::vector<int> marked;
    double acc = 0;
    for (int t : order) {
        marked.push_back(t);
        acc += ind.eta_sq[t];
        if (acc >= theta * ind.total_sq) break;
    }
    return marked;
}

} // namespace ksafem::est
