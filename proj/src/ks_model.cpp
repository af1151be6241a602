#include "ksafem/ks_model.hpp"

#include <cmath>
#include <numbers>

namespace ksafem::model {

namespace {
constexpr double kPi = std::numbers::pi;
std::atomic<unsigned long long> g_clamps{0};

double clamped_rho(double rho) {
    if (rho < 0.0) {
        ++g_clamps;
        return 0.0;
    }
    return rho;
}
} // namespace

void MolecularSystem::validate() const {
    if (!domain.valid()) fail("invalid-domain", "domain box is degenerate");
    if (n_pairs < 1) fail("invalid-argument", "n_pairs must be >= 1");
    if (occupancy <= 0) fail("invalid-argument", "occupancy must be positive");
    for (const auto& a : atoms) {
        if (a.charge <= 0) fail("invalid-argument", "nuclear charge must be positive");
        const bool inside = (a.position.array() > domain.lo.array()).all() &&
                            (a.position.array() < domain.hi.array()).all();
        if (!inside) fail("invalid-argument", "nucleus outside the domain");
    }
}

double v_ext(const MolecularSystem& sys, const Vec3& x) {
    double v = 0;
    for (const auto& a : sys.atoms) {
        double r = (x - a.position).norm();
        if (r < 1e-12) r = 1e-10;
        v -= a.charge / r;
    }
    return v;
}

fem::FEFunction density(const std::vector<fem::FEFunction>& orbitals, double occupancy) {
    if (orbitals.empty()) fail("invalid-argument", "empty orbital set");
    fem::FEFunction rho(orbitals.front().space, fem::Role::density);
    for (const auto& phi : orbitals) {
        if (phi.space != rho.space) fail("mismatched-spaces", "orbitals live on different spaces");
        rho.coeffs.array() += phi.coeffs.array().square();
    }
    rho.coeffs *= occupancy;
    return rho;
}

namespace {

// Perdew-Zunger correlation fit, unpolarized constants.
constexpr double pz_a = 0.0311, pz_b = -0.048, pz_c = 0.0020, pz_d = -0.0116;
constexpr double pz_gamma = -0.1423, pz_beta1 = 1.0529, pz_beta2 = 0.3334;

double eps_c(double rs) {
    if (rs < 1.0)
        return pz_a * std::log(rs) + pz_b + pz_c * rs * std::log(rs) + pz_d * rs;
    return pz_gamma / (1.0 + pz_beta1 * std::sqrt(rs) + pz_beta2 * rs);
}

double v_c(double rs) {
    if (rs < 1.0)
        return pz_a * std::log(rs) + (pz_b - pz_a / 3.0) + (2.0 / 3.0) * pz_c * rs * std::log(rs) +
               (2.0 * pz_d - pz_c) / 3.0 * rs;
    const double den = 1.0 + pz_beta1 * std::sqrt(rs) + pz_beta2 * rs;
    return eps_c(rs) * (1.0 + (7.0 / 6.0) * pz_beta1 * std::sqrt(rs) + (4.0 / 3.0) * pz_beta2 * rs) / den;
}

} // namespace

double xc_energy_density(const XcFunctional& xc, double rho) {
    rho = clamped_rho(rho);
    if (rho == 0.0 || xc.kind == XcKind::none) return 0.0;
    if (xc.kind == XcKind::x_alpha) {
        // energy density whose derivative reproduces -(3/2) alpha (3 rho / pi)^{1/3}
        return -(9.0 / 8.0) * xc.alpha * std::cbrt(3.0 / kPi) * std::pow(rho, 4.0 / 3.0);
    }
    const double p = xc.exchange_exponent;
    const double ex = -0.75 * std::cbrt(3.0 / kPi) * std::pow(rho, p);
    const double rs = std::cbrt(3.0 / (4.0 * kPi * rho));
    return (ex + eps_c(rs)) * rho;
}

double xc_potential(const XcFunctional& xc, double rho) {
    rho = clamped_rho(rho);
    if (rho == 0.0 || xc.kind == XcKind::none) return 0.0;
    if (xc.kind == XcKind::x_alpha) return -1.5 * xc.alpha * std::cbrt(3.0 * rho / kPi);
    const double p = xc.exchange_exponent;
    const double ex = -0.75 * std::cbrt(3.0 / kPi) * std::pow(rho, p);
    const double rs = std::cbrt(3.0 / (4.0 * kPi * rho));
    return (1.0 + p) * ex + v_c(rs);
}

unsigned long long negative_density_clamps() { return g_clamps.load(); }

fem::FEFunction xc_potential_field(const XcFunctional& xc, const fem::FEFunction& rho) {
    fem::FEFunction v(rho.space, fem::Role::generic);
    for (int i = 0; i < v.coeffs.size(); ++i) v.coeffs[i] = xc_potential(xc, rho.coeffs[i]);
    return v;
}

EnergyBreakdown total_energy(const MolecularSystem& sys, const std::vector<fem::FEFunction>& orbitals,
                             const fem::FEFunction& hartree_fn) {
    EnergyBreakdown e;
    if (orbitals.empty()) return e;
    const auto space = orbitals.front().space;
    if (hartree_fn.space != space) fail("mismatched-spaces", "hartree potential on a different space");

    for (const auto& phi : orbitals) {
        const double semi = fem::h1_seminorm(phi);
        e.kinetic += 0.5 * sys.occupancy * semi * semi;
    }
    const fem::FEFunction rho = density(orbitals, sys.occupancy);
    e.external = fem::integrate_of(rho, [&](double r, const Vec3& x) { return r * v_ext(sys, x); });

    // 1/2 int rho w, with both factors P1 on the same mesh
    const auto& m = space->mesh();
    double har = 0;
    const auto& rule = quad::default_rule();
    for (int t = 0; t < m.n_tets(); ++t) {
        const auto& v = m.tets[t];
        const double vol = std::abs(m.tet_volume(t));
        for (const auto& q : rule.points) {
            double rv = 0, wv = 0;
            for (int i = 0; i < 4; ++i) {
                rv += q.bary[i] * rho.coeffs[v[i]];
                wv += q.bary[i] * hartree_fn.coeffs[v[i]];
            }
            har += q.weight * vol * rv * wv;
        }
    }
    m.quad_counter.cells += static_cast<unsigned long long>(m.n_tets());
    e.hartree = 0.5 * har;

    e.xc = fem::integrate_of(rho, [&](double r, const Vec3&) { return xc_energy_density(sys.xc, r); });
    e.total = e.kinetic + e.external + e.hartree + e.xc;
    return e;
}

} // namespace ksafem::model
