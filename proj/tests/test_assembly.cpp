#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ksafem/assembly.hpp"
#include "ksafem/quadrature.hpp"
#include "ksafem/solver.hpp"

#include <cmath>
#include <random>

using namespace ksafem;
using namespace ksafem::fem;

namespace {

mesh::Box cube(double lo, double hi) {
    mesh::Box b;
    b.lo = Vec3::Constant(lo);
    b.hi = Vec3::Constant(hi);
    return b;
}

SpacePtr box_space(double lo, double hi, int n) {
    return std::make_shared<FESpace>(mesh::build_box_mesh(cube(lo, hi), n));
}

/// exact integral of x^a y^b z^c over the reference tetrahedron
double ref_monomial(int a, int b, int c) {
    auto fact = [](int n) {
        double f = 1;
        for (int i = 2; i <= n; ++i) f *= i;
        return f;
    };
    return fact(a) * fact(b) * fact(c) / fact(a + b + c + 3);
}

double rule_monomial(const quad::TetRule& rule, int a, int b, int c) {
    // reference tet (0,0,0),(1,0,0),(0,1,0),(0,0,1): x,y,z are bary[1..3]
    double s = 0;
    for (const auto& q : rule.points)
        s += q.weight * std::pow(q.bary[1], a) * std::pow(q.bary[2], b) * std::pow(q.bary[3], c);
    return s / 6.0; // weights sum to 1 over the element volume 1/6
}

} // namespace

TEST_CASE("default rule is exact to degree 4") {
    const auto& rule = quad::default_rule();
    for (int a = 0; a <= 4; ++a)
        for (int b = 0; a + b <= 4; ++b)
            for (int c = 0; a + b + c <= 4; ++c)
                CHECK(rule_monomial(rule, a, b, c) == doctest::Approx(ref_monomial(a, b, c)).epsilon(1e-13));
}

TEST_CASE("grundmann-moller s=3 is exact to degree 7") {
    const auto rule = quad::grundmann_moller(3);
    for (int a = 0; a <= 7; ++a)
        for (int b = 0; a + b <= 7; ++b)
            for (int c = 0; a + b + c <= 7; ++c)
                CHECK(rule_monomial(rule, a, b, c) ==
                      doctest::Approx(ref_monomial(a, b, c)).epsilon(1e-12));
}

TEST_CASE("stiffness annihilates constants and matches the reference element") {
    auto V = box_space(-1, 1, 2);
    const SpMat S = assemble_stiffness(*V);
    const VecX ones = VecX::Ones(V->n_dofs());
    CHECK((S * ones).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK(symmetry_defect(S) < 1e-13);

    // single reference tet, assembled by hand from constant P1 gradients
    auto m = std::make_shared<mesh::TetMesh>();
    m->vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
    m->tets = {{0, 1, 2, 3}};
    m->bisect_tuple = m->tets;
    m->tag = {3};
    m->parent_map = {0};
    m->vertex_parents = {{0, 0}, {1, 1}, {2, 2}, {3, 3}};
    m->n_parent_vertices = 4;
    m->box = cube(0, 1);
    m->finalize();
    auto Vref = std::make_shared<FESpace>(m);
    const SpMat Sref = assemble_mass_with_rule(*Vref, [](const Vec3&) { return 0.0; },
                                               quad::default_rule()) +
                       assemble_stiffness(*Vref);
    MatX expect(4, 4);
    expect << 3, -1, -1, -1, -1, 1, 0, 0, -1, 0, 1, 0, -1, 0, 0, 1;
    expect /= 6.0;
    CHECK((MatX(Sref) - expect).lpNorm<Eigen::Infinity>() < 1e-14);
}

TEST_CASE("galerkin restriction of nested stiffness matches coarse assembly") {
    auto coarse_mesh = mesh::build_box_mesh(cube(0, 1), 2);
    auto fine_mesh = mesh::uniform_refine(*coarse_mesh);
    auto Vh = std::make_shared<FESpace>(coarse_mesh);
    auto Vf = std::make_shared<FESpace>(fine_mesh);
    const SpMat P = prolongation_matrix(*fine_mesh);
    const SpMat SH = assemble_stiffness(*Vh);
    const SpMat Sf = assemble_stiffness(*Vf);
    const SpMat G = SpMat(P.transpose()) * Sf * P;

    std::mt19937 gen(3);
    std::uniform_real_distribution<double> dist(-1, 1);
    for (int rep = 0; rep < 5; ++rep) {
        VecX c(Vh->n_dofs());
        for (int i = 0; i < c.size(); ++i) c[i] = dist(gen);
        CHECK(c.dot(G * c) == doctest::Approx(c.dot(SH * c)).epsilon(1e-10));
    }
}

TEST_CASE("mass matrix: partition of unity and trivial weights") {
    auto V = box_space(-1, 1, 2);
    const SpMat M = assemble_mass(*V);
    double total = 0;
    for (int k = 0; k < M.outerSize(); ++k)
        for (SpMat::InnerIterator it(M, k); it; ++it) total += it.value();
    CHECK(total == doctest::Approx(8.0).epsilon(1e-12));

    const SpMat Z = assemble_mass(*V, [](const Vec3&) { return 0.0; });
    double zmax = 0;
    for (int k = 0; k < Z.outerSize(); ++k)
        for (SpMat::InnerIterator it(Z, k); it; ++it) zmax = std::max(zmax, std::abs(it.value()));
    CHECK(zmax == 0.0);

    FEFunction one(V);
    one.coeffs.setOnes();
    const SpMat Mw = assemble_mass(*V, one);
    CHECK(symmetry_defect(Mw) < 1e-13);
    CHECK((MatX(Mw) - MatX(M)).lpNorm<Eigen::Infinity>() < 1e-14);
}

TEST_CASE("coulomb-weighted mass matches a refined-quadrature oracle") {
    // charge at the origin, mesh well separated from it
    auto w = [](const Vec3& x) { return -1.0 / x.norm(); };
    auto mesh0 = mesh::build_box_mesh(cube(3.0, 4.0), 3);
    auto V0 = std::make_shared<FESpace>(mesh0);
    const SpMat M0 = assemble_mass(*V0, ScalarField(w));

    // oracle: same integrals assembled on a twice-refined mesh and restricted
    auto mesh2 = mesh::uniform_refine(*mesh::uniform_refine(*mesh0));
    auto V2 = std::make_shared<FESpace>(mesh2);
    SpMat P = prolongation_matrix(*mesh::uniform_refine(*mesh0));
    P = prolongation_matrix(*mesh2) * P;
    const SpMat Moracle = SpMat(P.transpose()) * assemble_mass(*V2, ScalarField(w)) * P;

    double max_rel = 0;
    for (int k = 0; k < M0.outerSize(); ++k)
        for (SpMat::InnerIterator it(M0, k); it; ++it) {
            const double ref = Moracle.coeff(it.row(), it.col());
            max_rel = std::max(max_rel, std::abs(it.value() - ref) / std::abs(ref));
        }
    CHECK(max_rel < 1e-6);
}

TEST_CASE("quadrature consistency: higher order changes smooth entries below 1e-8") {
    auto V = box_space(0, 1, 3);
    auto w = [](const Vec3& x) { return std::exp((x[0] + x[1] + x[2]) / 32.0); };
    const SpMat M4 = assemble_mass_with_rule(*V, w, quad::default_rule());
    const SpMat M8 = assemble_mass_with_rule(*V, w, quad::grundmann_moller(4));
    double max_rel = 0;
    for (int k = 0; k < M4.outerSize(); ++k)
        for (SpMat::InnerIterator it(M4, k); it; ++it) {
            const double ref = M8.coeff(it.row(), it.col());
            if (std::abs(ref) > 1e-14)
                max_rel = std::max(max_rel, std::abs(it.value() - ref) / std::abs(ref));
        }
    CHECK(max_rel < 1e-8);
}

TEST_CASE("load vectors") {
    auto V = box_space(-1, 1, 2);
    const VecX b1 = assemble_load(*V, [](const Vec3&) { return 1.0; });
    CHECK(b1.sum() == doctest::Approx(8.0).epsilon(1e-12));

    FEFunction hat(V);
    const int k = V->interior_dofs().front();
    hat.coeffs[k] = 1.0;
    const VecX bh = assemble_load(*V, hat);
    const SpMat M = assemble_mass(*V);
    const VecX col = M.col(k);
    CHECK((bh - col).lpNorm<Eigen::Infinity>() < 1e-14);
}

TEST_CASE("solve_spd recovers manufactured solutions") {
    auto V = box_space(0, 1, 3);
    const SpMat S = assemble_stiffness(*V);

    std::mt19937 gen(11);
    std::uniform_real_distribution<double> dist(-1, 1);
    VecX xstar(V->n_dofs());
    for (int i = 0; i < xstar.size(); ++i) xstar[i] = dist(gen);
    const VecX b = S * xstar;
    VecX bc = VecX::Zero(V->n_dofs());
    for (int d : V->boundary_dofs()) bc[d] = xstar[d];
    SolveStats st;
    const VecX x = solve_spd(S, b, V, bc, 1e-11, &st);
    CHECK(st.converged);
    CHECK((x - xstar).lpNorm<Eigen::Infinity>() < 1e-8);

    // -lap u = 0 with u = x1 on the boundary: P1 reproduces linears exactly
    VecX bc_lin = VecX::Zero(V->n_dofs());
    for (int d : V->boundary_dofs()) bc_lin[d] = V->node(d)[0];
    const VecX u = solve_spd(S, VecX::Zero(V->n_dofs()), V, bc_lin, 1e-12);
    for (int i = 0; i < V->n_dofs(); ++i) CHECK(u[i] == doctest::Approx(V->node(i)[0]).epsilon(1e-9));
}

TEST_CASE("solver residual contract and nonconvergence error") {
    auto V = box_space(0, 1, 3);
    const SpMat S = assemble_stiffness(*V);
    const VecX b = assemble_load(*V, [](const Vec3&) { return 1.0; });
    EllipticSolver solver(S, V);
    SolverOptions opt;
    opt.tol = 1e-10;
    SolveStats st;
    solver.solve_zero_bc(b, opt, &st);
    CHECK(st.converged);
    CHECK(st.relative_residual <= 1e-10);

    opt.max_iterations = 1;
    solver.solve_zero_bc(b, opt, &st);
    CHECK_FALSE(st.converged);

    // an unreachable tolerance must surface as an error carrying the residual
    auto V6 = box_space(0, 1, 6);
    const SpMat S6 = assemble_stiffness(*V6);
    const VecX b6 = assemble_load(*V6, [](const Vec3&) { return 1.0; });
    CHECK_THROWS_WITH_AS(solve_spd(S6, b6, V6, VecX(), 1e-30), doctest::Contains("nonconvergence"),
                         Error);
}

TEST_CASE("prolongation is pointwise exact") {
    SpaceHierarchy h;
    h.push(mesh::build_box_mesh(cube(-1, 1), 2));
    h.push(mesh::uniform_refine(h.meshes().level(0)));
    h.push(mesh::adapt_refine(h.meshes().level(1), {3, 10, 40}));

    FEFunction c(h.space(0));
    c.coeffs.setOnes();
    auto f = h.prolong(c, 2);
    CHECK((f.coeffs.array() - 1.0).abs().maxCoeff() < 1e-14);

    std::mt19937 gen(5);
    std::uniform_real_distribution<double> dist(-1, 1);
    FEFunction r(h.space(0));
    for (int i = 0; i < r.coeffs.size(); ++i) r.coeffs[i] = dist(gen);
    auto rf = h.prolong(r, 2);
    std::uniform_real_distribution<double> pt(-0.999, 0.999);
    for (int k = 0; k < 100; ++k) {
        const Vec3 x(pt(gen), pt(gen), pt(gen));
        CHECK(std::abs(r.eval(x) - rf.eval(x)) < 1e-12);
    }
    // norm preservation under nesting
    CHECK(l2_norm(rf) == doctest::Approx(l2_norm(r)).epsilon(1e-10));
    CHECK(h1_norm(rf) == doctest::Approx(h1_norm(r)).epsilon(1e-10));
}

TEST_CASE("norms") {
    auto V = box_space(0, 2, 2); // |Omega| = 8
    FEFunction z(V);
    CHECK(l2_norm(z) == 0.0);
    CHECK(h1_norm(z) == 0.0);

    FEFunction c(V);
    c.coeffs.setConstant(3.0);
    CHECK(l2_norm(c) == doctest::Approx(3.0 * std::sqrt(8.0)).epsilon(1e-12));
    CHECK(l1_norm(c) == doctest::Approx(3.0 * 8.0).epsilon(1e-12));

    std::mt19937 gen(9);
    std::uniform_real_distribution<double> dist(-1, 1);
    FEFunction r(V);
    for (int i = 0; i < r.coeffs.size(); ++i) r.coeffs[i] = dist(gen);
    const double h1 = h1_norm(r), l2 = l2_norm(r), semi = h1_seminorm(r);
    CHECK(h1 * h1 == doctest::Approx(l2 * l2 + semi * semi).epsilon(1e-12));
}

TEST_CASE("matrix market export") {
    auto V = box_space(0, 1, 1);
    const SpMat S = assemble_stiffness(*V);
    write_matrix_market(S, "smoke.mtx");
    std::FILE* f = std::fopen("smoke.mtx", "r");
    REQUIRE(f);
    char line[256];
    REQUIRE(std::fgets(line, sizeof line, f));
    CHECK(std::string(line).find("MatrixMarket") != std::string::npos);
    std::fclose(f);
    std::remove("smoke.mtx");
}
