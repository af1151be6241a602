#include "ksafem/quadrature.hpp"

#include <cmath>

namespace ksafem::quad {

namespace {

TetRule make_keast11() {
    // Keast's degree-4 rule: centroid + two symmetric orbits, 11 points.
    // Weights are normalized so they sum to 1 over the element.
    TetRule rule;
    rule.degree = 4;

    const double w0 = -444.0 / 5625.0;          // centroid, negative weight
    const double w1 = 6.0 * 343.0 / 45000.0;    // 4-point orbit
    const double w2 = 6.0 * 56.0 / 2250.0;      // 6-point orbit
    const double a = 1.0 / 14.0;
    const double b1 = 0.25 * (1.0 + std::sqrt(5.0 / 14.0));
    const double b2 = 0.25 * (1.0 - std::sqrt(5.0 / 14.0));

    rule.points.push_back({{0.25, 0.25, 0.25, 0.25}, w0});
    for (int k = 0; k < 4; ++k) {
        std::array<double, 4> p{a, a, a, a};
        p[k] = 1.0 - 3.0 * a;
        rule.points.push_back({p, w1});
    }
    const int pairs[6][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
    for (const auto& pr : pairs) {
        std::array<double, 4> p{b2, b2, b2, b2};
        p[pr[0]] = b1;
        p[pr[1]] = b1;
        rule.points.push_back({p, w2});
    }
    return rule;
}

double factorial(int n) {
    double f = 1.0;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}

} // namespace

const TetRule& default_rule() {
    static const TetRule rule = make_keast11();
    return rule;
}

TetRule grundmann_moller(int s) {
    // Grundmann & Moller (1978), simplex rule of index s in dimension 3.
    const int n = 3;
    const int d = 2 * s + 1;
    TetRule rule;
    rule.degree = d;

    for (int i = 0; i <= s; ++i) {
        const double coeff = ((i % 2) ? -1.0 : 1.0) * std::pow(2.0, -2.0 * s) *
                             std::pow(double(d + n - 2 * i), double(d)) /
                             (factorial(i) * factorial(d + n - i));
        // enumerate beta in N_0^4 with |beta| = s - i
        const int m = s - i;
        for (int b0 = 0; b0 <= m; ++b0)
            for (int b1 = 0; b1 <= m - b0; ++b1)
                for (int b2 = 0; b2 <= m - b0 - b1; ++b2) {
                    const int b3 = m - b0 - b1 - b2;
                    const double denom = d + n - 2 * i;
                    std::array<double, 4> p{(2.0 * b0 + 1.0) / denom, (2.0 * b1 + 1.0) / denom,
                                            (2.0 * b2 + 1.0) / denom, (2.0 * b3 + 1.0) / denom};
                    rule.points.push_back({p, coeff});
                }
    }
    // The raw weights integrate over the unit simplex (volume 1/6); rescale to sum to 1.
    double wsum = 0;
    for (const auto& p : rule.points) wsum += p.weight;
    for (auto& p : rule.points) p.weight /= wsum;
    return rule;
}

} // namespace ksafem::quad
