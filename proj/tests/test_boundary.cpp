#include "doctest.h"

#include "exch/boundary.hpp"
#include "exch/numerics.hpp"

#include <cmath>
#include <functional>
#include <random>

using namespace exch;

namespace {

// Direct quadrature of int_{lo}^{hi} g(y) N(y; gamma, delta^2) dy on a wide finite window.
double normal_quad(const JumpSpec& j, double lo, double hi, const std::function<double(double)>& g) {
    lo = std::max(lo, j.gamma - 14.0 * j.delta);
    hi = std::min(hi, j.gamma + 14.0 * j.delta);
    if (hi <= lo) return 0.0;
    const Rule& r = gauss_legendre(40);
    const int panels = 200;
    const double h = (hi - lo) / panels;
    double acc = 0.0;
    for (int p = 0; p < panels; ++p) {
        for (int k = 0; k < 40; ++k) {
            const double y = lo + (p + 0.5 * (r.nodes[k] + 1.0)) * h;
            acc += 0.5 * h * r.weights[k] * g(y) * normal_pdf((y - j.gamma) / j.delta) / j.delta;
        }
    }
    return acc;
}

}  // namespace

TEST_CASE("boundary_f without jumps is linear") {
    CHECK(boundary_f(2.0, 0.04, 0.06, {}, {}) == doctest::Approx(0.06 - 2.0 * 0.04));
    const auto r = boundary_limit(0.04, 0.06, {}, {});
    CHECK(r.b_limit == doctest::Approx(1.5).epsilon(1e-12));
    CHECK_FALSE(r.continuous_at_maturity);
    const auto s = boundary_limit(0.06, 0.04, {}, {});
    REQUIRE(s.x_star.has_value());
    CHECK(*s.x_star == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(s.b_limit == 1.0);
    CHECK(s.continuous_at_maturity);
}

TEST_CASE("boundary_f near zero tends to q2 plus intensities") {
    const JumpSpec j1{0.7, 0.1, 0.3}, j2{0.4, -0.2, 0.25};
    CHECK(boundary_f(1e-12, 0.03, 0.05, j1, j2) == doctest::Approx(0.05 + 0.7 + 0.4).epsilon(1e-9));
}

TEST_CASE("partial mark integrals against quadrature") {
    const JumpSpec j{1.0, -0.15, 0.35};
    for (double a : {-0.7, -0.1, 0.0, 0.2, 0.9}) {
        CHECK(jump_lower_mass(j, a) == doctest::Approx(normal_quad(j, -1e9, a, [](double) { return 1.0; })));
        CHECK(jump_lower_exp(j, a) == doctest::Approx(normal_quad(j, -1e9, a, [](double y) { return std::exp(y); })));
        CHECK(jump_upper_mass(j, a) == doctest::Approx(normal_quad(j, a, 1e9, [](double) { return 1.0; })));
        CHECK(jump_upper_nexp(j, a) == doctest::Approx(normal_quad(j, a, 1e9, [](double y) { return std::exp(-y); })));
    }
}

TEST_CASE("f(1) equals the jump-integral expression") {
    const JumpSpec j1{0.9, 0.05, 0.2}, j2{0.6, 0.1, 0.3};
    const double q1 = 0.04, q2 = 0.03;
    const double i1 = normal_quad(j1, -1e9, 0.0, [](double y) { return 1.0 - std::exp(y); });
    const double i2 = normal_quad(j2, 0.0, 1e9, [](double y) { return 1.0 - std::exp(-y); });
    CHECK(boundary_f(1.0, q1, q2, j1, j2) == doctest::Approx(q2 - q1 + 0.9 * i1 + 0.6 * i2).epsilon(1e-10));
}

TEST_CASE("boundary_f is strictly decreasing") {
    const JumpSpec j1{1.0, 0.0, 0.3}, j2{1.0, 0.0, 0.3};
    double prev = boundary_f(1e-3, 0.04, 0.06, j1, j2);
    for (double x = 2e-3; x < 50.0; x *= 1.05) {
        const double cur = boundary_f(x, 0.04, 0.06, j1, j2);
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("boundary limit with jumps matches a dense sign scan") {
    const JumpSpec j1{1.0, 0.0, 0.3}, j2{1.0, 0.0, 0.3};
    const auto r = boundary_limit(0.04, 0.06, j1, j2);
    REQUIRE(r.x_star.has_value());
    // Log-spaced scan for the sign change, then a linear scan inside the bracket.
    const auto f = [&](double x) { return boundary_f(x, 0.04, 0.06, j1, j2); };
    double lo = 1e-3, hi = 1e3;
    const int n = 1000;
    for (int k = 1; k <= n; ++k) {
        const double x = 1e-3 * std::pow(1e6, double(k) / n);
        if (f(x) <= 0.0) {
            hi = x;
            lo = 1e-3 * std::pow(1e6, double(k - 1) / n);
            break;
        }
    }
    for (int pass = 0; pass < 3; ++pass) {
        const double step = (hi - lo) / n;
        for (int k = 1; k <= n; ++k) {
            if (f(lo + k * step) <= 0.0) {
                hi = lo + k * step;
                lo = hi - step;
                break;
            }
        }
    }
    CHECK(std::abs(*r.x_star - 0.5 * (lo + hi)) < 1e-8);
}

TEST_CASE("q1 = 0: never optimal, and degenerate input") {
    const auto r = boundary_limit(0.0, 0.05, JumpSpec{0.5, 0.1, 0.2}, {});
    CHECK(r.never_optimal);
    CHECK_FALSE(r.x_star.has_value());
    CHECK_THROWS_AS(boundary_limit(0.0, 0.0, {}, {}), DomainError);
    CHECK_THROWS_AS(continuity_condition(0.0, 0.05, {}, {}), DomainError);
}

TEST_CASE("continuity condition agrees with the unit limit") {
    CHECK(continuity_condition(0.05, 0.05, {}, {}));
    CHECK_FALSE(continuity_condition(0.04, 0.05, {}, {}));
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> uq(0.001, 0.1), ul(0.0, 2.0), ug(-0.3, 0.3), ud(0.01, 0.5);
    for (int k = 0; k < 200; ++k) {
        const double q1 = uq(rng), q2 = uq(rng);
        const JumpSpec j1{ul(rng), ug(rng), ud(rng)}, j2{ul(rng), ug(rng), ud(rng)};
        const auto r = boundary_limit(q1, q2, j1, j2);
        CHECK(continuity_condition(q1, q2, j1, j2) == (r.b_limit == 1.0));
    }
}

TEST_CASE("boundary limit monotone in q1 and blows up as q1 -> 0") {
    const JumpSpec j1{0.5, 0.0, 0.2}, j2{0.5, 0.0, 0.2};
    double prev = boundary_limit(0.005, 0.05, j1, j2).b_limit;
    for (double q1 = 0.01; q1 < 0.2; q1 += 0.01) {
        const double cur = boundary_limit(q1, 0.05, j1, j2).b_limit;
        CHECK(cur <= prev);
        prev = cur;
    }
    CHECK(boundary_limit(1e-4, 0.05, {}, {}).b_limit > 100.0 * boundary_limit(0.1, 0.05, {}, {}).b_limit);
}
