#include "doctest.h"

#include "exch/american.hpp"
#include "exch/boundary.hpp"
#include "exch/european.hpp"
#include "oracles/cir.hpp"

#include <cmath>

using namespace exch;

namespace {

ModelParams diffusion_params() {
    ModelParams p;
    p.q1 = 0.06;
    p.q2 = 0.03;
    p.T = 0.5;
    return p;
}

BoundaryCurve flat_boundary(const ModelParams& p, double B, Eigen::VectorXd t, Eigen::VectorXd v) {
    BoundaryCurve b;
    b.t = std::move(t);
    b.v = std::move(v);
    b.q1 = p.q1;
    b.q2 = p.q2;
    b.b_left = B;
    b.B = Eigen::MatrixXd::Constant(b.t.size(), b.v.size(), B);
    b.B.row(b.t.size() - 1).setOnes();
    return b;
}

Eigen::VectorXd linspace(double a, double b, int n) { return Eigen::VectorXd::LinSpaced(n, a, b); }

// Surface holding the discounted payoff max(0, e^{-q1 t} s - e^{-q2 t}) on every slice.
PriceSurface payoff_surface(const ModelParams& p, const Eigen::VectorXd& t, const Eigen::VectorXd& v, int ns) {
    PriceSurface s;
    s.t = t;
    s.v = v;
    s.s = Eigen::VectorXd(ns);
    for (int k = 0; k < ns; ++k) s.s[k] = 0.2 * std::pow(25.0, static_cast<double>(k) / (ns - 1));
    s.values.assign(static_cast<std::size_t>(t.size() * ns * v.size()), 0.0);
    for (int i = 0; i < t.size(); ++i)
        for (int k = 0; k < ns; ++k)
            for (int j = 0; j < v.size(); ++j) s.at(i, k, j) = std::max(0.0, discounted_intrinsic(t[i], s.s[k], p));
    return s;
}

struct Solved {
    ModelParams p;
    MarketState st;
    AmericanSolution sol;
};

const Solved& solved_diffusion() {
    static const Solved s = [] {
        Solved out;
        out.p = diffusion_params();
        out.st.v = 0.04;
        AmericanOptions o;
        o.grids.time_nodes = 10;
        o.grids.var_nodes = 4;
        o.grids.s_nodes = 40;
        out.sol = solve_american(out.st, out.p, {}, {}, o);
        return out;
    }();
    return s;
}

const Solved& solved_jumps() {
    static const Solved s = [] {
        Solved out;
        out.p = diffusion_params();
        out.p.q1 = 0.04;
        out.p.q2 = 0.05;
        out.st.v = 0.04;
        AmericanOptions o;
        o.grids.time_nodes = 8;
        o.grids.var_nodes = 3;
        o.grids.s_nodes = 40;
        out.sol = solve_american(out.st, out.p, {0.5, -0.05, 0.1}, {0.3, 0.02, 0.08}, o);
        return out;
    }();
    return s;
}

}  // namespace

TEST_CASE("resolved tail probabilities: masses, limits and reality") {
    const ModelParams p = diffusion_params();
    const double tau = 0.4, z = 1.0, v = 0.04;
    for (double vu : {0.02, 0.04, 0.07}) {
        const ResolvedTail r = p1a_p2a(tau, z, v, vu, 1e-3, p);
        // The untilted mass is the variance transition density.
        CHECK(r.mass2 == doctest::Approx(oracle::cir_density(p, tau, v, vu)).epsilon(1e-8));
        CHECK(r.P2 == doctest::Approx(r.mass2).epsilon(1e-6));
        CHECK(r.P1 == doctest::Approx(r.mass1).epsilon(1e-6));
        CHECK(r.imag_residue < 1e-10);
        const ResolvedTail far = p1a_p2a(tau, z, v, vu, 1e3, p);
        CHECK(std::abs(far.P2) < 1e-8 * r.mass2);
        CHECK(std::abs(far.P1) < 1e-8 * r.mass1);
    }
}

TEST_CASE("resolved tail probabilities integrate over v_u to the unconditional ones") {
    const ModelParams p = diffusion_params();
    const double tau = 0.4, z = 1.0, v = 0.04, K = 1.03;
    // Gauss-Legendre in sqrt(v_u) over a range holding all but a negligible mass.
    const Rule& gl = gauss_legendre(48);
    double P1 = 0.0, P2 = 0.0, mass = 0.0;
    const double r_lo = 1e-3, r_hi = std::sqrt(0.6);
    const int panels = 6;
    const double h = (r_hi - r_lo) / panels;
    for (int q = 0; q < panels; ++q) {
        for (int k = 0; k < gl.nodes.size(); ++k) {
            const double r = r_lo + (q + 0.5 * (gl.nodes[k] + 1.0)) * h;
            const double w = 0.5 * h * gl.weights[k] * 2.0 * r;
            const ResolvedTail t = p1a_p2a(tau, z, v, r * r, K, p);
            P1 += w * t.P1;
            P2 += w * t.P2;
            mass += w * t.mass2;
        }
    }
    const TailProbabilities e = p1e_p2e(tau, z, v, std::log(K), p);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::abs(P2 - e.P2) < 1e-4);
    CHECK(std::abs(P1 - e.P1) < 1e-4);
}

TEST_CASE("diffusion premium vanishes without dividends or without exercise") {
    ModelParams p = diffusion_params();
    const Eigen::VectorXd t = linspace(0.0, p.T, 6), v = linspace(0.02, 0.08, 3);
    p.q1 = p.q2 = 0.0;
    CHECK(premium_diffusion(0.0, 1.0, 0.04, flat_boundary(p, 1.0, t, v), p, {}, {}) == 0.0);
    p = diffusion_params();
    CHECK(std::abs(premium_diffusion(0.0, 1.0, 0.04, flat_boundary(p, 1e3, t, v), p, {}, {})) < 1e-12);
    // A finite boundary gives a strictly positive flow when q1 b > q2 on the stopping region.
    CHECK(premium_diffusion(0.0, 1.0, 0.04, flat_boundary(p, 1.05, t, v), p, {}, {}) > 0.0);
}

TEST_CASE("diffusion premium matches a European-engine quadrature for a flat boundary") {
    // With a flat B, the stopping probabilities at each u are European tail
    // probabilities for maturity u and strike A(u) = B e^{(q1-q2)u}.
    ModelParams p = diffusion_params();
    const double B = 1.08, s = 1.02, v = 0.04;
    const Eigen::VectorXd tg = linspace(0.0, p.T, 6), vg = linspace(0.01, 0.2, 3);
    const double got = premium_diffusion(0.0, s, v, flat_boundary(p, B, tg, vg), p, {}, {});
    const Rule& gl = gauss_legendre(40);
    double want = 0.0;
    for (int k = 0; k < gl.nodes.size(); ++k) {
        const double w = 0.5 * (gl.nodes[k] + 1.0), u = p.T * w * w, du = p.T * w * gl.weights[k];
        if (u < 1e-3) continue;   // the stopping probabilities are below 1e-100 here
        ModelParams pu = p;
        pu.T = u;
        // Strike A(u) = B e^{(q1-q2)u} becomes the unit strike at S1 = 100 s / B.
        pu.q1 = pu.q2 = 0.0;
        MarketState st;
        st.S1 = 100.0 * s / B;
        st.v = v;
        const PriceResult r = price_european(st, pu, {}, {});
        want += du * (p.q1 * std::exp(-p.q1 * u) * s * r.q_hat_1 - p.q2 * std::exp(-p.q2 * u) * r.q_hat_2);
    }
    CHECK(got == doctest::Approx(want).epsilon(2e-4));
}

TEST_CASE("jump premium: zero without jumps and on an intrinsic surface") {
    const ModelParams p = diffusion_params();
    const Eigen::VectorXd t = linspace(0.0, p.T, 6), v = linspace(0.02, 0.08, 3);
    const BoundaryCurve b = flat_boundary(p, 1.05, t, v);
    const PriceSurface pay = payoff_surface(p, t, v, 200);
    const JumpPremium none = premium_jumps(0.0, 1.0, 0.04, b, pay, p, {}, {});
    CHECK(none.J1 == 0.0);
    CHECK(none.J2 == 0.0);

    // A surface equal to the intrinsic value leaves nothing to lose on a back-jump.
    const JumpSpec j1{0.5, -0.01, 0.002}, j2{0.3, 0.01, 0.002};
    PriceSurface intr = pay;
    for (int i = 0; i < t.size(); ++i)
        for (int k = 0; k < intr.s.size(); ++k)
            for (int j = 0; j < v.size(); ++j) intr.at(i, k, j) = discounted_intrinsic(t[i], intr.s[k], p);
    const JumpPremium zero = premium_jumps(0.0, 1.0, 0.04, b, intr, p, j1, j2);
    CHECK(std::abs(zero.J1) < 1e-15);
    CHECK(std::abs(zero.J2) < 1e-15);
}

TEST_CASE("inhomogeneous term: continuation, diffusion and maturity") {
    const ModelParams p = diffusion_params();
    const Eigen::VectorXd t = linspace(0.0, p.T, 6), v = linspace(0.02, 0.08, 3);
    const BoundaryCurve b = flat_boundary(p, 1.05, t, v);
    const PriceSurface pay = payoff_surface(p, t, v, 200);
    CHECK(inhomogeneous_term(0.1, 1.0, 0.04, pay, b, p, {}, {}) == 0.0);
    const double s = 1.3, u = 0.1;
    CHECK(inhomogeneous_term(u, s, 0.04, pay, b, p, {}, {}) ==
          doctest::Approx(p.q1 * std::exp(-p.q1 * u) * s - p.q2 * std::exp(-p.q2 * u)).epsilon(1e-14));

    // At maturity the term is -e^{-q2 T} f(b) with f the maturity-limit
    // function, so it vanishes at the limit ratio.
    ModelParams q = p;
    q.q1 = 0.04;
    q.q2 = 0.05;
    const JumpSpec j1{0.5, -0.05, 0.1}, j2{0.3, 0.02, 0.08};
    const BoundaryLimitResult bl = boundary_limit(q.q1, q.q2, j1, j2);
    const Eigen::VectorXd tt = linspace(0.0, q.T, 3);
    const PriceSurface payq = payoff_surface(q, tt, v, 1201);
    const BoundaryCurve bq = flat_boundary(q, bl.b_limit, tt, v);
    const double growth = std::exp((q.q1 - q.q2) * q.T);
    CHECK(std::abs(inhomogeneous_term(q.T, bl.b_limit * growth, 0.04, payq, bq, q, j1, j2)) < 1e-6);
    for (double bb : {1.1 * bl.b_limit, 1.3 * bl.b_limit}) {
        const double want = -std::exp(-q.q2 * q.T) * boundary_f(bb, q.q1, q.q2, j1, j2);
        CHECK(inhomogeneous_term(q.T, bb * growth, 0.04, payq, bq, q, j1, j2) == doctest::Approx(want).epsilon(1e-5));
    }
}

TEST_CASE("American equals European when early exercise is never optimal") {
    ModelParams p = diffusion_params();
    p.q1 = 0.0;
    p.q2 = 0.03;
    MarketState st;
    AmericanOptions o;
    o.grids.time_nodes = 5;
    o.grids.var_nodes = 2;
    o.grids.s_nodes = 20;
    const AmericanSolution sol = solve_american(st, p, {}, {}, o);
    CHECK(sol.boundary.empty());
    CHECK(sol.value_nominal == sol.european_nominal);
    CHECK(sol.v_tilde == sol.european_v_tilde);
    CHECK(sol.value.values == sol.european.values);
    CHECK(sol.european_nominal == doctest::Approx(price_european(st, p, {}, {}).value).epsilon(1e-12));
}

TEST_CASE("American solution without jumps: dominance, value matching and the maturity limit") {
    const Solved& s = solved_diffusion();
    const AmericanSolution& sol = s.sol;
    const ModelParams& p = s.p;
    CHECK(sol.diagnostics.converged);
    CHECK(sol.diagnostics.capped_nodes == 0);
    CHECK(sol.diagnostics.value_matching_residual < 1e-5);
    CHECK(sol.premium.diffusion > 0.0);
    CHECK(sol.v_tilde >= sol.european_v_tilde);
    CHECK(sol.value_nominal == doctest::Approx(100.0 * sol.v_tilde).epsilon(1e-12));
    const PriceSurface& va = sol.value;
    for (int i = 0; i < va.t.size(); ++i)
        for (int k = 0; k < va.s.size(); ++k)
            for (int j = 0; j < va.v.size(); ++j) {
                CHECK(va.at(i, k, j) >= sol.european.at(i, k, j) - 1e-9);
                CHECK(va.at(i, k, j) >= discounted_intrinsic(va.t[i], va.s[k], p) - 1e-9);
            }
    const BoundaryCurve& b = sol.boundary;
    const int M = static_cast<int>(b.t.size()) - 1;
    for (int j = 0; j < b.v.size(); ++j) {
        CHECK(b.B(M, j) == 1.0);
        for (int i = 0; i < M; ++i) CHECK(b.B(i, j) >= 1.0);
        // The last interior node is close to maturity; the limit is approached
        // like sqrt(tau), so only closeness is required.
        CHECK(std::abs(b.B(M - 1, j) - sol.b_limit) < 0.05);
    }
}

TEST_CASE("American solution with jumps: premium parts and dominance") {
    const Solved& s = solved_jumps();
    const AmericanSolution& sol = s.sol;
    CHECK(sol.diagnostics.converged);
    CHECK(sol.b_limit > 1.0);
    CHECK(sol.premium.jump1 >= 0.0);
    CHECK(sol.premium.jump2 >= 0.0);
    CHECK(sol.premium.diffusion >= 0.0);
    CHECK(sol.v_tilde >= sol.european_v_tilde);
    CHECK(sol.diagnostics.value_matching_residual < 1e-5);
    const BoundaryCurve& b = sol.boundary;
    const int M = static_cast<int>(b.t.size()) - 1;
    for (int j = 0; j < b.v.size(); ++j) CHECK(std::abs(b.B(M - 1, j) - sol.b_limit) < 0.05);
    // J1, J2 >= 0 on the solved surface at other states too.
    const JumpSpec j1{0.5, -0.05, 0.1}, j2{0.3, 0.02, 0.08};
    for (double x : {0.9, 1.0, 1.02}) {
        const JumpPremium jp = premium_jumps(0.0, x, 0.04, b, sol.value, s.p, j1, j2);
        CHECK(jp.J1 >= 0.0);
        CHECK(jp.J2 >= 0.0);
    }
}

TEST_CASE("boundary curve interpolation") {
    const ModelParams p = diffusion_params();
    BoundaryCurve b = flat_boundary(p, 1.2, linspace(0.0, p.T, 5), linspace(0.02, 0.08, 2));
    b.B(0, 1) = 1.4;
    CHECK(b.B_at(0.0, 0.02) == doctest::Approx(1.2));
    CHECK(b.B_at(0.0, 0.05) == doctest::Approx(1.3));
    CHECK(b.B_at(0.0, 1.0) == doctest::Approx(1.4));
    // Towards maturity the left limit is used, not the terminal 1.
    CHECK(b.B_at(p.T - 1e-9, 0.02) == doctest::Approx(1.2));
    CHECK(b.A_at(0.25, 0.02) == doctest::Approx(1.2 * std::exp((p.q1 - p.q2) * 0.25)));
}
