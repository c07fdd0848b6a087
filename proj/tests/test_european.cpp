#include "doctest.h"

#include "exch/european.hpp"

#include <cmath>

using namespace exch;

namespace {

ModelParams near_black_scholes() {
    ModelParams p;
    p.omega = 1e-3;
    p.Lambda = 0.0;
    p.eta = 0.04;
    p.xi = 2.0;
    p.q1 = p.q2 = 0.03;
    p.T = 1.0;
    return p;
}

ModelParams generic_params() {
    ModelParams p;
    p.rho1 = -0.4;
    p.rho2 = 0.3;
    p.omega = 0.4;
    p.Lambda = 0.5;
    p.q1 = 0.05;
    p.q2 = 0.02;
    return p;
}

const JumpSpec kJ1{0.8, -0.05, 0.15}, kJ2{0.5, 0.1, 0.2};

}  // namespace

TEST_CASE("Margrabe closed form: trivial limits") {
    const double atm = margrabe_closed_form(100.0, 100.0, 0.2, 1.0, 0.03, 0.03);
    CHECK(atm == doctest::Approx(100.0 * std::exp(-0.03) * (2.0 * normal_cdf(0.1) - 1.0)).epsilon(1e-14));
    CHECK(margrabe_closed_form(110.0, 100.0, 0.2, 1e-12, 0.03, 0.03) == doctest::Approx(10.0).epsilon(1e-9));
    CHECK(margrabe_closed_form(90.0, 100.0, 1e-9, 1.0, 0.03, 0.03) < 1e-12);
}

TEST_CASE("tail probabilities: limits and the normal-CDF degeneration") {
    const ModelParams p = near_black_scholes();
    const TailProbabilities itm = p1e_p2e(1.0, 50.0, 0.04, 0.0, p);
    CHECK(itm.P1 == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(itm.P2 == doctest::Approx(1.0).epsilon(1e-8));
    const TailProbabilities otm = p1e_p2e(1.0, 0.02, 0.04, 0.0, p);
    CHECK(otm.P1 < 1e-8);
    CHECK(otm.P2 < 1e-8);
    const double sd = p.sigma() * std::sqrt(0.04);
    for (double z : {0.8, 1.0, 1.25}) {
        const TailProbabilities tp = p1e_p2e(1.0, z, 0.04, 0.0, p);
        CHECK(std::abs(tp.P2 - normal_cdf(std::log(z) / sd - 0.5 * sd)) < 1e-4);
        CHECK(std::abs(tp.P1 - normal_cdf(std::log(z) / sd + 0.5 * sd)) < 1e-4);
    }
}

TEST_CASE("no-jump, near-deterministic variance reproduces Margrabe") {
    const ModelParams p = near_black_scholes();
    for (double S1 : {80.0, 90.0, 100.0, 110.0, 125.0}) {
        MarketState st;
        st.S1 = S1;
        st.S2 = 100.0;
        st.v = 0.04;
        const PriceResult r = price_european(st, p, {}, {});
        const double m = margrabe_closed_form(S1, 100.0, p.sigma() * 0.2, 1.0, 0.03, 0.03);
        CHECK(std::abs(r.value / m - 1.0) < 1e-3);
    }
}

TEST_CASE("price decomposition identity and positivity") {
    const ModelParams p = generic_params();
    MarketState st;
    st.t = 0.25;
    st.S1 = 104.0;
    st.S2 = 97.0;
    st.v = 0.05;
    const PriceResult r = price_european(st, p, kJ1, kJ2);
    const double tau = p.T - st.t;
    CHECK(r.value >= 0.0);
    CHECK(std::abs(r.value - (st.S1 * std::exp(-p.q1 * tau) * r.q_hat_1 - st.S2 * std::exp(-p.q2 * tau) * r.q_hat_2)) <
          1e-12 * r.value);
    CHECK(r.value == doctest::Approx(st.S2 * std::exp(p.q2 * st.t) * r.v_tilde).epsilon(1e-12));
    CHECK(r.terms_m > 0);
    CHECK(r.terms_n > 0);
    CHECK(r.truncation_bound <= 1e-8 * r.v_tilde);
}

TEST_CASE("ratio limits: worthless and deep in the money") {
    const ModelParams p = generic_params();
    const EuropeanEngine eng(p, kJ1, kJ2);
    const auto r = eng.price_ratios(0.0, 0.05, {1e-4, 1e4});
    CHECK(std::abs(r[0].v_tilde) < 1e-10);
    const double fwd = std::exp(-p.q1 * p.T) * 1e4 - std::exp(-p.q2 * p.T);
    CHECK(std::abs(r[1].v_tilde - fwd) < 1e-8 * fwd);
}

TEST_CASE("series, folded and Gauss-Hermite forms agree") {
    const EuropeanEngine eng(generic_params(), kJ1, kJ2);
    for (double s : {0.8, 1.0, 1.2}) {
        const double series = eng.price_ratios(0.0, 0.05, {s}).front().v_tilde;
        CHECK(eng.v_tilde_folded(0.0, s, 0.05) == doctest::Approx(series).epsilon(1e-8));
    }
    const double series = eng.price_ratios(0.0, 0.05, {1.0}).front().v_tilde;
    CHECK(eng.v_tilde_hermite(0.0, 1.0, 0.05, 96) == doctest::Approx(series).epsilon(1e-3));
}

TEST_CASE("no jumps: series collapses to a single term") {
    const EuropeanEngine eng(generic_params(), {}, {});
    const PriceResult r = eng.price_ratios(0.0, 0.05, {1.1}).front();
    CHECK(r.terms_m == 0);
    CHECK(r.terms_n == 0);
    CHECK(eng.v_tilde_folded(0.0, 1.1, 0.05) == doctest::Approx(r.v_tilde).epsilon(1e-10));
}

TEST_CASE("dual pricer reproduces the primal price") {
    const ModelParams p = generic_params();
    for (double S1 : {85.0, 100.0, 120.0}) {
        MarketState st;
        st.t = 0.1;
        st.S1 = S1;
        st.S2 = 100.0;
        st.v = 0.03;
        const PriceResult a = price_european(st, p, kJ1, kJ2);
        const PriceResult b = price_european_dual(st, p, kJ1, kJ2);
        CHECK(b.value == doctest::Approx(a.value).epsilon(1e-6));
        CHECK(b.q_hat_1 == doctest::Approx(a.q_hat_1).epsilon(1e-6));
    }
}

TEST_CASE("dual parameter map is an involution") {
    const ModelParams p = generic_params();
    const DualModel d = dual_parameters(p, kJ1, kJ2);
    const DualModel dd = dual_parameters(d.params, d.jump1, d.jump2);
    CHECK(dd.params.sigma1 == p.sigma1);
    CHECK(dd.params.rho1 == p.rho1);
    CHECK(dd.params.q1 == p.q1);
    CHECK(dd.params.Lambda == doctest::Approx(p.Lambda).epsilon(1e-14));
    CHECK(dd.jump1.lambda_tilde == doctest::Approx(kJ1.lambda_tilde).epsilon(1e-14));
    CHECK(dd.jump1.gamma == doctest::Approx(kJ1.gamma).epsilon(1e-14));
    CHECK(dd.jump2.lambda_tilde == doctest::Approx(kJ2.lambda_tilde).epsilon(1e-14));
    CHECK(dd.jump2.gamma == doctest::Approx(kJ2.gamma).epsilon(1e-14));
}

TEST_CASE("price does not depend on the interest rate") {
    ModelParams p = generic_params();
    MarketState st;
    st.v = 0.05;
    const double a = price_european(st, p, kJ1, kJ2).value;
    p.r = 0.2;
    CHECK(price_european(st, p, kJ1, kJ2).value == a);
}

TEST_CASE("IPDE operator on the discounted intrinsic value") {
    // For V = e^{-q1 t} s - e^{-q2 t} the spatial part vanishes (s is a martingale),
    // leaving only the time derivative q2 e^{-q2 t} - q1 e^{-q1 t} s.
    const ModelParams p = generic_params();
    PriceSurface surf;
    surf.t = Eigen::VectorXd::LinSpaced(5, 0.0, 0.4);
    surf.s = Eigen::VectorXd::LinSpaced(201, 0.05, 20.0);
    surf.v = Eigen::VectorXd::LinSpaced(5, 0.02, 0.1);
    surf.values.resize(5 * 201 * 5);
    for (int it = 0; it < 5; ++it)
        for (int is = 0; is < 201; ++is)
            for (int iv = 0; iv < 5; ++iv)
                surf.at(it, is, iv) = std::exp(-p.q1 * surf.t[it]) * surf.s[is] - std::exp(-p.q2 * surf.t[it]);
    const JumpSpec small1{0.8, -0.05, 0.05}, small2{0.5, 0.05, 0.05};
    for (int is : {40, 100, 160}) {
        const double r = ipde_residual(surf, {2, is, 2}, p, small1, small2);
        const double t = surf.t[2], x = surf.s[is];
        CHECK(std::abs(r - (p.q2 * std::exp(-p.q2 * t) - p.q1 * std::exp(-p.q1 * t) * x)) < 1e-5);
    }
    CHECK_THROWS_AS(ipde_residual(surf, {0, 10, 2}, p, small1, small2), DomainError);
}

TEST_CASE("IPDE residual of the transform price surface is small") {
    const ModelParams p = generic_params();
    const EuropeanEngine eng(p, kJ1, kJ2);
    Eigen::VectorXd t(3), s(41), v(3);
    t << 0.3, 0.31, 0.32;
    for (int k = 0; k < 41; ++k) s[k] = std::exp(-1.5 + 3.0 * k / 40.0);
    v << 0.045, 0.05, 0.055;
    const PriceSurface surf = european_surface(eng, t, s, v);
    for (int is : {15, 20, 25}) CHECK(std::abs(ipde_residual(surf, {1, is, 1}, p, kJ1, kJ2)) < 5e-3);
}
