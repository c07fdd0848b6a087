#include "doctest.h"

#include "exch/density.hpp"
#include "oracles/cir.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace exch;

namespace {

ModelParams density_params() {
    ModelParams p;
    p.rho1 = -0.4;
    p.rho2 = 0.3;
    p.omega = 0.3;
    p.Lambda = 0.5;
    p.q1 = 0.05;
    p.q2 = 0.02;
    return p;
}

const JumpSpec kJ1{0.4, -0.05, 0.15}, kJ2{0.3, 0.1, 0.2};

// Composite Gauss-Legendre nodes and weights on [a, b].
void composite_gl(double a, double b, int panels, int order, Eigen::VectorXd& x, Eigen::VectorXd& w) {
    const Rule& r = gauss_legendre(order);
    x.resize(panels * order);
    w.resize(panels * order);
    const double h = (b - a) / panels;
    for (int p = 0; p < panels; ++p)
        for (int k = 0; k < order; ++k) {
            x[p * order + k] = a + (p + 0.5 * (r.nodes[k] + 1.0)) * h;
            w[p * order + k] = 0.5 * h * r.weights[k];
        }
}

}  // namespace

TEST_CASE("series and folded forms agree at random points") {
    const ModelParams p = density_params();
    const double tau = 0.5;
    const JumpSumQuadrature jq = make_jump_quadrature(tau, kJ1, kJ2);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> us(0.75, 1.3), uv(0.01, 0.09);
    for (int k = 0; k < 20; ++k) {
        const double sT = us(rng), vT = uv(rng);
        const double a = transition_density(tau, 1.0, 0.04, sT, vT, p, kJ1, kJ2, jq);
        const double b = density_via_charfn(tau, 1.0, 0.04, sT, vT, p, kJ1, kJ2);
        CHECK(a == doctest::Approx(b).epsilon(1e-6));
    }
}

TEST_CASE("no jumps: series and folded forms coincide") {
    const ModelParams p = density_params();
    const JumpSumQuadrature jq = make_jump_quadrature(0.5, {}, {});
    CHECK(jq.max_m == 0);
    CHECK(jq.max_n == 0);
    for (double sT : {0.8, 1.0, 1.2}) {
        const double a = transition_density(0.5, 1.0, 0.04, sT, 0.05, p, {}, {}, jq);
        const double b = density_via_charfn(0.5, 1.0, 0.04, sT, 0.05, p, {}, {});
        CHECK(a == b);
    }
}

TEST_CASE("Gauss-Hermite mark expectation agrees when marks are narrow") {
    const ModelParams p = density_params();
    const JumpSpec n1{0.4, -0.05, 0.01}, n2{0.3, 0.1, 0.01};
    const JumpSumQuadrature exact = make_jump_quadrature(0.5, n1, n2);
    const JumpSumQuadrature gh = make_jump_quadrature(0.5, n1, n2, 24);
    const double a = transition_density(0.5, 1.0, 0.04, 1.05, 0.05, p, n1, n2, exact);
    const double b = transition_density(0.5, 1.0, 0.04, 1.05, 0.05, p, n1, n2, gh);
    CHECK(b == doctest::Approx(a).epsilon(1e-6));
}

TEST_CASE("density shifts with the log-ratio") {
    const ModelParams p = density_params();
    const double c = 0.3;
    const double a = density_via_charfn(0.5, 1.0, 0.04, 1.1, 0.05, p, kJ1, kJ2);
    const double b = density_via_charfn(0.5, std::exp(c), 0.04, 1.1 * std::exp(c), 0.05, p, kJ1, kJ2);
    // Density in s_T carries the Jacobian 1/s_T.
    CHECK(b * std::exp(c) == doctest::Approx(a).epsilon(1e-9));
}

TEST_CASE("normalization, nonnegativity and CIR variance marginal") {
    const ModelParams p = density_params();
    const double tau = 0.5, v0 = 0.04;
    Eigen::VectorXd x, wx, vT, wv;
    composite_gl(-2.0, 2.0, 24, 16, x, wx);
    composite_gl(1e-6, 0.25, 8, 12, vT, wv);
    const Eigen::VectorXd sT = x.array().exp();
    const DensityGrid g = density_grid(tau, 1.0, v0, sT, vT, p, kJ1, kJ2);
    CHECK(g.values.minCoeff() >= -1e-8);
    double total = 0.0, worst = 0.0;
    for (int j = 0; j < vT.size(); ++j) {
        double marginal = 0.0;
        for (int i = 0; i < x.size(); ++i) marginal += wx[i] * sT[i] * g.values(i, j);
        worst = std::max(worst, std::abs(marginal - oracle::cir_density(p, tau, v0, vT[j])));
        total += wv[j] * marginal;
    }
    CHECK(std::abs(total - 1.0) < 1e-3);
    CHECK(worst < 1e-4);
}

TEST_CASE("near-deterministic variance: log-ratio marginal is close to normal") {
    ModelParams p = density_params();
    p.omega = 0.02;
    p.Lambda = 0.0;
    p.xi = 2.0;
    p.eta = 0.04;
    const double tau = 1.0, var = p.sigma() * p.sigma() * p.eta * tau;
    Eigen::VectorXd x, wx, vT, wv;
    composite_gl(-1.5, 1.5, 16, 16, x, wx);
    composite_gl(0.025, 0.055, 6, 16, vT, wv);
    const Eigen::VectorXd sT = x.array().exp();
    const DensityGrid g = density_grid(tau, 1.0, p.eta, sT, vT, p, {}, {});
    double kl = 0.0;
    for (int i = 0; i < x.size(); ++i) {
        double m = 0.0;
        for (int j = 0; j < vT.size(); ++j) m += wv[j] * g.values(i, j) * sT[i];
        const double ref = normal_pdf((x[i] + 0.5 * var) / std::sqrt(var)) / std::sqrt(var);
        if (m > 1e-300) kl += wx[i] * m * std::log(m / ref);
    }
    CHECK(std::abs(kl) < 1e-3);
}

TEST_CASE("density domain checks and CSV export") {
    const ModelParams p = density_params();
    CHECK_THROWS_AS(density_via_charfn(1e-8, 1.0, 0.04, 1.0, 0.04, p, {}, {}), DomainError);
    CHECK_THROWS_AS(density_via_charfn(0.5, 1.0, 0.04, -1.0, 0.04, p, {}, {}), DomainError);
    DensityGrid g;
    g.s_T = Eigen::VectorXd::Constant(1, 1.5);
    g.v_T = Eigen::VectorXd::Constant(2, 0.04);
    g.values = Eigen::MatrixXd::Constant(1, 2, 0.25);
    std::ostringstream os;
    write_density_csv(os, g);
    CHECK(os.str() == "s_T,v_T,density\n1.5,0.04,0.25\n1.5,0.04,0.25\n");
}
