#include "doctest.h"

#include "exch/european.hpp"
#include "exch/montecarlo.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

using namespace exch;

namespace {

ModelParams mc_params() {
    ModelParams p;
    p.rho1 = -0.4;
    p.rho2 = 0.3;
    p.omega = 0.3;
    p.Lambda = 0.5;
    p.q1 = 0.05;
    p.q2 = 0.02;
    return p;
}

const JumpSpec kJ1{0.8, -0.05, 0.15}, kJ2{0.5, 0.1, 0.2};

McConfig small_config(std::int64_t paths, int steps) {
    McConfig c;
    c.n_paths = paths;
    c.n_steps = steps;
    c.seed = 99;
    return c;
}

}  // namespace

TEST_CASE("SplitMix64 streams are reproducible and distinct") {
    SplitMix64 a(1, 0), b(1, 0), c(1, 1);
    const auto x = a();
    CHECK(x == b());
    CHECK(x != c());
}

TEST_CASE("SplitMix64 streams do not overlap") {
    // Any two streams drawing from one shifted sequence would share values.
    for (std::uint64_t seed : {0ull, 1ull, 12345ull}) {
        std::vector<std::uint64_t> draws;
        for (std::uint64_t stream = 0; stream < 64; ++stream) {
            SplitMix64 g(seed, stream);
            for (int k = 0; k < 256; ++k) draws.push_back(g());
        }
        std::sort(draws.begin(), draws.end());
        CHECK(std::adjacent_find(draws.begin(), draws.end()) == draws.end());
    }
}

TEST_CASE("seed-to-seed spread matches the reported standard error") {
    const MarketState st;
    McConfig c = small_config(4000, 20);
    std::vector<double> means;
    double se = 0.0;
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        c.seed = seed;
        const McEstimate e = mc_price_european(st, mc_params(), kJ1, kJ2, c);
        means.push_back(e.mean);
        se += e.stderr_ / 12.0;
    }
    double mean = 0.0, var = 0.0;
    for (double m : means) mean += m / 12.0;
    for (double m : means) var += (m - mean) * (m - mean) / 11.0;
    // Sample sd over 12 seeds lies within [0.55, 1.45] of the truth with ~99% probability.
    CHECK(std::sqrt(var) / se > 0.4);
    CHECK(std::sqrt(var) / se < 1.7);
}

TEST_CASE("estimates are bit-identical across worker counts") {
    const MarketState st;
    McConfig c = small_config(20000, 50);
    c.workers = 1;
    const McEstimate e1 = mc_price_european(st, mc_params(), kJ1, kJ2, c);
    for (int w : {4, 8}) {
        c.workers = w;
        const McEstimate e = mc_price_european(st, mc_params(), kJ1, kJ2, c);
        CHECK(e.mean == e1.mean);
        CHECK(e.stderr_ == e1.stderr_);
    }
    c.scheme = VarianceScheme::ExactCIR;
    c.workers = 1;
    const McEstimate x1 = mc_price_european(st, mc_params(), kJ1, kJ2, c);
    c.workers = 3;
    CHECK(mc_price_european(st, mc_params(), kJ1, kJ2, c).mean == x1.mean);
}

TEST_CASE("yield ratio is a martingale and variance keeps its stationary mean") {
    ModelParams p = mc_params();
    MarketState st;
    st.v = p.v_mean();
    McConfig c = small_config(40000, 40);
    c.antithetic = false;
    const PathBatch b = simulate_paths(st, p, kJ1, kJ2, c);
    const double s0 = st.s_tilde(p);
    for (int k : {10, 20, 40}) {
        const Eigen::ArrayXd s = b.log_s.col(k).array().exp();
        const double sd = std::sqrt((s - s.mean()).square().sum() / (s.size() - 1) / s.size());
        CHECK(std::abs(s.mean() - s0) < 4.0 * sd);
    }
    const Eigen::ArrayXd v = b.v.col(40).array();
    const double sdv = std::sqrt((v - v.mean()).square().sum() / (v.size() - 1) / v.size());
    CHECK(std::abs(v.mean() - st.v) < 4.0 * sdv);
}

TEST_CASE("near-deterministic variance: terminal log-ratio passes a K-S test") {
    ModelParams p;
    p.omega = 1e-3;
    p.Lambda = 0.0;
    MarketState st;
    st.v = p.eta;
    McConfig c = small_config(20000, 20);
    c.antithetic = false;
    const PathBatch b = simulate_paths(st, p, {}, {}, c);
    const double var = p.sigma() * p.sigma() * p.eta * p.T;
    const double mean = st.x(p) - 0.5 * var;
    std::vector<double> x(b.log_s.col(20).data(), b.log_s.col(20).data() + c.n_paths);
    std::sort(x.begin(), x.end());
    double d = 0.0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double f = normal_cdf((x[i] - mean) / std::sqrt(var));
        d = std::max({d, std::abs(f - i / n), std::abs(f - (i + 1) / n)});
    }
    CHECK(d * std::sqrt(n) < 1.358);   // 5% critical value
}

TEST_CASE("jump counts are Poisson") {
    McConfig c = small_config(40000, 10);
    c.antithetic = false;
    const PathBatch b = simulate_paths(MarketState{}, mc_params(), kJ1, kJ2, c);
    const Eigen::ArrayXd n = b.jumps1.cast<double>().array();
    const double mean = n.mean(), var = (n - mean).square().sum() / (n.size() - 1);
    const double rate = kJ1.lambda_tilde * 1.0;
    CHECK(std::abs(mean - rate) < 4.0 * std::sqrt(rate / n.size()));
    // Dispersion index (var / mean) has standard error about sqrt(2 / n).
    CHECK(std::abs(var / mean - 1.0) < 4.0 * std::sqrt(2.0 / n.size()));
}

TEST_CASE("pure diffusion matches Margrabe within 3 standard errors") {
    ModelParams p;
    p.omega = 1e-3;
    p.Lambda = 0.0;
    MarketState st;
    st.S1 = 95.0;
    st.v = p.eta;
    const McEstimate e = mc_price_european(st, p, {}, {}, small_config(100000, 20));
    const double m = margrabe_closed_form(95.0, 100.0, p.sigma() * std::sqrt(p.eta), p.T, p.q1, p.q2);
    CHECK(std::abs(e.mean - m) < 3.0 * e.stderr_);
}

TEST_CASE("unreachable strike gives zero") {
    MarketState st;
    st.S1 = 1e-12;
    const McEstimate e = mc_price_european(st, mc_params(), kJ1, kJ2, small_config(2000, 10));
    CHECK(e.mean == 0.0);
    CHECK(e.stderr_ == 0.0);
}

TEST_CASE("LSM: dominance and the zero-dividend case") {
    ModelParams p = mc_params();
    MarketState st;
    const McConfig c = small_config(20000, 25);
    const McEstimate eu = mc_price_european(st, p, kJ1, kJ2, c);
    const McEstimate am = mc_price_american_lsm(st, p, kJ1, kJ2, c);
    CHECK(am.mean >= eu.mean - 2.0 * eu.stderr_);
    p.q1 = 0.0;
    const McEstimate eu0 = mc_price_european(st, p, kJ1, kJ2, c);
    const McEstimate am0 = mc_price_american_lsm(st, p, kJ1, kJ2, c);
    CHECK(std::abs(am0.mean - eu0.mean) < 2.0 * eu0.stderr_);
    CHECK_THROWS_AS(mc_price_american_lsm(st, p, kJ1, kJ2, c, 1), DomainError);
}

TEST_CASE("histogram normalization and budget guard") {
    Eigen::VectorXd se = Eigen::VectorXd::LinSpaced(21, 0.5, 1.5), ve = Eigen::VectorXd::LinSpaced(11, 0.0, 0.15);
    const Histogram2D h = mc_density_histogram(MarketState{}, mc_params(), kJ1, kJ2, small_config(4000, 10), se, ve);
    CHECK(h.normalized().sum() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(h.probability().sum() <= 1.0);
    CHECK(h.total == 4000);
    McConfig big = small_config(1000, 10);
    big.max_work = 100.0;
    CHECK_THROWS_AS(mc_price_european(MarketState{}, mc_params(), kJ1, kJ2, big), ResourceError);
    McConfig odd = small_config(1001, 10);
    CHECK_THROWS_AS(mc_price_european(MarketState{}, mc_params(), kJ1, kJ2, odd), DomainError);
}
