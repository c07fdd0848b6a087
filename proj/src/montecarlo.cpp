#include "exch/montecarlo.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>
#include <vector>

namespace exch {

namespace {

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace

// Starting states are scattered by the finaliser. Offsetting by multiples of
// the increment would put every stream on one sequence a few draws apart.
SplitMix64::SplitMix64(std::uint64_t seed, std::uint64_t stream)
    : state_(mix64(mix64(seed) ^ mix64(stream + 0x632BE59BD9B4E019ull))) {}

SplitMix64::result_type SplitMix64::operator()() {
    return mix64(state_ += 0x9E3779B97F4A7C15ull);
}

namespace {

// A path unit is one path, or an antithetic pair of paths sharing a stream.
struct UnitLayout {
    std::int64_t units;
    int per_unit;
};

UnitLayout layout(const McConfig& cfg) {
    if (cfg.n_paths < 1 || cfg.n_steps < 1) throw DomainError("Monte Carlo needs n_paths >= 1 and n_steps >= 1");
    if (static_cast<double>(cfg.n_paths) * cfg.n_steps > cfg.max_work) {
        throw ResourceError("Monte Carlo budget exceeded: n_paths * n_steps > max_work");
    }
    if (cfg.antithetic) {
        if (cfg.n_paths % 2 != 0) throw DomainError("antithetic sampling needs an even path count");
        return {cfg.n_paths / 2, 2};
    }
    return {cfg.n_paths, 1};
}

// Runs fn(unit) for every unit; units are split into contiguous blocks, one per worker.
template <class Fn>
void for_each_unit(std::int64_t units, int workers, Fn&& fn) {
    workers = std::max(1, static_cast<int>(std::min<std::int64_t>(workers, units)));
    if (workers == 1) {
        for (std::int64_t u = 0; u < units; ++u) fn(u);
        return;
    }
    std::vector<std::thread> pool;
    const std::int64_t block = (units + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const std::int64_t lo = w * block, hi = std::min(units, lo + block);
        pool.emplace_back([lo, hi, &fn] {
            for (std::int64_t u = lo; u < hi; ++u) fn(u);
        });
    }
    for (auto& th : pool) th.join();
}

// Pairwise summation: order-independent of the worker split and stable.
double pairwise_sum(const double* x, std::size_t n) {
    if (n <= 16) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    const std::size_t h = n / 2;
    return pairwise_sum(x, h) + pairwise_sum(x + h, n - h);
}

McEstimate summarize(const std::vector<double>& unit_values, int per_unit, std::uint64_t seed, double scale) {
    const std::size_t n = unit_values.size();
    const double mean = pairwise_sum(unit_values.data(), n) / static_cast<double>(n);
    std::vector<double> dev(n);
    for (std::size_t i = 0; i < n; ++i) dev[i] = (unit_values[i] - mean) * (unit_values[i] - mean);
    const double var = n > 1 ? pairwise_sum(dev.data(), n) / static_cast<double>(n - 1) : 0.0;
    McEstimate e;
    e.mean = scale * mean;
    e.stderr_ = scale * std::sqrt(var / static_cast<double>(n));
    e.n_paths = static_cast<std::int64_t>(n) * per_unit;
    e.seed = seed;
    return e;
}

class PathStepper {
public:
    PathStepper(const MarketState& s, const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2, const McConfig& cfg)
        : p_(p), j1_(j1), j2_(j2), cfg_(cfg) {
        tau_ = p.T - s.t;
        if (!(tau_ > 0.0)) throw DomainError("Monte Carlo requires t < T");
        if (!(s.v > 0.0) || !(s.S1 > 0.0) || !(s.S2 > 0.0)) throw DomainError("Monte Carlo requires a positive state");
        dt_ = tau_ / cfg.n_steps;
        sqdt_ = std::sqrt(dt_);
        k_ = p.kappa_v();
        a_ = p.alpha();
        sig_ = p.sigma();
        rb_ = p.rho_bar();
        rbc_ = std::sqrt(std::max(0.0, 1.0 - rb_ * rb_));
        comp_ = compensator(j1, j2);
        ek_ = std::exp(-k_ * dt_);
        cir_c_ = p.omega * p.omega * (k_ != 0.0 ? -std::expm1(-k_ * dt_) / (4.0 * k_) : dt_ / 4.0);
        cir_d_ = 4.0 * a_ / (p.omega * p.omega);
        x0_ = s.x(p);
        v0_ = s.v;
    }

    double dt() const { return dt_; }
    double x0() const { return x0_; }
    double v0() const { return v0_; }

    // Advances n (1 or 2) paths by one step; the second is the antithetic partner.
    void step(SplitMix64& rng, int n, double* x, double* v, int* jumps1, int* jumps2) const {
        std::normal_distribution<double> normal;
        const double zv = normal(rng), z = normal(rng);
        double vnew[2];
        double iv[2];   // integrated variance over the step
        double dw[2];   // int sqrt(v) dW_v over the step
        if (cfg_.scheme == VarianceScheme::ExactCIR) {
            const double lam = v[0] * ek_ / cir_c_;
            long count = 0;
            if (lam > 0.0) count = std::poisson_distribution<long>(0.5 * lam)(rng);
            const double chi = std::gamma_distribution<double>(0.5 * cir_d_ + count, 2.0)(rng);
            const double vn = cir_c_ * chi;
            for (int i = 0; i < n; ++i) {
                vnew[i] = vn;
                iv[i] = 0.5 * (v[i] + vn) * dt_;
                dw[i] = (vn - v[i] - a_ * dt_ + k_ * iv[i]) / p_.omega;
            }
        } else {
            for (int i = 0; i < n; ++i) {
                const double vp = std::max(v[i], 0.0);
                const double zz = i == 0 ? zv : -zv;
                vnew[i] = v[i] + (a_ - k_ * vp) * dt_ + p_.omega * std::sqrt(vp) * sqdt_ * zz;
                iv[i] = vp * dt_;
                dw[i] = std::sqrt(vp) * sqdt_ * zz;
            }
        }
        long n1 = 0, n2 = 0;
        if (j1_.active()) n1 = std::poisson_distribution<long>(j1_.lambda_tilde * dt_)(rng);
        if (j2_.active()) n2 = std::poisson_distribution<long>(j2_.lambda_tilde * dt_)(rng);
        const double m1 = n1 > 0 ? normal(rng) : 0.0;
        const double m2 = n2 > 0 ? normal(rng) : 0.0;
        for (int i = 0; i < n; ++i) {
            const double sign = i == 0 ? 1.0 : -1.0;
            const double jump = n1 * j1_.gamma + j1_.delta * std::sqrt(double(n1)) * sign * m1 -
                                (n2 * j2_.gamma + j2_.delta * std::sqrt(double(n2)) * sign * m2);
            const double diff = sig_ * (rb_ * dw[i] + rbc_ * std::sqrt(std::max(iv[i], 0.0)) * sign * z);
            x[i] += -comp_ * dt_ - 0.5 * sig_ * sig_ * iv[i] + diff + jump;
            v[i] = vnew[i];
            jumps1[i] += static_cast<int>(n1);
            jumps2[i] += static_cast<int>(n2);
        }
    }

private:
    ModelParams p_;
    JumpSpec j1_, j2_;
    McConfig cfg_;
    double tau_, dt_, sqdt_, k_, a_, sig_, rb_, rbc_, comp_, ek_, cir_c_, cir_d_, x0_, v0_;
};

// Simulates one unit and reports every step through visit(path_slot, step, x, v).
template <class Visit>
void run_unit(const PathStepper& st, const McConfig& cfg, std::int64_t unit, int per_unit, Visit&& visit,
              int* jumps1 = nullptr, int* jumps2 = nullptr) {
    SplitMix64 rng(cfg.seed, static_cast<std::uint64_t>(unit));
    double x[2] = {st.x0(), st.x0()}, v[2] = {st.v0(), st.v0()};
    int c1[2] = {0, 0}, c2[2] = {0, 0};
    for (int i = 0; i < per_unit; ++i) visit(i, 0, x[i], v[i]);
    for (int k = 1; k <= cfg.n_steps; ++k) {
        st.step(rng, per_unit, x, v, c1, c2);
        for (int i = 0; i < per_unit; ++i) visit(i, k, x[i], v[i]);
    }
    if (jumps1 != nullptr) {
        for (int i = 0; i < per_unit; ++i) {
            jumps1[i] = c1[i];
            jumps2[i] = c2[i];
        }
    }
}

double discounted_payoff(const ModelParams& p, double u, double s) {
    return std::exp(-p.q1 * u) * std::max(s - std::exp((p.q1 - p.q2) * u), 0.0);
}

}  // namespace

PathBatch simulate_paths(const MarketState& state, const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2,
                         const McConfig& cfg) {
    const UnitLayout lay = layout(cfg);
    const PathStepper st(state, p, j1, j2, cfg);
    PathBatch b;
    b.times = Eigen::VectorXd::LinSpaced(cfg.n_steps + 1, state.t, p.T);
    b.log_s.resize(cfg.n_paths, cfg.n_steps + 1);
    b.v.resize(cfg.n_paths, cfg.n_steps + 1);
    b.jumps1.resize(cfg.n_paths);
    b.jumps2.resize(cfg.n_paths);
    for_each_unit(lay.units, cfg.workers, [&](std::int64_t u) {
        int c1[2], c2[2];
        run_unit(
            st, cfg, u, lay.per_unit,
            [&](int i, int k, double x, double v) {
                b.log_s(u * lay.per_unit + i, k) = x;
                b.v(u * lay.per_unit + i, k) = v;
            },
            c1, c2);
        for (int i = 0; i < lay.per_unit; ++i) {
            b.jumps1[u * lay.per_unit + i] = c1[i];
            b.jumps2[u * lay.per_unit + i] = c2[i];
        }
    });
    return b;
}

McEstimate mc_price_european(const MarketState& state, const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2,
                             const McConfig& cfg) {
    const UnitLayout lay = layout(cfg);
    const PathStepper st(state, p, j1, j2, cfg);
    std::vector<double> values(static_cast<std::size_t>(lay.units));
    for_each_unit(lay.units, cfg.workers, [&](std::int64_t u) {
        double acc = 0.0;
        run_unit(st, cfg, u, lay.per_unit, [&](int, int k, double x, double) {
            if (k == cfg.n_steps) acc += discounted_payoff(p, p.T, std::exp(x));
        });
        values[u] = acc / lay.per_unit;
    });
    return summarize(values, lay.per_unit, cfg.seed, state.S2 * std::exp(p.q2 * state.t));
}

McEstimate mc_price_american_lsm(const MarketState& state, const ModelParams& p, const JumpSpec& j1,
                                 const JumpSpec& j2, const McConfig& cfg, int basis_degree) {
    if (basis_degree < 2) throw DomainError("LSM basis degree must be >= 2");
    const UnitLayout lay = layout(cfg);
    const PathBatch b = simulate_paths(state, p, j1, j2, cfg);
    const std::int64_t n = cfg.n_paths;
    const int steps = cfg.n_steps;

    // Monomials s^a v^b with a + b <= degree, on scaled coordinates.
    std::vector<std::pair<int, int>> powers;
    for (int d = 0; d <= basis_degree; ++d)
        for (int a = d; a >= 0; --a) powers.emplace_back(a, d - a);
    const double s_scale = std::exp(state.x(p)), v_scale = p.v_mean();

    Eigen::VectorXd cash(n);
    for (std::int64_t i = 0; i < n; ++i) cash[i] = discounted_payoff(p, b.times[steps], std::exp(b.log_s(i, steps)));

    for (int k = steps - 1; k >= 1; --k) {
        const double u = b.times[k];
        std::vector<std::int64_t> itm;
        for (std::int64_t i = 0; i < n; ++i)
            if (discounted_payoff(p, u, std::exp(b.log_s(i, k))) > 0.0) itm.push_back(i);
        if (itm.size() < 2 * powers.size()) continue;
        Eigen::MatrixXd X(itm.size(), powers.size());
        Eigen::VectorXd y(itm.size());
        for (std::size_t r = 0; r < itm.size(); ++r) {
            const double s = std::exp(b.log_s(itm[r], k)) / s_scale, v = b.v(itm[r], k) / v_scale;
            for (std::size_t c = 0; c < powers.size(); ++c)
                X(r, c) = std::pow(s, powers[c].first) * std::pow(v, powers[c].second);
            y[r] = cash[itm[r]];
        }
        const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
        if (qr.rank() < static_cast<Eigen::Index>(powers.size())) {
            throw NumericsError("LSM regression is rank deficient", static_cast<double>(qr.rank()));
        }
        const Eigen::VectorXd beta = qr.solve(y);
        const Eigen::VectorXd cont = X * beta;
        for (std::size_t r = 0; r < itm.size(); ++r) {
            const double ex = discounted_payoff(p, u, std::exp(b.log_s(itm[r], k)));
            if (ex >= cont[r]) cash[itm[r]] = ex;
        }
    }

    std::vector<double> values(static_cast<std::size_t>(lay.units));
    for (std::int64_t u = 0; u < lay.units; ++u) {
        double acc = 0.0;
        for (int i = 0; i < lay.per_unit; ++i) acc += cash[u * lay.per_unit + i];
        values[u] = acc / lay.per_unit;
    }
    McEstimate e = summarize(values, lay.per_unit, cfg.seed, state.S2 * std::exp(p.q2 * state.t));
    const double now = state.S2 * std::exp(p.q2 * state.t) * discounted_payoff(p, state.t, std::exp(state.x(p)));
    if (now > e.mean) {
        e.mean = now;
        e.stderr_ = 0.0;
    }
    return e;
}

Histogram2D mc_density_histogram(const MarketState& state, const ModelParams& p, const JumpSpec& j1,
                                 const JumpSpec& j2, const McConfig& cfg, const Eigen::VectorXd& s_edges,
                                 const Eigen::VectorXd& v_edges) {
    if (s_edges.size() < 2 || v_edges.size() < 2) throw DomainError("histogram needs at least one bin per axis");
    const UnitLayout lay = layout(cfg);
    const PathStepper st(state, p, j1, j2, cfg);
    // Terminal bin index per path (-1 outside the grid), filled in parallel, counted serially.
    std::vector<std::int64_t> bin(static_cast<std::size_t>(cfg.n_paths), -1);
    const auto locate = [](const Eigen::VectorXd& e, double x) -> int {
        if (x < e[0] || x >= e[e.size() - 1]) return -1;
        return static_cast<int>(std::upper_bound(e.data(), e.data() + e.size(), x) - e.data()) - 1;
    };
    for_each_unit(lay.units, cfg.workers, [&](std::int64_t u) {
        run_unit(st, cfg, u, lay.per_unit, [&](int i, int k, double x, double v) {
            if (k != cfg.n_steps) return;
            const int a = locate(s_edges, std::exp(x)), c = locate(v_edges, v);
            if (a >= 0 && c >= 0) bin[u * lay.per_unit + i] = static_cast<std::int64_t>(a) * (v_edges.size() - 1) + c;
        });
    });
    Histogram2D h;
    h.s_edges = s_edges;
    h.v_edges = v_edges;
    h.counts = Eigen::MatrixXd::Zero(s_edges.size() - 1, v_edges.size() - 1);
    for (std::int64_t b : bin)
        if (b >= 0) h.counts(b / (v_edges.size() - 1), b % (v_edges.size() - 1)) += 1.0;
    h.total = cfg.n_paths;
    return h;
}

}  // namespace exch
