#include "exch/american.hpp"

#include "exch/charfn.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>

namespace exch {

namespace {

using cd = std::complex<double>;
const cd I(0.0, 1.0);

// ---------------------------------------------------------------------------
// Boundary interpolation

// Fritsch-Carlson slope at node i of a monotone cubic through (x, y).
double pchip_slope(const Eigen::VectorXd& x, const std::vector<double>& y, int i) {
    const int n = static_cast<int>(x.size());
    auto secant = [&](int k) { return (y[k + 1] - y[k]) / (x[k + 1] - x[k]); };
    if (n < 2) return 0.0;
    if (i == 0) return secant(0);
    if (i == n - 1) return secant(n - 2);
    const double d0 = secant(i - 1), d1 = secant(i);
    if (d0 * d1 <= 0.0) return 0.0;
    const double h0 = x[i] - x[i - 1], h1 = x[i + 1] - x[i];
    const double w0 = 2.0 * h1 + h0, w1 = h1 + 2.0 * h0;
    return (w0 + w1) / (w0 / d0 + w1 / d1);
}

double pchip(const Eigen::VectorXd& x, const std::vector<double>& y, double q) {
    const int n = static_cast<int>(x.size());
    if (n == 1 || q <= x[0]) return y[0];
    if (q >= x[n - 1]) return y[n - 1];
    const int i = std::clamp(static_cast<int>(std::upper_bound(x.data(), x.data() + n, q) - x.data()) - 1, 0, n - 2);
    const double h = x[i + 1] - x[i], s = (q - x[i]) / h;
    const double m0 = pchip_slope(x, y, i) * h, m1 = pchip_slope(x, y, i + 1) * h;
    const double s2 = s * s, s3 = s2 * s;
    return (2 * s3 - 3 * s2 + 1) * y[i] + (s3 - 2 * s2 + s) * m0 + (-2 * s3 + 3 * s2) * y[i + 1] + (s3 - s2) * m1;
}

// Bracketing index and weight for linear interpolation, clamped to the grid.
std::pair<int, double> linear_locate(const Eigen::VectorXd& x, double q) {
    const int n = static_cast<int>(x.size());
    if (n == 1 || q <= x[0]) return {0, 0.0};
    if (q >= x[n - 1]) return {n - 2, 1.0};
    const int i = std::clamp(static_cast<int>(std::upper_bound(x.data(), x.data() + n, q) - x.data()) - 1, 0, n - 2);
    return {i, (q - x[i]) / (x[i + 1] - x[i])};
}

// ---------------------------------------------------------------------------
// Transition tables

// Tail integrals of one component of the v_u-resolved law of z = ln s_u - ln s
// on a uniform z grid: G0(z) = int_z^inf p, G1(z) = int_z^inf e^y p(y) dy.
struct Table {
    double z0 = 0.0, h = 1.0;
    std::vector<double> G0, G1, p, p1;   // p1 = e^z p
    double m0 = 0.0, m1 = 0.0;

    int size() const { return static_cast<int>(G0.size()); }
    double z_end() const { return z0 + h * (size() - 1); }

    // Cubic Hermite interpolation of a tail integral with exact derivative -dens.
    double tail(const std::vector<double>& G, const std::vector<double>& dens, double c) const {
        if (G.empty()) return 0.0;
        if (c <= z0) return G.front();
        if (c >= z_end()) return 0.0;
        const double f = (c - z0) / h;
        const int k = std::min(static_cast<int>(f), size() - 2);
        const double s = f - k, s2 = s * s, s3 = s2 * s;
        return (2 * s3 - 3 * s2 + 1) * G[k] - (s3 - 2 * s2 + s) * h * dens[k] + (-2 * s3 + 3 * s2) * G[k + 1] -
               (s3 - s2) * h * dens[k + 1];
    }
    double G0_at(double c) const { return tail(G0, p, c); }
    double G1_at(double c) const { return tail(G1, p1, c); }

    // int_{z >= c} p(z) R(z - c) dz for R on a uniform grid over [0, L], zero beyond.
    double band(double c, const std::vector<double>& R, double L) const {
        if (G0.empty() || R.empty() || L <= 0.0) return 0.0;
        const double lo = std::max(c, z0), hi = std::min(c + L, z_end());
        if (hi <= lo) return 0.0;
        const int nr = static_cast<int>(R.size());
        const auto r_at = [&](double xi) {
            const double f = std::clamp(xi / L * (nr - 1), 0.0, static_cast<double>(nr - 1));
            const int k = std::min(static_cast<int>(f), nr - 2);
            return R[k] + (f - k) * (R[k + 1] - R[k]);
        };
        const auto p_at = [&](double z) {
            const double f = std::clamp((z - z0) / h, 0.0, static_cast<double>(size() - 1));
            const int k = std::min(static_cast<int>(f), size() - 2);
            return p[k] + (f - k) * (p[k + 1] - p[k]);
        };
        // Trapezoid over the table nodes inside [lo, hi] plus the partial end cells.
        const int k0 = static_cast<int>(std::ceil((lo - z0) / h - 1e-12));
        const int k1 = static_cast<int>(std::floor((hi - z0) / h + 1e-12));
        if (k1 < k0) return 0.5 * (hi - lo) * (p_at(lo) * r_at(lo - c) + p_at(hi) * r_at(hi - c));
        double acc = 0.0;
        double prev_z = lo, prev_f = p_at(lo) * r_at(lo - c);
        for (int k = k0; k <= k1; ++k) {
            const double z = z0 + k * h;
            const double f = p[k] * r_at(z - c);
            acc += 0.5 * (z - prev_z) * (f + prev_f);
            prev_z = z;
            prev_f = f;
        }
        acc += 0.5 * (hi - prev_z) * (prev_f + p_at(hi) * r_at(hi - c));
        return acc;
    }
};

struct PhiNodes {
    std::vector<double> phi, w;
    std::vector<cd> psi0, psi1;   // transform of the measure and of e^z times it
};

// Gil-Pelaez tabulation on z_k = z0 + k h.
Table tabulate(const PhiNodes& nd, double m0, double m1, double z0, double h, int n) {
    Table t;
    t.z0 = z0;
    t.h = h;
    t.m0 = m0;
    t.m1 = m1;
    t.G0.assign(n, 0.0);
    t.G1.assign(n, 0.0);
    t.p.assign(n, 0.0);
    t.p1.assign(n, 0.0);
    for (std::size_t k = 0; k < nd.phi.size(); ++k) {
        const double phi = nd.phi[k];
        const double w = nd.w[k] / M_PI;
        cd e = std::polar(1.0, -phi * z0);
        const cd step = std::polar(1.0, -phi * h);
        const cd a0 = w * nd.psi0[k], a1 = w * nd.psi1[k];
        for (int j = 0; j < n; ++j) {
            const cd t0 = a0 * e, t1 = a1 * e;
            t.p[j] += t0.real();
            t.p1[j] += t1.real();
            t.G0[j] += t0.imag() / phi;
            t.G1[j] += t1.imag() / phi;
            e *= step;
        }
    }
    for (int j = 0; j < n; ++j) {
        t.G0[j] += 0.5 * m0;
        t.G1[j] += 0.5 * m1;
    }
    return t;
}

std::vector<double> gl_panels(double cut, int panels, std::vector<double>& w) {
    const Rule& r = gauss_legendre(16);
    std::vector<double> x;
    w.clear();
    const double h = cut / panels;
    for (int p = 0; p < panels; ++p)
        for (int k = 0; k < r.nodes.size(); ++k) {
            x.push_back((p + 0.5 * (r.nodes[k] + 1.0)) * h);
            w.push_back(0.5 * h * r.weights[k]);
        }
    return x;
}

// The v_u-resolved transform of z split into the no-jump part
//   spike(phi) = e^{-Lambda tau} e^{-i phi comp tau} h(tau, -phi, v; v_u)
// and the part with at least one jump,
//   rem(phi) = spike(phi) * (exp{tau (l1 M1(phi) + l2 M2(phi))} - 1),
// with M1(phi) = E e^{i phi Y1}, M2(phi) = E e^{-i phi Y2}; phi may be complex.
struct Split {
    const ModelParams& p;
    const JumpSpec &j1, &j2;
    double tau, v, vu, lam, comp;

    cd log_spike(cd phi) const {
        return -lam * tau - I * phi * comp * tau +
               log_h_kernel_t<double>(tau, char_terms_diffusion<double>(-phi, p), v, vu);
    }
    cd jump_expm1(cd phi) const {
        cd s(0.0, 0.0);
        if (j1.active()) s += j1.lambda_tilde * std::exp(I * phi * j1.gamma - 0.5 * phi * phi * j1.delta * j1.delta);
        if (j2.active()) s += j2.lambda_tilde * std::exp(-I * phi * j2.gamma - 0.5 * phi * phi * j2.delta * j2.delta);
        return expm1_c<double>(tau * s);
    }
    cd rem(cd phi) const { return std::exp(log_spike(phi)) * jump_expm1(phi); }
};

struct Moments {
    double mean, sd;
};

// Mean and standard deviation of a measure from its log-transform near zero.
template <class F>
Moments moments_from_log(F&& log_psi, double eps, double fallback_sd) {
    const cd lp = log_psi(eps), lm = log_psi(-eps), l0 = log_psi(0.0);
    const double mean = (lp - lm).imag() / (2.0 * eps);
    const double var = -(lp + lm - 2.0 * l0).real() / (eps * eps);
    if (!std::isfinite(mean) || !(var > 0.0) || !std::isfinite(var)) return {std::isfinite(mean) ? mean : 0.0, fallback_sd};
    return {mean, std::sqrt(var)};
}

struct Pair {
    double u = 0.0, weight = 0.0, vu = 0.0;
    Table spike, rem;
    // Boundary-bound data.
    double a = 0.0;
    std::vector<double> R1, R2;
};

}  // namespace

// ---------------------------------------------------------------------------

double BoundaryCurve::B_at(double time, double var) const {
    if (empty()) throw DomainError("boundary is empty");
    const int nt = static_cast<int>(t.size());
    const auto column = [&](int iv) {
        std::vector<double> y(nt);
        for (int i = 0; i < nt; ++i) y[i] = B(i, iv);
        y[nt - 1] = b_left;
        return pchip(t, y, time);
    };
    if (v.size() == 1) return column(0);
    const auto [j, w] = linear_locate(v, var);
    return (1.0 - w) * column(j) + w * column(j + 1);
}

namespace {

// ln A at grid node (it, iv), with the left limit at maturity.
double log_A_left(const BoundaryCurve& b, int it, int iv) {
    const double B = it == b.t.size() - 1 ? b.b_left : b.B(it, iv);
    return std::log(B) + (b.q1 - b.q2) * b.t[it];
}

}  // namespace

BackJumpTable back_jump_table(const PriceSurface& v_a, const BoundaryCurve& boundary, const ModelParams& p,
                              const JumpSpec& j1, const JumpSpec& j2, const PremiumQuad& pq) {
    if (boundary.empty()) throw DomainError("back-jump table requires a boundary");
    if (v_a.t.size() != boundary.t.size() || v_a.v.size() != boundary.v.size()) {
        throw DomainError("value surface does not cover the boundary grid");
    }
    BackJumpTable tab;
    tab.t = boundary.t;
    tab.v = boundary.v;
    tab.n = std::max(2, pq.xi_nodes);
    tab.L1 = j1.active() ? std::max(0.0, -(j1.gamma - 8.0 * j1.delta)) : 0.0;
    tab.L2 = j2.active() ? std::max(0.0, j2.gamma + 8.0 * j2.delta) : 0.0;
    const std::size_t total = static_cast<std::size_t>(tab.t.size() * tab.v.size()) * tab.n;
    tab.R1.assign(total, 0.0);
    tab.R2.assign(total, 0.0);
    const Rule& gl = gauss_legendre(pq.mark_nodes);
    for (int it = 0; it < tab.t.size(); ++it) {
        const double t = tab.t[it];
        for (int iv = 0; iv < tab.v.size(); ++iv) {
            const double a = log_A_left(boundary, it, iv);
            // D = V^A - intrinsic in the continuation region, zero at and beyond the boundary.
            const auto D = [&](double x) {
                if (x >= a) return 0.0;
                const double s = std::exp(x);
                return std::max(0.0, v_a.value_in_s(it, s, iv) - discounted_intrinsic(t, s, p));
            };
            // E[D(a + xi + sign*Y); sign*Y < -xi] for Y ~ N(gamma, delta^2).
            const auto expect = [&](const JumpSpec& j, double sign, double xi) {
                if (j.delta == 0.0) return sign * j.gamma < -xi ? D(a + xi + sign * j.gamma) : 0.0;
                // Integrate over y = sign * Y on [lo, -xi].
                const double lo = std::min(sign * j.gamma - 8.0 * j.delta, -xi);
                const double hi = -xi;
                if (hi <= lo) return 0.0;
                const auto panel = [&](double l, double h) {
                    double acc = 0.0;
                    const double half = 0.5 * (h - l), mid = 0.5 * (h + l);
                    for (int k = 0; k < gl.nodes.size(); ++k) {
                        const double y = mid + half * gl.nodes[k];
                        const double dens = normal_pdf((y - sign * j.gamma) / j.delta) / j.delta;
                        acc += gl.weights[k] * dens * D(a + xi + y);
                    }
                    return half * acc;
                };
                // Split where the intrinsic value changes sign: the payoff kink at maturity.
                const double kink = (p.q1 - p.q2) * t - a - xi;
                if (kink > lo && kink < hi) return panel(lo, kink) + panel(kink, hi);
                return panel(lo, hi);
            };
            const std::size_t base = (static_cast<std::size_t>(it) * tab.v.size() + iv) * tab.n;
            for (int k = 0; k < tab.n; ++k) {
                if (tab.L1 > 0.0) tab.R1[base + k] = expect(j1, 1.0, tab.L1 * k / (tab.n - 1));
                if (tab.L2 > 0.0) tab.R2[base + k] = expect(j2, -1.0, tab.L2 * k / (tab.n - 1));
            }
        }
    }
    return tab;
}

// ---------------------------------------------------------------------------

struct PremiumKernel::Impl {
    double t = 0.0, v = 0.0;
    ModelParams p;
    JumpSpec j1, j2;
    PremiumQuad pq;
    std::vector<Pair> pairs;
    double mass_min = 1.0, mass_max = 1.0;
    const BackJumpTable* jumps = nullptr;
    bool bound = false;

    void build();
    void build_pair(Pair& pr, double tau);
    PremiumParts eval(double s_tilde, const std::vector<double>* a_override) const;
};

void PremiumKernel::Impl::build_pair(Pair& pr, double tau) {
    const Split sp{p, j1, j2, tau, v, pr.vu, j1.lambda_tilde + j2.lambda_tilde, compensator(j1, j2)};
    const double sig = p.sigma();
    const double guess = std::max(sig * std::sqrt(std::max(v, pr.vu) * tau), 1e-8);
    const double K = pq.window;
    const double tol = pq.envelope_tol;

    // No-jump component: phi grid scaled to its own width.
    const Moments ms = moments_from_log([&](double f) { return sp.log_spike(f); }, 1e-3 / guess, guess);
    const double m0s = std::exp(sp.log_spike(0.0).real());
    const double m1s = std::exp(sp.log_spike(-I).real());
    if (!(m0s > 1e-300)) return;   // variance node with negligible probability
    double cut = 8.0 / ms.sd;
    while (std::exp(sp.log_spike(cut).real()) > tol * m0s && cut < 400.0 / ms.sd) cut *= 1.5;
    const int npts = std::max(9, pq.spike_points);
    const double hs = 2.0 * K * ms.sd / (npts - 1);
    {
        const double cycles = cut * (K * ms.sd + 0.5 * hs) / (2.0 * M_PI);
        PhiNodes nd;
        nd.phi = gl_panels(cut, std::max(2, static_cast<int>(std::ceil(cycles / 3.0)) + 1), nd.w);
        for (double phi : nd.phi) {
            nd.psi0.push_back(std::exp(sp.log_spike(phi)));
            nd.psi1.push_back(std::exp(sp.log_spike(cd(phi, -1.0))));
        }
        pr.spike = tabulate(nd, m0s, m1s, ms.mean - K * ms.sd, hs, npts);
    }

    // Component with at least one jump.
    if (!(j1.active() || j2.active())) return;
    const double m0r = sp.rem(0.0).real();
    if (!(m0r > tol * m0s)) return;
    const double m1r = sp.rem(-I).real();
    const Moments mr = moments_from_log([&](double f) { return std::log(sp.rem(f)); }, 1e-4, ms.sd);
    double dmin = std::numeric_limits<double>::infinity();
    if (j1.active()) dmin = std::min(dmin, j1.delta);
    if (j2.active()) dmin = std::min(dmin, j2.delta);
    const double width = std::sqrt(ms.sd * ms.sd + dmin * dmin);
    double rcut = 8.0 / width;
    while (std::abs(sp.rem(rcut)) > tol * m0s && rcut < 1e5) rcut *= 1.5;
    const double half = K * mr.sd;
    const int nr = std::clamp(static_cast<int>(std::ceil(2.0 * half / (0.25 * width))) + 1, 33, 4097);
    const double hr = 2.0 * half / (nr - 1);
    const double cycles = rcut * (half + 0.5 * hr) / (2.0 * M_PI);
    PhiNodes nd;
    nd.phi = gl_panels(rcut, std::max(2, static_cast<int>(std::ceil(cycles / 3.0)) + 1), nd.w);
    for (double phi : nd.phi) {
        nd.psi0.push_back(sp.rem(phi));
        nd.psi1.push_back(sp.rem(cd(phi, -1.0)));
    }
    pr.rem = tabulate(nd, m0r, m1r, mr.mean - half, hr, nr);
}

void PremiumKernel::Impl::build() {
    if (!(t < p.T)) throw DomainError("premium kernel requires t < T");
    if (!(v > 0.0)) throw DomainError("premium kernel requires v > 0");
    const Rule& ru = gauss_legendre(pq.u_nodes);
    const Rule& rv = gauss_legendre(pq.vu_nodes);
    const double span = p.T - t;
    const double kv = p.kappa_v(), theta = p.v_mean(), om2 = p.omega * p.omega;
    mass_min = std::numeric_limits<double>::infinity();
    mass_max = 0.0;
    for (int iu = 0; iu < ru.nodes.size(); ++iu) {
        // T - u = span * w^2 grades the nodes towards maturity.
        const double w = 0.5 * (ru.nodes[iu] + 1.0);
        const double u = p.T - span * w * w;
        const double wu = 0.5 * ru.weights[iu] * 2.0 * span * w;
        const double tau = u - t;
        const double e = std::exp(-kv * tau);
        const double mean = theta + (v - theta) * e;
        const double var = v * om2 * e * (1.0 - e) / kv + theta * om2 * (1.0 - e) * (1.0 - e) / (2.0 * kv);
        const double sd = std::sqrt(var);
        // sqrt(v_u) is close to normal, so the window is set in that variable.
        const double rm = std::sqrt(mean), rs = 0.5 * sd / rm;
        const double r0 = std::max(rm - pq.vu_width * rs, 1e-3 * rm);
        const double r1 = rm + 1.2 * pq.vu_width * rs;
        double mass = 0.0;
        for (int iv = 0; iv < rv.nodes.size(); ++iv) {
            const double r = 0.5 * (r0 + r1) + 0.5 * (r1 - r0) * rv.nodes[iv];
            Pair pr;
            pr.u = u;
            pr.vu = r * r;
            const double wv = 0.5 * (r1 - r0) * rv.weights[iv] * 2.0 * r;
            pr.weight = wu * wv;
            build_pair(pr, tau);
            mass += wv * (pr.spike.m0 + pr.rem.m0);
            if (!pr.spike.G0.empty()) pairs.push_back(std::move(pr));
        }
        mass_min = std::min(mass_min, mass);
        mass_max = std::max(mass_max, mass);
    }
}

PremiumKernel::PremiumKernel(double t, double v, const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2,
                             const PremiumQuad& pq)
    : impl_(std::make_unique<Impl>()) {
    impl_->t = t;
    impl_->v = v;
    impl_->p = p;
    impl_->j1 = j1;
    impl_->j2 = j2;
    impl_->pq = pq;
    impl_->build();
}

PremiumKernel::~PremiumKernel() = default;
PremiumKernel::PremiumKernel(PremiumKernel&&) noexcept = default;
PremiumKernel& PremiumKernel::operator=(PremiumKernel&&) noexcept = default;

double PremiumKernel::t() const { return impl_->t; }
double PremiumKernel::v() const { return impl_->v; }
double PremiumKernel::variance_mass_min() const { return impl_->mass_min; }
double PremiumKernel::variance_mass_max() const { return impl_->mass_max; }

std::size_t PremiumKernel::bytes() const {
    std::size_t b = sizeof(Impl);
    for (const Pair& pr : impl_->pairs) {
        b += sizeof(Pair) + 4 * sizeof(double) * (pr.spike.G0.size() + pr.rem.G0.size()) +
             sizeof(double) * (pr.R1.size() + pr.R2.size());
    }
    return b;
}

void PremiumKernel::bind(const BoundaryCurve& boundary, const BackJumpTable* jumps) {
    if (boundary.empty()) throw DomainError("premium requires a boundary");
    if (boundary.t[boundary.t.size() - 1] < impl_->p.T - 1e-12 || boundary.t[0] > impl_->t + 1e-12) {
        throw DomainError("boundary does not cover [t, T]");
    }
    impl_->jumps = jumps;
    for (Pair& pr : impl_->pairs) {
        pr.a = std::log(boundary.A_at(pr.u, pr.vu));
        pr.R1.clear();
        pr.R2.clear();
        if (!jumps) continue;
        const auto [it, wt] = linear_locate(jumps->t, pr.u);
        const auto [iv, wv] = linear_locate(jumps->v, pr.vu);
        const int nt = static_cast<int>(jumps->t.size()), nv = static_cast<int>(jumps->v.size());
        const int it1 = std::min(it + 1, nt - 1), iv1 = std::min(iv + 1, nv - 1);
        const auto blend = [&](auto get) {
            std::vector<double> out(jumps->n);
            for (int k = 0; k < jumps->n; ++k) {
                out[k] = (1 - wt) * ((1 - wv) * get(it, iv, k) + wv * get(it, iv1, k)) +
                         wt * ((1 - wv) * get(it1, iv, k) + wv * get(it1, iv1, k));
            }
            return out;
        };
        if (jumps->L1 > 0.0) pr.R1 = blend([&](int a, int b, int k) { return jumps->r1(a, b, k); });
        if (jumps->L2 > 0.0) pr.R2 = blend([&](int a, int b, int k) { return jumps->r2(a, b, k); });
    }
    impl_->bound = true;
}

PremiumParts PremiumKernel::Impl::eval(double s_tilde, const std::vector<double>* a_override) const {
    if (!bound) throw DomainError("premium kernel evaluated before a boundary was bound");
    if (!(s_tilde > 0.0)) throw DomainError("premium requires a positive yield ratio");
    const double x0 = std::log(s_tilde);
    PremiumParts out;
    const double L1 = jumps ? jumps->L1 : 0.0, L2 = jumps ? jumps->L2 : 0.0;
    for (std::size_t n = 0; n < pairs.size(); ++n) {
        const Pair& pr = pairs[n];
        const double c = (a_override ? (*a_override)[n] : pr.a) - x0;
        const double g0 = pr.spike.G0_at(c) + pr.rem.G0_at(c);
        const double g1 = pr.spike.G1_at(c) + pr.rem.G1_at(c);
        out.diffusion += pr.weight * (p.q1 * std::exp(-p.q1 * pr.u) * s_tilde * g1 - p.q2 * std::exp(-p.q2 * pr.u) * g0);
        if (!pr.R1.empty()) out.jump1 += pr.weight * (pr.spike.band(c, pr.R1, L1) + pr.rem.band(c, pr.R1, L1));
        if (!pr.R2.empty()) out.jump2 += pr.weight * (pr.spike.band(c, pr.R2, L2) + pr.rem.band(c, pr.R2, L2));
    }
    return out;
}

PremiumParts PremiumKernel::evaluate(double s_tilde) const { return impl_->eval(s_tilde, nullptr); }

std::vector<double> PremiumKernel::moved_log_A(const BoundaryCurve& boundary, int it, int iv, double B) const {
    BoundaryCurve moved = boundary;
    moved.B(it, iv) = B;
    // Monotone cubic slopes reach two intervals, so only nearby time nodes change.
    const int last = static_cast<int>(boundary.t.size()) - 1;
    const double lo = boundary.t[std::max(it - 2, 0)], hi = boundary.t[std::min(it + 2, last)];
    std::vector<double> a(impl_->pairs.size());
    for (std::size_t n = 0; n < a.size(); ++n) {
        const Pair& pr = impl_->pairs[n];
        a[n] = pr.u >= lo && pr.u <= hi ? std::log(moved.A_at(pr.u, pr.vu)) : pr.a;
    }
    return a;
}

PremiumParts PremiumKernel::evaluate_moved(double s_tilde, const std::vector<double>& log_A) const {
    if (log_A.size() != impl_->pairs.size()) throw DomainError("moved boundary does not match the kernel");
    return impl_->eval(s_tilde, &log_A);
}

// ---------------------------------------------------------------------------

ResolvedTail p1a_p2a(double tau, double z, double v, double v_u, double K, const ModelParams& p,
                     const QuadSpec& quad) {
    if (!(K > 0.0) || !(z > 0.0)) throw DomainError("p1a_p2a requires z > 0 and K > 0");
    if (!(tau > 0.0) || !(v > 0.0) || !(v_u > 0.0)) throw DomainError("p1a_p2a requires tau, v, v_u > 0");
    ResolvedTail out;
    out.mass2 = std::exp(log_h_kernel_t<double>(tau, char_terms_diffusion<double>(cd(0.0), p), v, v_u)).real();
    out.mass1 = std::exp(log_h_kernel_t<double>(tau, char_terms_diffusion<double>(I, p), v, v_u)).real();
    const double lk = std::log(K);
    QuadSpec q = quad;
    // Tolerances follow the mass, with a floor where the v_u density is negligible.
    q.envelope_tol = quad.envelope_tol * std::max(out.mass2, 1e-8);
    q.abs_tol = quad.abs_tol * std::max(out.mass2, 1e-8);
    const auto g2 = [&](double phi) {
        const cd f = f2_f21_kernels(tau, z, v, phi, v_u, p).f2 * std::exp(-I * phi * lk);
        return cd(f.imag() / phi, 0.0);
    };
    const auto g1 = [&](double phi) {
        const cd f = f2_f21_kernels(tau, z, v, phi, v_u, p).f21 * std::exp(-I * phi * lk);
        return cd(f.imag() / phi, 0.0);
    };
    const HalfLineResult r2 = fourier_half_line(g2, q);
    const HalfLineResult r1 = fourier_half_line(g1, q);
    out.P2 = 0.5 * out.mass2 + r2.value / M_PI;
    out.P1 = 0.5 * out.mass1 + r1.value / M_PI;
    // The reflected integrand f(-phi) e^{i phi ln K} is the conjugate, so the
    // two-sided combination is real; the residue measures the departure.
    const auto conj_gap = [&](double phi) {
        const F2Pair a = f2_f21_kernels(tau, z, v, phi, v_u, p), b = f2_f21_kernels(tau, z, v, -phi, v_u, p);
        return std::max(std::abs(a.f2 - std::conj(b.f2)), std::abs(a.f21 - std::conj(b.f21)));
    };
    out.imag_residue = std::max({conj_gap(0.5), conj_gap(2.0), conj_gap(10.0)});
    return out;
}

PremiumParts premium_diffusion_parts(double t, double s_tilde, double v, const BoundaryCurve& boundary,
                                     const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2,
                                     const PremiumQuad& pq) {
    PremiumKernel k(t, v, p, j1, j2, pq);
    k.bind(boundary, nullptr);
    return k.evaluate(s_tilde);
}

double premium_diffusion(double t, double s_tilde, double v, const BoundaryCurve& boundary, const ModelParams& p,
                         const JumpSpec& j1, const JumpSpec& j2, const PremiumQuad& pq) {
    return premium_diffusion_parts(t, s_tilde, v, boundary, p, j1, j2, pq).diffusion;
}

JumpPremium premium_jumps(double t, double s_tilde, double v, const BoundaryCurve& boundary,
                          const PriceSurface& v_a_surface, const ModelParams& p, const JumpSpec& j1,
                          const JumpSpec& j2, const PremiumQuad& pq) {
    if (v_a_surface.t.size() == 0 || v_a_surface.t[0] > t + 1e-12 ||
        v_a_surface.t[v_a_surface.t.size() - 1] < p.T - 1e-12) {
        throw DomainError("value surface does not cover [t, T]");
    }
    if (!(j1.active() || j2.active())) return {};
    const BackJumpTable tab = back_jump_table(v_a_surface, boundary, p, j1, j2, pq);
    PremiumKernel k(t, v, p, j1, j2, pq);
    k.bind(boundary, &tab);
    const PremiumParts parts = k.evaluate(s_tilde);
    return {parts.jump1, parts.jump2};
}

double inhomogeneous_term(double t, double s_tilde, double v, const PriceSurface& v_a_surface,
                          const BoundaryCurve& boundary, const ModelParams& p, const JumpSpec& j1,
                          const JumpSpec& j2, const PremiumQuad& pq) {
    if (boundary.empty()) throw DomainError("inhomogeneous term requires a boundary");
    const bool at_maturity = t >= p.T;
    const double A = at_maturity ? boundary.b_left * std::exp((p.q1 - p.q2) * p.T) : boundary.A_at(t, v);
    if (s_tilde < A) return 0.0;
    double xi_term = p.q1 * std::exp(-p.q1 * t) * s_tilde - p.q2 * std::exp(-p.q2 * t);
    if (!(j1.active() || j2.active())) return xi_term;
    const BackJumpTable tab = back_jump_table(v_a_surface, boundary, p, j1, j2, pq);
    const auto [it, wt] = linear_locate(tab.t, t);
    const auto [iv, wv] = linear_locate(tab.v, v);
    const int it1 = std::min<int>(it + 1, tab.t.size() - 1), iv1 = std::min<int>(iv + 1, tab.v.size() - 1);
    const double xi = std::log(s_tilde / A);
    const auto eval = [&](auto get, double L) {
        if (L <= 0.0 || xi > L) return 0.0;
        const double f = xi / L * (tab.n - 1);
        const int k = std::min(static_cast<int>(f), tab.n - 2);
        const auto at = [&](int a, int b) { return get(a, b, k) + (f - k) * (get(a, b, k + 1) - get(a, b, k)); };
        return (1 - wt) * ((1 - wv) * at(it, iv) + wv * at(it, iv1)) + wt * ((1 - wv) * at(it1, iv) + wv * at(it1, iv1));
    };
    xi_term -= j1.lambda_tilde * eval([&](int a, int b, int k) { return tab.r1(a, b, k); }, tab.L1);
    xi_term -= j2.lambda_tilde * eval([&](int a, int b, int k) { return tab.r2(a, b, k); }, tab.L2);
    return xi_term;
}

// ---------------------------------------------------------------------------

namespace {

// Runs f(k) for k in [0, n) on `workers` threads; results must not depend on
// scheduling. The first exception is rethrown.
template <class F>
void parallel_for(int n, int workers, F&& f) {
    workers = std::clamp(workers, 1, std::max(1, n));
    if (workers == 1) {
        for (int k = 0; k < n; ++k) f(k);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const int k = next.fetch_add(1);
                if (k >= n) return;
                try {
                    f(k);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!err) err = std::current_exception();
                    next.store(n);
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

struct NodeUpdate {
    double B = 1.0;
    double residual = 0.0;
    bool capped = false;
};

}  // namespace

AmericanSolution solve_american(const MarketState& state, const ModelParams& p, const JumpSpec& j1,
                                const JumpSpec& j2, const AmericanOptions& opts) {
    const ValidationReport rep = validate_params(p, j1, j2);
    if (!rep.ok()) throw DomainError("invalid parameters: " + rep.violations.front().name);
    const ValidationReport srep = validate_state(state, p);
    if (!srep.ok()) throw DomainError("invalid state: " + srep.violations.front().name);
    const AmericanGrids& g = opts.grids;
    if (g.time_nodes < 3 || g.var_nodes < 1 || g.s_nodes < 8) throw DomainError("American grids too small");

    AmericanSolution sol;
    const double t0 = state.t, T = p.T, s0 = state.s_tilde(p), K_T = (p.q1 - p.q2) * T;
    const int M = g.time_nodes - 1;

    Eigen::VectorXd tg(M + 1);
    for (int i = 0; i <= M; ++i) {
        const double r = 1.0 - static_cast<double>(i) / M;
        tg[i] = T - (T - t0) * r * r;
    }
    tg[M] = T;
    Eigen::VectorXd vg(g.var_nodes);
    for (int j = 0; j < g.var_nodes; ++j) {
        const double f = g.var_nodes == 1 ? 0.0 : static_cast<double>(j) / (g.var_nodes - 1);
        vg[j] = p.eta * g.var_lo * std::pow(g.var_hi / g.var_lo, f);
    }
    const bool never = !(p.q1 > 0.0);
    const BoundaryLimitResult bl = boundary_limit(p.q1, p.q2, j1, j2);
    sol.b_limit = bl.b_limit;
    // The grid reaches above the maturity boundary; without early exercise it only needs the spot.
    const double b_top = never || !std::isfinite(bl.b_limit) ? 1.0 : bl.b_limit;
    const double top = std::max(s0, b_top * std::max(1.0, std::exp(K_T))) * std::exp(g.s_log_above);
    const double bottom = s0 * std::exp(-g.s_log_halfwidth);
    Eigen::VectorXd sg(g.s_nodes);
    for (int k = 0; k < g.s_nodes; ++k) sg[k] = bottom * std::pow(top / bottom, static_cast<double>(k) / (g.s_nodes - 1));

    // European surface from per-node slices, which also price off-grid ratios
    // exactly during root finding; the maturity slice is the payoff.
    EuropeanEngine engine(p, j1, j2, opts.european);
    const int nv = static_cast<int>(vg.size());
    std::vector<EuropeanSlice> slices(static_cast<std::size_t>(M) * nv);
    PriceSurface eu;
    eu.t = tg;
    eu.s = sg;
    eu.v = vg;
    eu.values.assign(static_cast<std::size_t>(tg.size() * sg.size() * vg.size()), 0.0);
    {
        const std::vector<double> ratios(sg.data(), sg.data() + sg.size());
        parallel_for(M * nv, opts.workers, [&](int n) {
            const int it = n / nv, iv = n % nv;
            slices[n] = engine.slice(tg[it], vg[iv], ratios);
            for (int k = 0; k < sg.size(); ++k) eu.at(it, k, iv) = slices[n].v_tilde(sg[k]);
        });
        for (int k = 0; k < sg.size(); ++k)
            for (int j = 0; j < nv; ++j) eu.at(M, k, j) = std::max(0.0, discounted_intrinsic(T, sg[k], p));
    }
    sol.european = eu;
    MarketState st = state;
    const PriceResult e0 = engine.price(st);
    sol.european_v_tilde = e0.v_tilde;
    sol.european_nominal = e0.value;
    const double to_nominal = state.S2 * std::exp(p.q2 * state.t);

    if (never) {
        // Early exercise is never optimal: the American claim is the European one.
        sol.value = eu;
        sol.v_tilde = e0.v_tilde;
        sol.value_nominal = e0.value;
        sol.diagnostics.converged = true;
        return sol;
    }

    BoundaryCurve bc;
    bc.t = tg;
    bc.v = vg;
    bc.q1 = p.q1;
    bc.q2 = p.q2;
    bc.b_left = bl.b_limit;
    bc.B = Eigen::MatrixXd::Constant(M + 1, vg.size(), bl.b_limit);
    bc.B.row(M).setOnes();

    const bool jumpy = j1.active() || j2.active();
    const int nodes = M * static_cast<int>(vg.size());
    std::vector<std::optional<PremiumKernel>> cache(nodes);
    std::atomic<std::size_t> cached_bytes{0};
    bool cache_full = false;
    std::mutex cache_mu;
    const auto kernel_for = [&](int n, std::optional<PremiumKernel>& local) -> PremiumKernel& {
        if (cache[n]) return *cache[n];
        PremiumKernel k(tg[n / vg.size()], vg[n % vg.size()], p, j1, j2, opts.premium);
        {
            std::lock_guard<std::mutex> lock(cache_mu);
            if (!cache_full && cached_bytes + k.bytes() <= opts.cache_bytes) {
                cached_bytes += k.bytes();
                cache[n].emplace(std::move(k));
                return *cache[n];
            }
            cache_full = true;
        }
        local.emplace(std::move(k));
        return *local;
    };

    PriceSurface va = eu;
    std::vector<NodeUpdate> upd(nodes);
    double mass_min = std::numeric_limits<double>::infinity(), mass_max = 0.0;
    std::mutex mass_mu;

    // One sweep runs backwards in time so that later rows are already updated
    // when a row is solved. At each node the value-matching equation is solved
    // with the node's own boundary value moved along with the trial ratio, so
    // the near-time part of the premium responds to the root. The jump terms
    // use the previous value surface, and nodes in a row do not see each
    // other's updates until the row is complete.
    const auto solve_node = [&](int it, int iv, const BackJumpTable* table, double relax, PriceSurface& next) {
        const int n = it * static_cast<int>(vg.size()) + iv;
        const double t = tg[it];
        std::optional<PremiumKernel> local;
        PremiumKernel& k = kernel_for(n, local);
        {
            std::lock_guard<std::mutex> lock(mass_mu);
            mass_min = std::min(mass_min, k.variance_mass_min());
            mass_max = std::max(mass_max, k.variance_mass_max());
        }
        k.bind(bc, table);
        const double growth = std::exp((p.q1 - p.q2) * t);
        const auto gap = [&](double s) {
            const std::vector<double> a = k.moved_log_A(bc, it, iv, s / growth);
            return slices[n].v_tilde(s) + k.evaluate_moved(s, a).total(j1, j2) - discounted_intrinsic(t, s, p);
        };
        NodeUpdate u;
        const double lo = growth;   // B = 1
        if (gap(lo) <= 0.0) {
            u.B = 1.0;
        } else {
            // Above the root the gap is nearly flat (the moved node only bends
            // the boundary over one time interval), so the first sign change is
            // located by a scan whose steps start at a fraction of the local
            // diffusion width and grow slowly.
            const double dt = tg[it + 1] - t;
            double step = std::max(0.25 * p.sigma() * std::sqrt(vg[iv] * dt), 1e-4);
            const double cap = sg[sg.size() - 1] * 1.5;
            double a = lo, b = lo * std::exp(step);
            double gb = gap(b);
            while (gb > 0.0 && b < cap) {
                a = b;
                step *= 1.1;
                b = std::min(b * std::exp(step), cap);
                gb = gap(b);
            }
            if (gb > 0.0) {
                u.B = cap / growth;
                u.capped = true;
            } else {
                u.B = brent_root(gap, a, b, opts.root_tol * growth) / growth;
            }
        }
        if (!u.capped) u.B = bc.B(it, iv) + relax * (u.B - bc.B(it, iv));
        upd[n] = u;
        const std::vector<double> a = k.moved_log_A(bc, it, iv, u.B);
        const double A = u.B * growth;
        for (int ks = 0; ks < sg.size(); ++ks) {
            const double s = sg[ks];
            next.at(it, ks, iv) = s < A ? eu.at(it, ks, iv) + k.evaluate_moved(s, a).total(j1, j2)
                                        : discounted_intrinsic(t, s, p);
        }
    };

    AmericanDiagnostics& dg = sol.diagnostics;
    // Under-relaxation, halved whenever the boundary movement grows; it damps
    // the two-sweep oscillations that appear where value matching is flat.
    double theta = 1.0, last_move = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= opts.max_sweeps; ++k) {
        std::optional<BackJumpTable> table;
        if (jumpy) table.emplace(back_jump_table(va, bc, p, j1, j2, opts.premium));
        PriceSurface next = va;
        double move = 0.0;
        int capped = 0;
        for (int it = M - 1; it >= 0; --it) {
            parallel_for(nv, opts.workers, [&](int iv) { solve_node(it, iv, table ? &*table : nullptr, theta, next); });
            for (int iv = 0; iv < nv; ++iv) {
                const NodeUpdate& u = upd[it * nv + iv];
                move = std::max(move, std::abs(u.B - bc.B(it, iv)));
                bc.B(it, iv) = u.B;
                capped += u.capped;
            }
        }
        va = std::move(next);
        dg.sweeps = k;
        dg.max_movement = move;
        dg.capped_nodes = capped;
        dg.movement_history.push_back(move);
        if (move < opts.tol) {
            dg.converged = true;
            break;
        }
        if (move > last_move) theta = std::max(0.5 * theta, 0.125);
        last_move = move;
    }
    if (!dg.converged) {
        throw IterationError("American fixed point did not converge; last boundary movement " +
                                 std::to_string(dg.max_movement),
                             dg.sweeps, dg.max_movement);
    }
    // Value-matching residual with the converged boundary bound into the premium.
    {
        std::optional<BackJumpTable> table;
        if (jumpy) table.emplace(back_jump_table(va, bc, p, j1, j2, opts.premium));
        std::vector<double> res(nodes, 0.0);
        parallel_for(nodes, opts.workers, [&](int n) {
            const int it = n / nv, iv = n % nv;
            if (!(bc.B(it, iv) > 1.0) || upd[n].capped) return;
            std::optional<PremiumKernel> local;
            PremiumKernel& k = kernel_for(n, local);
            k.bind(bc, table ? &*table : nullptr);
            const double A = bc.A(it, iv);
            res[n] = std::abs(slices[n].v_tilde(A) + k.evaluate(A).total(j1, j2) - discounted_intrinsic(tg[it], A, p));
        });
        for (double r : res) dg.value_matching_residual = std::max(dg.value_matching_residual, r);
    }
    dg.min_variance_mass = mass_min;
    dg.max_variance_mass = mass_max;

    sol.boundary = bc;
    sol.value = va;

    // Query state.
    std::optional<BackJumpTable> table;
    if (jumpy) table.emplace(back_jump_table(va, bc, p, j1, j2, opts.premium));
    const double A0 = bc.A_at(t0, state.v);
    if (s0 >= A0) {
        sol.exercise_now = true;
        sol.v_tilde = discounted_intrinsic(t0, s0, p);
    } else {
        PremiumKernel k0(t0, state.v, p, j1, j2, opts.premium);
        k0.bind(bc, table ? &*table : nullptr);
        sol.premium = k0.evaluate(s0);
        sol.v_tilde = e0.v_tilde + sol.premium.total(j1, j2);
    }
    sol.value_nominal = to_nominal * sol.v_tilde;
    return sol;
}

}  // namespace exch
