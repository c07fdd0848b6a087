#include "exch/european.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace exch {

namespace {

const std::complex<double> I(0.0, 1.0);

// Clamp a probability into [0, 1], recording the overshoot.
double clamp_prob(double p, int& clamped, double& max_clamp) {
    if (p < 0.0 || p > 1.0) {
        ++clamped;
        max_clamp = std::max(max_clamp, p < 0.0 ? -p : p - 1.0);
        return std::clamp(p, 0.0, 1.0);
    }
    return p;
}

}  // namespace

TailProbabilities p1e_p2e(double tau, double z, double v, double K, const ModelParams& p, const QuadSpec& quad) {
    if (!(z > 0.0) || !(v > 0.0)) throw DomainError("p1e_p2e requires z > 0 and v > 0");
    TailProbabilities out;
    const double lz = std::log(z);
    if (tau == 0.0) {
        out.P1 = out.P2 = lz > K ? 1.0 : (lz == K ? 0.5 : 0.0);
        return out;
    }
    const auto g2 = [&](double phi) {
        const std::complex<double> f = f_kernel(tau, z, v, phi, p) * std::exp(-I * phi * K);
        return std::complex<double>(f.imag() / phi, 0.0);
    };
    const auto g1 = [&](double phi) {
        const std::complex<double> f = f1_kernel(tau, z, v, phi, p) * std::exp(-I * phi * K);
        return std::complex<double>(f.imag() / phi, 0.0);
    };
    const HalfLineResult r2 = fourier_half_line(g2, quad);
    const HalfLineResult r1 = fourier_half_line(g1, quad);
    double max_clamp = 0.0;
    out.P2 = clamp_prob(0.5 + r2.value / M_PI, out.clamped, max_clamp);
    out.P1 = clamp_prob(0.5 + r1.value / M_PI, out.clamped, max_clamp);
    out.error_estimate = std::max(r1.error_estimate, r2.error_estimate) / M_PI;
    return out;
}

double margrabe_closed_form(double S1, double S2, double sigma_total, double tau, double q1, double q2) {
    if (!(sigma_total > 0.0) || !(tau > 0.0)) throw DomainError("Margrabe formula requires sigma > 0 and tau > 0");
    const double sd = sigma_total * std::sqrt(tau);
    const double d1 = (std::log(S1 / S2) + (q2 - q1) * tau) / sd + 0.5 * sd;
    const double d2 = d1 - sd;
    return S1 * std::exp(-q1 * tau) * normal_cdf(d1) - S2 * std::exp(-q2 * tau) * normal_cdf(d2);
}

EuropeanEngine::EuropeanEngine(const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2, EuropeanOptions opts)
    : p_(p), j1_(j1), j2_(j2), opts_(opts) {}

double EuropeanEngine::find_cut(double tau, double v) const {
    const auto envelope = [&](double phi) {
        const AffineBD b2 = affine_BD(tau, char_terms_diffusion<double>(-phi, p_));
        const AffineBD b1 = affine_BD(tau, char_terms_diffusion<double>(-(phi - I), p_));
        return std::max(std::exp((b2.B + b2.D * v).real()), std::exp((b1.B + b1.D * v).real())) / phi;
    };
    double lo = 1.0;
    while (lo < opts_.quad.phi_max) {
        const double hi = std::min(2.0 * lo, opts_.quad.phi_max);
        double env = 0.0;
        for (int k = 0; k <= 16; ++k) env = std::max(env, envelope(lo + (hi - lo) * k / 16.0));
        if (env < opts_.quad.envelope_tol) return lo;
        lo = hi;
    }
    throw NumericsError("European integrand does not decay before phi_max", envelope(opts_.quad.phi_max));
}

EuropeanEngine::Nodes EuropeanEngine::build_nodes(double tau, double v, int panels) const {
    Nodes nd;
    nd.tau = tau;
    nd.v = v;
    nd.phi_cut = find_cut(tau, v);
    const Rule& r = gauss_legendre(opts_.quad.points_per_panel);
    const double h = nd.phi_cut / panels;
    const std::size_t n = static_cast<std::size_t>(panels) * r.nodes.size();
    nd.phi.reserve(n);
    nd.w.reserve(n);
    nd.F1.reserve(n);
    nd.F2.reserve(n);
    for (int pnl = 0; pnl < panels; ++pnl) {
        for (int k = 0; k < r.nodes.size(); ++k) {
            const double phi = (pnl + 0.5 * (r.nodes[k] + 1.0)) * h;
            const AffineBD b2 = affine_BD(tau, char_terms_diffusion<double>(-phi, p_));
            const AffineBD b1 = affine_BD(tau, char_terms_diffusion<double>(-(phi - I), p_));
            nd.phi.push_back(phi);
            nd.w.push_back(0.5 * h * r.weights[k]);
            nd.F2.push_back(std::exp(b2.B + b2.D * v));
            nd.F1.push_back(std::exp(b1.B + b1.D * v));
        }
    }
    return nd;
}

EuropeanEngine::SeriesPlan EuropeanEngine::plan(double tau, int extra) const {
    SeriesPlan sp;
    const double r1 = j1_.lambda_tilde * tau, r2 = j2_.lambda_tilde * tau;
    const double r1t = r1 * (1.0 + j1_.kappa_up()), r2t = r2 * (1.0 + j2_.kappa_down());
    const auto order = [&](double rate) {
        return static_cast<int>(std::ceil(rate + 10.0 * std::sqrt(rate) + 5.0)) + extra;
    };
    sp.M = j1_.active() ? order(std::max(r1, r1t)) : 0;
    sp.N = j2_.active() ? order(std::max(r2, r2t)) : 0;
    const auto weights = [](double rate, int n) {
        Eigen::VectorXd w(n + 1);
        double lw = -rate;
        for (int k = 0; k <= n; ++k) {
            if (k > 0) lw += std::log(rate) - std::log(static_cast<double>(k));
            w[k] = rate > 0.0 ? std::exp(lw) : (k == 0 ? 1.0 : 0.0);
        }
        return w;
    };
    sp.w1 = weights(r1, sp.M);
    sp.w2 = weights(r2, sp.N);
    const Eigen::VectorXd w1t = weights(r1t, sp.M), w2t = weights(r2t, sp.N);
    sp.bound_q2 = std::max(0.0, 1.0 - sp.w1.sum() * sp.w2.sum());
    sp.bound_q1 = std::max(0.0, 1.0 - w1t.sum() * w2t.sum());
    return sp;
}

void EuropeanEngine::evaluate(const Nodes& nd, const SeriesPlan& sp, double s_tilde, PriceResult& out) const {
    const double tau = nd.tau;
    const double K = (p_.q1 - p_.q2) * p_.T;
    const double lz0 = std::log(s_tilde) - compensator(j1_, j2_) * tau;
    const double k1 = 1.0 + j1_.kappa_up(), k2 = 1.0 + j2_.kappa_down();
    const double e1 = std::exp(-j1_.lambda_tilde * j1_.kappa_up() * tau);
    const double e2 = std::exp(-j2_.lambda_tilde * j2_.kappa_down() * tau);
    double q1 = 0.0, q2 = 0.0;
    const std::size_t n = nd.phi.size();
    double pw1 = e1;
    for (int m = 0; m <= sp.M; ++m) {
        if (m > 0) pw1 *= k1;
        double pw2 = e2;
        for (int nn = 0; nn <= sp.N; ++nn) {
            if (nn > 0) pw2 *= k2;
            const double w2 = sp.w1[m] * sp.w2[nn];
            const double w1 = w2 * pw1 * pw2;   // tilted weight
            if (w1 < 1e-18 && w2 < 1e-18) continue;
            const double mu = m * j1_.gamma - nn * j2_.gamma;
            const double s2 = m * j1_.delta * j1_.delta + nn * j2_.delta * j2_.delta;
            const double a2 = lz0 + mu - K, a1 = a2 + s2;
            double i1 = 0.0, i2 = 0.0;
            // The mark-variance factor e^{-phi^2 s2 / 2} truncates the integral early.
            const double phi_lim = s2 > 0.0 ? std::sqrt(90.0 / s2) : std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < n; ++k) {
                const double phi = nd.phi[k];
                if (phi > phi_lim) continue;
                const double damp = nd.w[k] * std::exp(-0.5 * phi * phi * s2) / phi;
                i2 += damp * (nd.F2[k] * std::polar(1.0, phi * a2)).imag();
                i1 += damp * (nd.F1[k] * std::polar(1.0, phi * a1)).imag();
            }
            const double P1 = clamp_prob(0.5 + i1 / M_PI, out.clamped, out.max_clamp);
            const double P2 = clamp_prob(0.5 + i2 / M_PI, out.clamped, out.max_clamp);
            q1 += w1 * P1;
            q2 += w2 * P2;
        }
    }
    out.q_hat_1 = q1;
    out.q_hat_2 = q2;
    out.v_tilde = std::exp(-p_.q1 * p_.T) * s_tilde * q1 - std::exp(-p_.q2 * p_.T) * q2;
    out.terms_m = sp.M;
    out.terms_n = sp.N;
    out.truncation_bound = std::exp(-p_.q1 * p_.T) * s_tilde * sp.bound_q1 + std::exp(-p_.q2 * p_.T) * sp.bound_q2;
    out.phi_cut = nd.phi_cut;
    out.nodes = static_cast<int>(n);
}

std::vector<PriceResult> EuropeanEngine::converge(double t, double v, const std::vector<double>& s_tilde, Nodes& nd,
                                                  SeriesPlan& sp) const {
    const double tau = p_.T - t;
    if (!(tau > 0.0)) throw DomainError("European pricing requires t < T");
    if (!(v > 0.0)) throw DomainError("European pricing requires v > 0");
    std::vector<PriceResult> coarse(s_tilde.size()), fine(s_tilde.size());

    // Poisson truncation: extend until the neglected mass is negligible for every ratio.
    int extra = 0;
    sp = plan(tau, extra);
    int panels = std::max(1, opts_.quad.panels);
    nd = build_nodes(tau, v, panels);
    for (std::size_t i = 0; i < s_tilde.size(); ++i) evaluate(nd, sp, s_tilde[i], coarse[i]);
    for (int guard = 0; guard < 20; ++guard) {
        bool ok = true;
        for (const auto& r : coarse) {
            if (r.truncation_bound > std::max(opts_.truncation_tol * std::abs(r.v_tilde), 1e-15)) ok = false;
        }
        if (ok) break;
        extra += std::max(4, (sp.M + sp.N) / 4);
        sp = plan(tau, extra);
        for (std::size_t i = 0; i < s_tilde.size(); ++i) evaluate(nd, sp, s_tilde[i], coarse[i]);
    }

    for (int level = 0; level < opts_.max_refinements; ++level) {
        panels *= 2;
        nd = build_nodes(tau, v, panels);
        double worst = 0.0;
        bool ok = true;
        for (std::size_t i = 0; i < s_tilde.size(); ++i) {
            fine[i] = PriceResult{};
            evaluate(nd, sp, s_tilde[i], fine[i]);
            const double diff = std::abs(fine[i].v_tilde - coarse[i].v_tilde) +
                                std::abs(fine[i].q_hat_1 - coarse[i].q_hat_1) +
                                std::abs(fine[i].q_hat_2 - coarse[i].q_hat_2);
            fine[i].quadrature_error_estimate = diff;
            worst = std::max(worst, diff);
            if (diff > opts_.quad.abs_tol + opts_.quad.rel_tol * std::abs(fine[i].v_tilde)) ok = false;
        }
        std::swap(coarse, fine);
        if (ok) return coarse;
        (void)worst;
    }
    double worst = 0.0;
    for (const auto& r : coarse) worst = std::max(worst, r.quadrature_error_estimate);
    throw NumericsError("European quadrature did not converge", worst);
}

std::vector<PriceResult> EuropeanEngine::price_ratios(double t, double v, const std::vector<double>& s_tilde) const {
    Nodes nd;
    SeriesPlan sp;
    return converge(t, v, s_tilde, nd, sp);
}

struct EuropeanSlice::State {
    const EuropeanEngine* engine = nullptr;
    EuropeanEngine::Nodes nodes;
    EuropeanEngine::SeriesPlan plan;
};

EuropeanSlice::EuropeanSlice() = default;
EuropeanSlice::~EuropeanSlice() = default;
EuropeanSlice::EuropeanSlice(EuropeanSlice&&) noexcept = default;
EuropeanSlice& EuropeanSlice::operator=(EuropeanSlice&&) noexcept = default;

double EuropeanSlice::v_tilde(double s_tilde) const {
    if (!state_) throw DomainError("European slice is empty");
    if (!(s_tilde > 0.0)) throw DomainError("European pricing requires a positive yield ratio");
    PriceResult r;
    state_->engine->evaluate(state_->nodes, state_->plan, s_tilde, r);
    return r.v_tilde;
}

EuropeanSlice EuropeanEngine::slice(double t, double v, const std::vector<double>& calibration) const {
    EuropeanSlice out;
    out.state_ = std::make_unique<EuropeanSlice::State>();
    out.state_->engine = this;
    converge(t, v, calibration, out.state_->nodes, out.state_->plan);
    return out;
}

PriceResult EuropeanEngine::price(const MarketState& state) const {
    const ValidationReport rep = validate_state(state, p_);
    if (!rep.ok()) throw DomainError("invalid market state: " + rep.violations.front().detail);
    const double s = state.s_tilde(p_);
    PriceResult r = price_ratios(state.t, state.v, {s}).front();
    const double tau = p_.T - state.t;
    r.value = state.S1 * std::exp(-p_.q1 * tau) * r.q_hat_1 - state.S2 * std::exp(-p_.q2 * tau) * r.q_hat_2;
    if (r.value < 0.0 && r.value > -1e-12 * (state.S1 + state.S2)) r.value = 0.0;
    return r;
}

double EuropeanEngine::v_tilde_folded(double t, double s_tilde, double v) const {
    const double tau = p_.T - t;
    const double K = (p_.q1 - p_.q2) * p_.T;
    const double a = std::log(s_tilde) - K;
    const auto integrate = [&](int panels) {
        const Nodes nd = build_nodes(tau, v, panels);
        double i1 = 0.0, i2 = 0.0;
        for (std::size_t k = 0; k < nd.phi.size(); ++k) {
            const double phi = nd.phi[k];
            const std::complex<double> j2 = std::exp(jump_log_cf(tau, phi, j1_, j2_));
            const std::complex<double> j1 = std::exp(jump_log_cf(tau, std::complex<double>(phi, -1.0), j1_, j2_));
            i2 += nd.w[k] * (nd.F2[k] * j2 * std::polar(1.0, phi * a)).imag() / phi;
            i1 += nd.w[k] * (nd.F1[k] * j1 * std::polar(1.0, phi * a)).imag() / phi;
        }
        const double P1 = 0.5 + i1 / M_PI, P2 = 0.5 + i2 / M_PI;
        return std::exp(-p_.q1 * p_.T) * s_tilde * P1 - std::exp(-p_.q2 * p_.T) * P2;
    };
    int panels = std::max(1, opts_.quad.panels);
    double prev = integrate(panels);
    for (int level = 0; level < opts_.max_refinements; ++level) {
        panels *= 2;
        const double cur = integrate(panels);
        if (std::abs(cur - prev) <= opts_.quad.abs_tol + opts_.quad.rel_tol * std::abs(cur)) return cur;
        prev = cur;
    }
    throw NumericsError("folded European quadrature did not converge");
}

double EuropeanEngine::v_tilde_hermite(double t, double s_tilde, double v, int order) const {
    const double tau = p_.T - t;
    const double K = (p_.q1 - p_.q2) * p_.T;
    const Rule& gh = gauss_hermite_normal(order);
    const SeriesPlan sp = plan(tau, 0);
    const Nodes nd = build_nodes(tau, v, 64);
    const double lz0 = std::log(s_tilde) - compensator(j1_, j2_) * tau;
    const auto tail = [&](const std::vector<std::complex<double>>& F, double lz) {
        double acc = 0.0;
        for (std::size_t k = 0; k < nd.phi.size(); ++k)
            acc += nd.w[k] * (F[k] * std::polar(1.0, nd.phi[k] * (lz - K))).imag() / nd.phi[k];
        return std::clamp(0.5 + acc / M_PI, 0.0, 1.0);
    };
    double q1 = 0.0, q2 = 0.0;
    for (int m = 0; m <= sp.M; ++m) {
        for (int n = 0; n <= sp.N; ++n) {
            const double w = sp.w1[m] * sp.w2[n];
            if (w < 1e-16) continue;
            const double mu = m * j1_.gamma - n * j2_.gamma;
            const double sd = std::sqrt(m * j1_.delta * j1_.delta + n * j2_.delta * j2_.delta);
            const int nodes = sd > 0.0 ? order : 1;
            for (int k = 0; k < nodes; ++k) {
                const double y = mu + (sd > 0.0 ? sd * gh.nodes[k] : 0.0);
                const double gw = sd > 0.0 ? gh.weights[k] : 1.0;
                const double lz = lz0 + y;
                q2 += w * gw * tail(nd.F2, lz);
                q1 += w * gw * std::exp(lz) / s_tilde * tail(nd.F1, lz);
            }
        }
    }
    return std::exp(-p_.q1 * p_.T) * s_tilde * q1 - std::exp(-p_.q2 * p_.T) * q2;
}

PriceResult price_european(const MarketState& state, const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2,
                           const EuropeanOptions& opts) {
    return EuropeanEngine(p, j1, j2, opts).price(state);
}

DualModel dual_parameters(const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2) {
    DualModel d;
    d.params = p;
    std::swap(d.params.sigma1, d.params.sigma2);
    std::swap(d.params.rho1, d.params.rho2);
    std::swap(d.params.q1, d.params.q2);
    // The variance drift picks up the covariance with the new numeraire.
    d.params.Lambda = p.Lambda - p.omega * p.rho_sigma();
    // Asset-2 marks enter the inverted ratio positively, tilted by e^{-y};
    // asset-1 marks enter negatively, tilted by e^{y}.
    d.jump1 = {j2.lambda_tilde * (1.0 + j2.kappa_down()), j2.gamma - j2.delta * j2.delta, j2.delta};
    d.jump2 = {j1.lambda_tilde * (1.0 + j1.kappa_up()), j1.gamma + j1.delta * j1.delta, j1.delta};
    return d;
}

PriceResult price_european_dual(const MarketState& state, const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2,
                                const EuropeanOptions& opts) {
    const DualModel d = dual_parameters(p, j1, j2);
    MarketState ds = state;
    std::swap(ds.S1, ds.S2);
    const EuropeanEngine eng(d.params, d.jump1, d.jump2, opts);
    const double sd = ds.s_tilde(d.params);
    PriceResult call = eng.price_ratios(state.t, state.v, {sd}).front();
    // Put on the inverted ratio by parity under the dual measure.
    PriceResult out = call;
    out.q_hat_1 = 1.0 - call.q_hat_2;
    out.q_hat_2 = 1.0 - call.q_hat_1;
    const double tau = p.T - state.t;
    const double put = call.v_tilde - std::exp(-p.q2 * p.T) * sd + std::exp(-p.q1 * p.T);
    out.v_tilde = put * state.S1 * std::exp(p.q1 * state.t) / (state.S2 * std::exp(p.q2 * state.t));
    out.value = state.S1 * std::exp(-p.q1 * tau) * out.q_hat_1 - state.S2 * std::exp(-p.q2 * tau) * out.q_hat_2;
    if (out.value < 0.0 && out.value > -1e-12 * (state.S1 + state.S2)) out.value = 0.0;
    return out;
}

double PriceSurface::value_in_s(int it, double x, int iv) const {
    const int n = static_cast<int>(s.size());
    if (x <= s[0]) return at(it, 0, iv) * x / s[0];
    if (x >= s[n - 1]) {
        const double slope = (at(it, n - 1, iv) - at(it, n - 2, iv)) / (s[n - 1] - s[n - 2]);
        return at(it, n - 1, iv) + slope * (x - s[n - 1]);
    }
    const int j = static_cast<int>(std::upper_bound(s.data(), s.data() + n, x) - s.data()) - 1;
    const int lo = std::clamp(j - 1, 0, n - 4);
    double acc = 0.0;
    for (int a = lo; a < lo + 4; ++a) {
        double l = 1.0;
        for (int b = lo; b < lo + 4; ++b)
            if (b != a) l *= (x - s[b]) / (s[a] - s[b]);
        acc += l * at(it, a, iv);
    }
    return acc;
}

PriceSurface european_surface(const EuropeanEngine& engine, const Eigen::VectorXd& t, const Eigen::VectorXd& s,
                              const Eigen::VectorXd& v) {
    PriceSurface surf;
    surf.t = t;
    surf.s = s;
    surf.v = v;
    surf.values.assign(static_cast<std::size_t>(t.size() * s.size() * v.size()), 0.0);
    const std::vector<double> ratios(s.data(), s.data() + s.size());
    for (int it = 0; it < t.size(); ++it) {
        for (int iv = 0; iv < v.size(); ++iv) {
            const std::vector<PriceResult> r = engine.price_ratios(t[it], v[iv], ratios);
            for (int is = 0; is < s.size(); ++is) surf.at(it, is, iv) = r[is].v_tilde;
        }
    }
    return surf;
}

namespace {

// Finite-difference weights for derivatives 0..2 at x0 from arbitrary nodes
// (Fornberg's recursion). Five nodes give fourth order in the first and third
// order in the second derivative on any mesh, fourth on a uniform one.
struct Stencil {
    int first = 0;   // index of the first node
    std::vector<double> d1, d2;
};

Stencil stencil(const Eigen::VectorXd& x, int i) {
    const int n = static_cast<int>(x.size());
    const int width = n >= 5 ? 5 : 3;
    const int first = std::clamp(i - width / 2, 0, n - width);
    const double x0 = x[i];
    std::vector<std::array<double, 3>> c(width, {0.0, 0.0, 0.0});
    c[0][0] = 1.0;
    double c1 = 1.0;
    for (int a = 1; a < width; ++a) {
        double c2 = 1.0;
        const double xa = x[first + a];
        for (int b = 0; b < a; ++b) {
            const double xb = x[first + b];
            const double c3 = xa - xb;
            c2 *= c3;
            for (int k = std::min(a, 2); k >= 0; --k) {
                const double prev_am1 = k > 0 ? c[a - 1][k - 1] : 0.0;
                if (b == a - 1) c[a][k] = c1 * ((k > 0 ? k * prev_am1 : 0.0) - (x[first + a - 1] - x0) * c[a - 1][k]) / c2;
                const double prev_b = k > 0 ? c[b][k - 1] : 0.0;
                c[b][k] = ((xa - x0) * c[b][k] - (k > 0 ? k * prev_b : 0.0)) / c3;
            }
        }
        c1 = c2;
    }
    Stencil st;
    st.first = first;
    for (int a = 0; a < width; ++a) {
        st.d1.push_back(c[a][1]);
        st.d2.push_back(c[a][2]);
    }
    return st;
}

}  // namespace

double ipde_residual(const PriceSurface& S, GridPoint pt, const ModelParams& p, const JumpSpec& j1,
                     const JumpSpec& j2, int hermite_order) {
    const int it = pt.it, is = pt.is, iv = pt.iv;
    if (it < 1 || it + 1 >= S.t.size() || is < 1 || is + 1 >= S.s.size() || iv < 1 || iv + 1 >= S.v.size()) {
        throw DomainError("IPDE residual requires an interior grid point");
    }
    const double s = S.s[is], v = S.v[iv];
    const Stencil dt = stencil(S.t, it), ds = stencil(S.s, is), dv = stencil(S.v, iv);
    const auto V = [&](int a, int b, int c) { return S.at(a, b, c); };

    double Vt = 0.0, Vs = 0.0, Vss = 0.0, Vv = 0.0, Vvv = 0.0, Vsv = 0.0;
    for (std::size_t k = 0; k < dt.d1.size(); ++k) Vt += dt.d1[k] * V(dt.first + k, is, iv);
    for (std::size_t k = 0; k < ds.d1.size(); ++k) {
        Vs += ds.d1[k] * V(it, ds.first + k, iv);
        Vss += ds.d2[k] * V(it, ds.first + k, iv);
    }
    for (std::size_t k = 0; k < dv.d1.size(); ++k) {
        Vv += dv.d1[k] * V(it, is, dv.first + k);
        Vvv += dv.d2[k] * V(it, is, dv.first + k);
    }
    for (std::size_t a = 0; a < ds.d1.size(); ++a)
        for (std::size_t b = 0; b < dv.d1.size(); ++b) Vsv += ds.d1[a] * dv.d1[b] * V(it, ds.first + a, dv.first + b);

    const double sig2 = p.sigma() * p.sigma();
    double L = -s * compensator(j1, j2) * Vs + (p.xi * p.eta - (p.xi + p.Lambda) * v) * Vv +
               0.5 * sig2 * v * s * s * Vss + 0.5 * p.omega * p.omega * v * Vvv + p.omega * p.rho_sigma() * v * s * Vsv;

    const Rule& gh = gauss_hermite_normal(hermite_order);
    const double V0 = V(it, is, iv);
    const auto jump_term = [&](const JumpSpec& j, double sign) {
        if (!j.active()) return 0.0;
        if (j.delta == 0.0) return j.lambda_tilde * (S.value_in_s(it, s * std::exp(sign * j.gamma), iv) - V0);
        double e = 0.0;
        for (int k = 0; k < gh.nodes.size(); ++k)
            e += gh.weights[k] * S.value_in_s(it, s * std::exp(sign * (j.gamma + j.delta * gh.nodes[k])), iv);
        return j.lambda_tilde * (e - V0);
    };
    L += jump_term(j1, 1.0) + jump_term(j2, -1.0);
    return Vt + L;
}

}  // namespace exch
