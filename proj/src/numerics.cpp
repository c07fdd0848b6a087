#include "exch/numerics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <map>
#include <mutex>

namespace exch {

const Rule& gauss_legendre(int n) {
    static std::mutex mtx;
    static std::map<int, Rule> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;

    Rule r;
    r.nodes.resize(n);
    r.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it2 = 0; it2 < 100; ++it2) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) p0 = 1.0, p1 = x;
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        r.nodes[n - 1 - i] = x;
        r.weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    if (n == 1) {
        r.nodes[0] = 0.0;
        r.weights[0] = 2.0;
    }
    return cache.emplace(n, std::move(r)).first->second;
}

const Rule& gauss_hermite_normal(int n) {
    static std::mutex mtx;
    static std::map<int, Rule> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;

    // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite polynomials.
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        jac(k, k - 1) = std::sqrt(static_cast<double>(k));
        jac(k - 1, k) = jac(k, k - 1);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
    Rule r;
    r.nodes = es.eigenvalues();
    r.weights = es.eigenvectors().row(0).array().square().transpose();
    r.weights /= r.weights.sum();
    return cache.emplace(n, std::move(r)).first->second;
}

namespace {

struct PanelSum {
    std::complex<double> value{0.0, 0.0};
    int evaluations = 0;
};

PanelSum composite(const std::function<std::complex<double>(double)>& g, double a, double b, int panels,
                   int order) {
    const Rule& r = gauss_legendre(order);
    const double h = (b - a) / panels;
    PanelSum out;
    for (int p = 0; p < panels; ++p) {
        const double mid = a + (p + 0.5) * h;
        std::complex<double> s(0.0, 0.0);
        for (int k = 0; k < r.nodes.size(); ++k) s += r.weights[k] * g(mid + 0.5 * h * r.nodes[k]);
        out.value += 0.5 * h * s;
        out.evaluations += static_cast<int>(r.nodes.size());
    }
    return out;
}

}  // namespace

HalfLineResult fourier_half_line(const std::function<std::complex<double>(double)>& g, const QuadSpec& spec) {
    HalfLineResult res;
    // Envelope scan: find a point beyond which |g| stays below envelope_tol on
    // a dyadic window.
    double cut = -1.0;
    double lo = 1.0;
    double last_env = 0.0;
    while (lo < spec.phi_max) {
        const double hi = std::min(2.0 * lo, spec.phi_max);
        double env = 0.0;
        constexpr int samples = 24;
        for (int k = 0; k <= samples; ++k) {
            const double phi = lo + (hi - lo) * k / samples;
            env = std::max(env, std::abs(g(phi)));
            ++res.evaluations;
        }
        last_env = env;
        if (env < spec.envelope_tol) {
            cut = lo;
            break;
        }
        lo = hi;
    }
    if (cut < 0.0) {
        throw NumericsError("Fourier integrand envelope " + std::to_string(last_env) +
                                " still above tolerance at phi_max = " + std::to_string(spec.phi_max),
                            last_env);
    }
    res.phi_cut = cut;

    int panels = std::max(1, spec.panels);
    PanelSum coarse = composite(g, 0.0, cut, panels, spec.points_per_panel);
    res.evaluations += coarse.evaluations;
    for (int level = 0; level < 12; ++level) {
        panels *= 2;
        PanelSum fine = composite(g, 0.0, cut, panels, spec.points_per_panel);
        res.evaluations += fine.evaluations;
        const double diff = std::abs(fine.value - coarse.value);
        coarse = fine;
        res.error_estimate = diff;
        if (diff <= std::max(spec.abs_tol, spec.rel_tol * std::abs(fine.value.real()))) {
            res.value = fine.value.real();
            res.imag_residue = fine.value.imag();
            return res;
        }
    }
    throw NumericsError("Fourier quadrature did not reach tolerance", res.error_estimate);
}

BesselScaled bessel_i_complex(double nu, std::complex<double> z) {
    if (nu < 0.0 || !std::isfinite(nu)) throw DomainError("Bessel order must be finite and nonnegative");
    const std::complex<double> l = log_bessel_i<double>(nu, z);
    return {l.real() - std::abs(z.real()), std::arg(std::exp(std::complex<double>(0.0, l.imag())))};
}

std::complex<double> lower_incomplete_gamma(double u, std::complex<double> b) {
    if (!(u > 0.0)) throw DomainError("incomplete gamma requires u > 0");
    if (b == std::complex<double>(0.0, 0.0)) return {0.0, 0.0};
    return std::exp(u * std::log(b) + log_gamma_star<double>(u, b));
}

PoissonSeries poisson_truncation(double rate, double tail_mass) {
    if (rate < 0.0 || !std::isfinite(rate)) throw DomainError("Poisson rate must be finite and nonnegative");
    PoissonSeries out;
    if (rate == 0.0) {
        out.max_order = 0;
        out.weights = Eigen::VectorXd::Ones(1);
        return out;
    }
    std::vector<double> w;
    double log_w = -rate;
    double cumulative = 0.0;
    for (int k = 0;; ++k) {
        if (k > 0) log_w += std::log(rate) - std::log(static_cast<double>(k));
        const double wk = std::exp(log_w);
        w.push_back(wk);
        cumulative += wk;
        if (cumulative >= 1.0 - tail_mass && k >= rate) break;
        if (k > 100000) throw NumericsError("Poisson truncation exceeded 1e5 terms");
    }
    out.max_order = static_cast<int>(w.size()) - 1;
    out.weights = Eigen::Map<Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    return out;
}

double brent_root(const std::function<double(double)>& f, double lo, double hi, double tol, int max_iter) {
    double a = lo, b = hi;
    double fa = f(a), fb = f(b);
    if (fa == 0.0) return a;
    if (fb == 0.0) return b;
    if (fa * fb > 0.0) {
        throw BracketError("no sign change on [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    double c = a, fc = fa, d = b - a, e = d;
    for (int it = 0; it < max_iter; ++it) {
        if (fb * fc > 0.0) {
            c = a;
            fc = fa;
            d = e = b - a;
        }
        if (std::abs(fc) < std::abs(fb)) {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        const double eps_x = 2.0 * std::numeric_limits<double>::epsilon() * std::abs(b);
        const double m = 0.5 * (c - b);
        if (std::abs(fb) <= tol || std::abs(m) <= eps_x) return b;
        if (std::abs(e) >= eps_x && std::abs(fa) > std::abs(fb)) {
            const double s = fb / fa;
            double p, q;
            if (a == c) {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                const double qq = fa / fc, r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if (p > 0.0) q = -q;
            else p = -p;
            if (2.0 * p < std::min(3.0 * m * q - std::abs(eps_x * q), std::abs(e * q))) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += (std::abs(d) > eps_x) ? d : (m > 0.0 ? eps_x : -eps_x);
        fb = f(b);
    }
    return b;
}

}  // namespace exch
