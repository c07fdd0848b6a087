#include "exch/density.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

namespace exch {

namespace {

struct Column {
    double tau, log_s, v, v_T;
    DensityForm form;
};

// Transform of the v_T-resolved log-ratio law on a panel Gauss-Legendre grid.
struct KernelNodes {
    std::vector<double> phi, w;
    std::vector<std::complex<double>> g;
};

std::complex<double> column_kernel(const Column& c, double phi, const ModelParams& p, const JumpSpec& j1,
                                   const JumpSpec& j2) {
    std::complex<double> lg = log_h_kernel_t<double>(c.tau, char_terms_diffusion<double>(phi, p), c.v, c.v_T);
    if (c.form == DensityForm::Folded) lg += jump_log_cf(c.tau, -phi, j1, j2);
    return std::exp(lg);
}

double find_density_cut(const Column& c, double scale, const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2,
                        const QuadSpec& qs) {
    double lo = 1.0;
    while (lo < qs.phi_max) {
        const double hi = std::min(2.0 * lo, qs.phi_max);
        double env = 0.0;
        for (int k = 0; k <= 16; ++k) env = std::max(env, std::abs(column_kernel(c, lo + (hi - lo) * k / 16.0, p, j1, j2)));
        if (env < qs.envelope_tol * scale) return lo;
        lo = hi;
    }
    throw NumericsError("density integrand does not decay before phi_max",
                        std::abs(column_kernel(c, qs.phi_max, p, j1, j2)) / scale);
}

KernelNodes build_kernel_nodes(const Column& c, double cut, int panels, int points, const ModelParams& p,
                               const JumpSpec& j1, const JumpSpec& j2) {
    KernelNodes nd;
    const Rule& r = gauss_legendre(points);
    const double h = cut / panels;
    for (int pnl = 0; pnl < panels; ++pnl) {
        for (int k = 0; k < r.nodes.size(); ++k) {
            const double phi = (pnl + 0.5 * (r.nodes[k] + 1.0)) * h;
            nd.phi.push_back(phi);
            nd.w.push_back(0.5 * h * r.weights[k]);
            nd.g.push_back(column_kernel(c, phi, p, j1, j2));
        }
    }
    return nd;
}

// (1/pi) int_0^inf Re[e^{i phi y} g(phi)] e^{-phi^2 s2 / 2} dphi
double invert(const KernelNodes& nd, double y, double s2) {
    const double phi_lim = s2 > 0.0 ? std::sqrt(90.0 / s2) : std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (std::size_t k = 0; k < nd.phi.size(); ++k) {
        const double phi = nd.phi[k];
        if (phi > phi_lim) continue;
        acc += nd.w[k] * std::exp(-0.5 * phi * phi * s2) * (nd.g[k] * std::polar(1.0, phi * y)).real();
    }
    return acc / M_PI;
}

// Density in (x_T, v_T) at each log-ratio in xs.
std::vector<double> evaluate_column(const KernelNodes& nd, const Column& c, const std::vector<double>& xs,
                                    const JumpSumQuadrature* quad, const JumpSpec& j1, const JumpSpec& j2) {
    std::vector<double> out(xs.size(), 0.0);
    if (c.form == DensityForm::Folded) {
        for (std::size_t i = 0; i < xs.size(); ++i) out[i] = invert(nd, xs[i] - c.log_s, 0.0);
        return out;
    }
    const double x0 = c.log_s - compensator(j1, j2) * c.tau;
    if (quad->hermite_order == 0) {
        // Exact normal folding: the Poisson-weighted mark factors do not depend
        // on x_T, so sum them per node once and invert a single integrand.
        KernelNodes folded = nd;
        for (std::size_t k = 0; k < nd.phi.size(); ++k) {
            const double phi = nd.phi[k];
            std::complex<double> jump(0.0, 0.0);
            for (int m = 0; m <= quad->max_m; ++m) {
                for (int n = 0; n <= quad->max_n; ++n) {
                    const double w = quad->w1[m] * quad->w2[n];
                    if (w < 1e-18) continue;
                    const double mu = m * j1.gamma - n * j2.gamma;
                    const double s2 = m * j1.delta * j1.delta + n * j2.delta * j2.delta;
                    const double damp = 0.5 * phi * phi * s2;
                    if (damp > 45.0) continue;
                    jump += w * std::exp(-damp) * std::polar(1.0, -phi * mu);
                }
            }
            folded.g[k] *= jump;
        }
        for (std::size_t i = 0; i < xs.size(); ++i) out[i] = invert(folded, xs[i] - x0, 0.0);
        return out;
    }
    const Rule* gh = &gauss_hermite_normal(quad->hermite_order);
    for (int m = 0; m <= quad->max_m; ++m) {
        for (int n = 0; n <= quad->max_n; ++n) {
            const double w = quad->w1[m] * quad->w2[n];
            if (w < 1e-18) continue;
            const double mu = m * j1.gamma - n * j2.gamma;
            const double s2 = m * j1.delta * j1.delta + n * j2.delta * j2.delta;
            for (std::size_t i = 0; i < xs.size(); ++i) {
                const double y = xs[i] - x0 - mu;
                if (s2 == 0.0) {
                    out[i] += w * invert(nd, y, s2);
                } else {
                    const double sd = std::sqrt(s2);
                    double e = 0.0;
                    for (int k = 0; k < gh->nodes.size(); ++k) e += gh->weights[k] * invert(nd, y - sd * gh->nodes[k], 0.0);
                    out[i] += w * e;
                }
            }
        }
    }
    return out;
}

std::vector<double> density_column(const Column& c, const std::vector<double>& xs, const ModelParams& p,
                                   const JumpSpec& j1, const JumpSpec& j2, const JumpSumQuadrature* quad,
                                   const QuadSpec& qs) {
    // h at phi = 0 is the variance transition density and bounds |h| elsewhere.
    const double log_scale = log_h_kernel_t<double>(c.tau, char_terms_diffusion<double>(0.0, p), c.v, c.v_T).real();
    if (log_scale < -700.0) return std::vector<double>(xs.size(), 0.0);
    const double scale = std::exp(log_scale);
    const double cut = find_density_cut(c, scale, p, j1, j2, qs);
    int panels = std::max(1, qs.panels);
    std::vector<double> prev = evaluate_column(build_kernel_nodes(c, cut, panels, qs.points_per_panel, p, j1, j2), c, xs,
                                               quad, j1, j2);
    double diff = 0.0;
    for (int level = 0; level < 12; ++level) {
        panels *= 2;
        std::vector<double> cur = evaluate_column(build_kernel_nodes(c, cut, panels, qs.points_per_panel, p, j1, j2), c,
                                                  xs, quad, j1, j2);
        diff = 0.0;
        bool ok = true;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double d = std::abs(cur[i] - prev[i]);
            diff = std::max(diff, d / scale);
            if (d > qs.abs_tol * scale + qs.rel_tol * std::abs(cur[i])) ok = false;
        }
        prev = std::move(cur);
        if (ok) return prev;
    }
    throw NumericsError("density quadrature did not converge", diff);
}

void check_state(double tau, double s_tilde, double v, double s_tilde_T, double v_T) {
    if (!(tau >= kMinDensityTau)) throw DomainError("density requires tau >= 1e-6");
    if (!(s_tilde > 0.0) || !(v > 0.0) || !(s_tilde_T > 0.0) || !(v_T > 0.0)) {
        throw DomainError("density requires positive state arguments");
    }
}

}  // namespace

JumpSumQuadrature make_jump_quadrature(double tau, const JumpSpec& j1, const JumpSpec& j2, int hermite_order,
                                       double tail_mass) {
    JumpSumQuadrature q;
    const PoissonSeries a = poisson_truncation(j1.lambda_tilde * tau, tail_mass);
    const PoissonSeries b = poisson_truncation(j2.lambda_tilde * tau, tail_mass);
    q.max_m = a.max_order;
    q.max_n = b.max_order;
    q.w1 = a.weights;
    q.w2 = b.weights;
    q.hermite_order = hermite_order;
    return q;
}

double transition_density(double tau, double s_tilde, double v, double s_tilde_T, double v_T, const ModelParams& p,
                          const JumpSpec& j1, const JumpSpec& j2, const JumpSumQuadrature& quad, const QuadSpec& qs) {
    check_state(tau, s_tilde, v, s_tilde_T, v_T);
    const Column c{tau, std::log(s_tilde), v, v_T, DensityForm::Series};
    return density_column(c, {std::log(s_tilde_T)}, p, j1, j2, &quad, qs).front() / s_tilde_T;
}

double density_via_charfn(double tau, double s_tilde, double v, double s_tilde_T, double v_T, const ModelParams& p,
                          const JumpSpec& j1, const JumpSpec& j2, const QuadSpec& qs) {
    check_state(tau, s_tilde, v, s_tilde_T, v_T);
    const Column c{tau, std::log(s_tilde), v, v_T, DensityForm::Folded};
    return density_column(c, {std::log(s_tilde_T)}, p, j1, j2, nullptr, qs).front() / s_tilde_T;
}

DensityGrid density_grid(double tau, double s_tilde, double v, const Eigen::VectorXd& s_T, const Eigen::VectorXd& v_T,
                         const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2, DensityForm form,
                         const QuadSpec& qs) {
    check_state(tau, s_tilde, v, s_T.minCoeff(), v_T.minCoeff());
    DensityGrid g;
    g.s_T = s_T;
    g.v_T = v_T;
    g.values.resize(s_T.size(), v_T.size());
    std::vector<double> xs(s_T.size());
    for (int i = 0; i < s_T.size(); ++i) xs[i] = std::log(s_T[i]);
    const JumpSumQuadrature quad = make_jump_quadrature(tau, j1, j2, 0, qs.poisson_tail_mass);
    for (int j = 0; j < v_T.size(); ++j) {
        const Column c{tau, std::log(s_tilde), v, v_T[j], form};
        const std::vector<double> col = density_column(c, xs, p, j1, j2, &quad, qs);
        for (int i = 0; i < s_T.size(); ++i) g.values(i, j) = col[i] / s_T[i];
    }
    return g;
}

void write_density_csv(std::ostream& os, const DensityGrid& grid) {
    // Shortest round-trip representation, independent of the stream locale.
    const auto put = [&os](double x) {
        char buf[32];
        const auto res = std::to_chars(buf, buf + sizeof buf, x);
        os.write(buf, res.ptr - buf);
    };
    os << "s_T,v_T,density\n";
    for (int i = 0; i < grid.s_T.size(); ++i) {
        for (int j = 0; j < grid.v_T.size(); ++j) {
            put(grid.s_T[i]);
            os << ',';
            put(grid.v_T[j]);
            os << ',';
            put(grid.values(i, j));
            os << '\n';
        }
    }
}

}  // namespace exch
