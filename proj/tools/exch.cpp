#include "run_config.hpp"

#include "exch/american.hpp"
#include "exch/boundary.hpp"
#include "exch/density.hpp"
#include "exch/european.hpp"
#include "exch/model.hpp"
#include "exch/montecarlo.hpp"

#include "CLI11.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#ifndef EXCH_VERSION
#define EXCH_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace exch;
using exch::cli::json;

namespace {

enum Exit { kOk = 0, kParse = 1, kInvalid = 2, kNumerics = 3 };

struct Flags {
    std::string command;
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<int> grid_time, grid_var, grid_s, grid_density_s, grid_density_v;
    std::optional<double> tol;
};

// Non-finite values have no JSON literal; they are written as null.
json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

double to_nominal(const MarketState& m, const ModelParams& p) { return m.S2 * std::exp(p.q2 * m.t); }

json violations_json(const ValidationReport& rep) {
    json out = json::array();
    for (const Violation& v : rep.violations) out.push_back({{"name", v.name}, {"detail", v.detail}});
    return out;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << std::setprecision(17);
    return os;
}

void write_surface_csv(const fs::path& path, const PriceSurface& value, const PriceSurface* european) {
    std::ofstream os = open_out(path);
    os << "t,s_tilde,v," << (european ? "american,european" : "european") << "\n";
    for (int i = 0; i < value.t.size(); ++i)
        for (int k = 0; k < value.s.size(); ++k)
            for (int j = 0; j < value.v.size(); ++j) {
                os << value.t[i] << ',' << value.s[k] << ',' << value.v[j] << ',' << value.at(i, k, j);
                if (european) os << ',' << european->at(i, k, j);
                os << '\n';
            }
}

void write_boundary_csv(const fs::path& path, const BoundaryCurve& b) {
    std::ofstream os = open_out(path);
    os << "t,v,B,A\n";
    for (int i = 0; i < b.t.size(); ++i)
        for (int j = 0; j < b.v.size(); ++j) os << b.t[i] << ',' << b.v[j] << ',' << b.B(i, j) << ',' << b.A(i, j) << '\n';
}

json price_european_cmd(const cli::RunConfig& c, const fs::path& out) {
    const ModelParams& p = c.model;
    const PriceResult r = price_european(c.market, p, c.jump1, c.jump2, c.european);
    const double tau = p.T - c.market.t;
    json res;
    res["price"] = {{"nominal", r.value}, {"numeraire", r.v_tilde}};
    res["decomposition"] = {{"q_hat_1", r.q_hat_1},
                            {"q_hat_2", r.q_hat_2},
                            {"asset1_leg", c.market.S1 * std::exp(-p.q1 * tau) * r.q_hat_1},
                            {"asset2_leg", c.market.S2 * std::exp(-p.q2 * tau) * r.q_hat_2}};
    res["diagnostics"] = {{"terms_m", r.terms_m},
                          {"terms_n", r.terms_n},
                          {"quadrature_error_estimate", r.quadrature_error_estimate},
                          {"truncation_bound", r.truncation_bound},
                          {"clamped", r.clamped},
                          {"max_clamp", r.max_clamp},
                          {"phi_cut", r.phi_cut},
                          {"nodes", r.nodes}};
    if (c.output.surface) {
        // Same tensor grid as the American solver would use, without the maturity slice.
        const AmericanGrids& g = c.american.grids;
        const double s0 = c.market.s_tilde(p);
        Eigen::VectorXd t(g.time_nodes - 1), s(g.s_nodes), v(g.var_nodes);
        for (int i = 0; i + 1 < g.time_nodes; ++i) {
            const double f = 1.0 - static_cast<double>(i) / (g.time_nodes - 1);
            t[i] = p.T - tau * f * f;
        }
        for (int k = 0; k < g.s_nodes; ++k) {
            s[k] = s0 * std::exp(-g.s_log_halfwidth + (g.s_log_halfwidth + g.s_log_above) * k / (g.s_nodes - 1));
        }
        for (int j = 0; j < g.var_nodes; ++j) {
            const double f = g.var_nodes == 1 ? 0.0 : static_cast<double>(j) / (g.var_nodes - 1);
            v[j] = p.eta * g.var_lo * std::pow(g.var_hi / g.var_lo, f);
        }
        const EuropeanEngine engine(p, c.jump1, c.jump2, c.european);
        write_surface_csv(out / "surface.csv", european_surface(engine, t, s, v), nullptr);
        res["artifacts"] = {"surface.csv"};
    }
    return res;
}

json price_american_cmd(const cli::RunConfig& c, const fs::path& out) {
    const ModelParams& p = c.model;
    const AmericanSolution sol = solve_american(c.market, p, c.jump1, c.jump2, c.american);
    const double k = to_nominal(c.market, p);
    const double prem = sol.v_tilde - sol.european_v_tilde;
    const AmericanDiagnostics& d = sol.diagnostics;
    json res;
    res["price"] = {{"nominal", sol.value_nominal}, {"numeraire", sol.v_tilde}};
    res["european"] = {{"nominal", sol.european_nominal}, {"numeraire", sol.european_v_tilde}};
    res["premium"] = {{"nominal", k * prem},
                      {"numeraire", prem},
                      {"diffusion", sol.premium.diffusion},
                      {"jump1", sol.premium.jump1},
                      {"jump2", sol.premium.jump2},
                      {"jump1_weighted", c.jump1.lambda_tilde * sol.premium.jump1},
                      {"jump2_weighted", c.jump2.lambda_tilde * sol.premium.jump2}};
    res["exercise_now"] = sol.exercise_now;
    res["b_limit"] = num(sol.b_limit);
    res["boundary_empty"] = sol.boundary.empty();
    if (!sol.boundary.empty()) res["boundary_at_state"] = sol.boundary.B_at(c.market.t, c.market.v);
    res["diagnostics"] = {{"sweeps", d.sweeps},
                          {"converged", d.converged},
                          {"max_movement", d.max_movement},
                          {"movement_history", d.movement_history},
                          {"value_matching_residual", d.value_matching_residual},
                          {"capped_nodes", d.capped_nodes},
                          {"min_variance_mass", num(d.min_variance_mass)},
                          {"max_variance_mass", d.max_variance_mass}};
    write_surface_csv(out / "surface.csv", sol.value, &sol.european);
    json artifacts = {"surface.csv"};
    if (!sol.boundary.empty()) {
        write_boundary_csv(out / "boundary.csv", sol.boundary);
        artifacts.push_back("boundary.csv");
    }
    res["artifacts"] = artifacts;
    return res;
}

json boundary_limit_cmd(const cli::RunConfig& c, const fs::path& out) {
    const BoundaryLimitResult r = boundary_limit(c.model.q1, c.model.q2, c.jump1, c.jump2);
    {
        std::ofstream os = open_out(out / "boundary_limit.csv");
        os << "q1,q2,lambda1,gamma1,delta1,lambda2,gamma2,delta2,b_limit\n";
        os << c.model.q1 << ',' << c.model.q2 << ',' << c.jump1.lambda_tilde << ',' << c.jump1.gamma << ','
           << c.jump1.delta << ',' << c.jump2.lambda_tilde << ',' << c.jump2.gamma << ',' << c.jump2.delta << ',';
        if (std::isfinite(r.b_limit)) {
            os << r.b_limit << '\n';
        } else {
            os << "inf\n";
        }
    }
    json res;
    res["b_limit"] = num(r.b_limit);
    res["x_star"] = r.x_star ? json(*r.x_star) : json(nullptr);
    res["continuous_at_maturity"] = r.continuous_at_maturity;
    res["never_optimal"] = r.never_optimal;
    res["f_at_one"] = r.f_at_one;
    res["artifacts"] = {"boundary_limit.csv"};
    return res;
}

json density_cmd(const cli::RunConfig& c, const fs::path& out) {
    const ModelParams& p = c.model;
    const cli::DensityOptions& d = c.density;
    const double tau = p.T - c.market.t, s0 = c.market.s_tilde(p);
    Eigen::VectorXd sT(d.s_nodes), vT(d.v_nodes);
    for (int i = 0; i < d.s_nodes; ++i) sT[i] = s0 * (d.s_lo + (d.s_hi - d.s_lo) * i / (d.s_nodes - 1));
    for (int j = 0; j < d.v_nodes; ++j) vT[j] = p.eta * (d.v_lo + (d.v_hi - d.v_lo) * j / (d.v_nodes - 1));
    const DensityGrid g = density_grid(tau, s0, c.market.v, sT, vT, p, c.jump1, c.jump2,
                                       d.folded ? DensityForm::Folded : DensityForm::Series, c.quad);
    // Trapezoid mass over the grid.
    double mass = 0.0;
    for (int i = 0; i + 1 < d.s_nodes; ++i)
        for (int j = 0; j + 1 < d.v_nodes; ++j) {
            const double cell = (sT[i + 1] - sT[i]) * (vT[j + 1] - vT[j]);
            mass += 0.25 * cell * (g.values(i, j) + g.values(i + 1, j) + g.values(i, j + 1) + g.values(i + 1, j + 1));
        }
    std::ofstream os = open_out(out / "density.csv");
    write_density_csv(os, g);
    json res;
    res["tau"] = tau;
    res["form"] = d.folded ? "folded" : "series";
    res["grid"] = {{"s_T", {sT[0], sT[d.s_nodes - 1], d.s_nodes}}, {"v_T", {vT[0], vT[d.v_nodes - 1], d.v_nodes}}};
    res["grid_mass"] = mass;
    res["max_density"] = g.values.maxCoeff();
    res["artifacts"] = {"density.csv"};
    return res;
}

json mc_price_cmd(const cli::RunConfig& c) {
    const ModelParams& p = c.model;
    const double k = to_nominal(c.market, p);
    const McEstimate e = mc_price_european(c.market, p, c.jump1, c.jump2, c.mc.config);
    json res;
    res["price"] = {{"nominal", e.mean}, {"numeraire", e.mean / k}, {"stderr", e.stderr_}};
    res["n_paths"] = e.n_paths;
    res["n_steps"] = c.mc.config.n_steps;
    if (c.mc.american) {
        const McEstimate a = mc_price_american_lsm(c.market, p, c.jump1, c.jump2, c.mc.config, c.mc.basis_degree);
        res["american"] = {{"nominal", a.mean}, {"numeraire", a.mean / k}, {"stderr", a.stderr_},
                           {"basis_degree", c.mc.basis_degree}};
    }
    return res;
}

void apply_overrides(cli::RunConfig& c, const Flags& f) {
    if (f.seed) c.mc.config.seed = *f.seed;
    if (f.workers) {
        if (*f.workers < 1) throw cli::ConfigError("--workers must be >= 1");
        c.mc.config.workers = *f.workers;
        c.american.workers = *f.workers;
    }
    if (f.grid_time) c.american.grids.time_nodes = *f.grid_time;
    if (f.grid_var) c.american.grids.var_nodes = *f.grid_var;
    if (f.grid_s) c.american.grids.s_nodes = *f.grid_s;
    if (f.grid_density_s) c.density.s_nodes = *f.grid_density_s;
    if (f.grid_density_v) c.density.v_nodes = *f.grid_density_v;
    if (f.tol) {
        if (!(*f.tol > 0.0)) throw cli::ConfigError("--tol must be > 0");
        c.american.tol = *f.tol;
    }
}

void write_result(const fs::path& out, const json& doc) {
    std::ofstream os = open_out(out / "result.json");
    os << doc.dump(2) << '\n';
}

int run(const Flags& f) {
    cli::RunConfig cfg;
    try {
        cfg = cli::load_config(f.config);
        apply_overrides(cfg, f);
    } catch (const cli::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kParse;
    }
    const fs::path out(f.out);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) {
        std::cerr << "error: cannot create output directory " << out << ": " << ec.message() << '\n';
        return kParse;
    }

    json doc;
    doc["tool"] = "exch";
    doc["version"] = EXCH_VERSION;
    doc["command"] = f.command;
    doc["seed"] = cfg.mc.config.seed;
    doc["workers"] = cfg.american.workers;
    doc["config"] = cli::echo_config(cfg);

    ValidationReport rep = validate_params(cfg.model, cfg.jump1, cfg.jump2);
    const ValidationReport srep = validate_state(cfg.market, cfg.model);
    rep.violations.insert(rep.violations.end(), srep.violations.begin(), srep.violations.end());
    if (f.command == "validate" || !rep.ok()) {
        doc["status"] = rep.ok() ? "ok" : "invalid";
        doc["result"] = {{"valid", rep.ok()}, {"violations", violations_json(rep)}};
        write_result(out, doc);
        for (const Violation& v : rep.violations) std::cerr << "invalid: " << v.name << ": " << v.detail << '\n';
        return rep.ok() ? kOk : kInvalid;
    }

    try {
        if (f.command == "price-european") {
            doc["result"] = price_european_cmd(cfg, out);
        } else if (f.command == "price-american") {
            doc["result"] = price_american_cmd(cfg, out);
        } else if (f.command == "boundary-limit") {
            doc["result"] = boundary_limit_cmd(cfg, out);
        } else if (f.command == "density") {
            doc["result"] = density_cmd(cfg, out);
        } else {
            doc["result"] = mc_price_cmd(cfg);
        }
    } catch (const DomainError& e) {
        doc["status"] = "invalid";
        doc["error"] = e.what();
        write_result(out, doc);
        std::cerr << "invalid: " << e.what() << '\n';
        return kInvalid;
    } catch (const IterationError& e) {
        doc["status"] = "numerics_failure";
        doc["error"] = {{"message", e.what()}, {"sweeps", e.sweeps()}};
        write_result(out, doc);
        std::cerr << "numerics failure: " << e.what() << '\n';
        return kNumerics;
    } catch (const NumericsError& e) {
        doc["status"] = "numerics_failure";
        doc["error"] = {{"message", e.what()}};
        write_result(out, doc);
        std::cerr << "numerics failure: " << e.what() << '\n';
        return kNumerics;
    } catch (const ResourceError& e) {
        doc["status"] = "numerics_failure";
        doc["error"] = {{"message", e.what()}};
        write_result(out, doc);
        std::cerr << "resource limit: " << e.what() << '\n';
        return kNumerics;
    }
    doc["status"] = "ok";
    write_result(out, doc);
    std::cout << (out / "result.json").string() << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Exchange option pricing under stochastic volatility with jumps"};
    app.set_version_flag("--version", std::string("exch ") + EXCH_VERSION);
    app.require_subcommand(1, 1);
    Flags f;
    for (const char* name : {"price-european", "price-american", "boundary-limit", "density", "mc-price", "validate"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", f.config, "configuration file (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", f.out, "output directory")->capture_default_str();
        sub->add_option("--seed", f.seed, "Monte Carlo seed");
        sub->add_option("--workers", f.workers, "worker threads");
        sub->add_option("--grid-time", f.grid_time, "American time nodes");
        sub->add_option("--grid-var", f.grid_var, "American variance nodes");
        sub->add_option("--grid-s", f.grid_s, "American yield-ratio nodes");
        sub->add_option("--grid-density-s", f.grid_density_s, "density yield-ratio nodes");
        sub->add_option("--grid-density-v", f.grid_density_v, "density variance nodes");
        sub->add_option("--tol", f.tol, "American boundary tolerance");
        sub->callback([&f, sub] { f.command = sub->get_name(); });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kParse;
    }
    try {
        return run(f);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kNumerics;
    }
}
