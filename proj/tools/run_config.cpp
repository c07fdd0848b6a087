#include "run_config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <vector>

namespace exch::cli {

namespace {

// Reads one JSON object; every key must be read exactly once before finish().
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    double number(const std::string& key) {
        const json& v = take(key, true);
        if (!v.is_number()) throw ConfigError(where(key) + ": expected a number");
        return v.get<double>();
    }
    void number(const std::string& key, double& out) {
        if (has(key)) out = number(key);
    }
    template <class I>
    void integer(const std::string& key, I& out) {
        if (!has(key)) return;
        const json& v = take(key, true);
        if (!v.is_number_integer()) throw ConfigError(where(key) + ": expected an integer");
        out = v.get<I>();
    }
    void boolean(const std::string& key, bool& out) {
        if (!has(key)) return;
        const json& v = take(key, true);
        if (!v.is_boolean()) throw ConfigError(where(key) + ": expected true or false");
        out = v.get<bool>();
    }
    std::string string(const std::string& key, const std::string& fallback) {
        if (!has(key)) return fallback;
        const json& v = take(key, true);
        if (!v.is_string()) throw ConfigError(where(key) + ": expected a string");
        return v.get<std::string>();
    }
    Section child(const std::string& key) {
        if (!has(key)) {
            missing_.push_back(key);
            static const json empty = json::object();
            return Section(empty, where(key));
        }
        return Section(take(key, true), where(key));
    }
    bool optional_child(const std::string& key, json& out) {
        if (!has(key)) return false;
        out = take(key, true);
        return true;
    }

    // Rejects unknown keys before any reading; for sections whose children would
    // otherwise fail first with a less useful message.
    void only(std::initializer_list<const char*> keys) const {
        for (const auto& [key, value] : j_.items()) {
            (void)value;
            if (std::find_if(keys.begin(), keys.end(), [&](const char* k) { return key == k; }) == keys.end())
                throw ConfigError(where(key) + ": unknown key");
        }
    }

    // Unknown keys are reported before missing ones: a misspelt key shows up as both.
    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            (void)value;
            if (!seen_.count(key)) throw ConfigError(where(key) + ": unknown key");
        }
        if (!missing_.empty()) throw ConfigError(where(missing_.front()) + ": missing required key");
    }

private:
    const json& take(const std::string& key, bool required) {
        if (!j_.contains(key)) {
            if (!required) throw ConfigError(where(key) + ": missing key");
            missing_.push_back(key);
            static const json placeholder = 0.0;
            return placeholder;
        }
        seen_.insert(key);
        return j_.at(key);
    }
    std::string where(const std::string& key) const { return path_ + "." + key; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
    std::vector<std::string> missing_;
};

void read_model(Section s, ModelParams& p) {
    p.sigma1 = s.number("sigma1");
    p.sigma2 = s.number("sigma2");
    p.rho_w = s.number("rho_w");
    p.rho1 = s.number("rho1");
    p.rho2 = s.number("rho2");
    p.xi = s.number("xi");
    p.eta = s.number("eta");
    p.omega = s.number("omega");
    p.Lambda = s.number("Lambda");
    p.q1 = s.number("q1");
    p.q2 = s.number("q2");
    p.r = s.number("r");
    p.T = s.number("T");
    s.finish();
}

void read_jump(Section s, JumpSpec& j) {
    j.lambda_tilde = s.number("lambda_tilde");
    j.gamma = s.number("gamma");
    j.delta = s.number("delta");
    s.finish();
}

void read_market(Section s, MarketState& m) {
    m.t = s.number("t");
    m.S1 = s.number("S1");
    m.S2 = s.number("S2");
    m.v = s.number("v");
    s.finish();
}

void read_quad(Section s, QuadSpec& q) {
    s.number("phi_max", q.phi_max);
    s.integer("panels", q.panels);
    s.integer("points_per_panel", q.points_per_panel);
    s.number("abs_tol", q.abs_tol);
    s.number("rel_tol", q.rel_tol);
    s.integer("hermite_order", q.hermite_order);
    s.number("poisson_tail_mass", q.poisson_tail_mass);
    s.number("envelope_tol", q.envelope_tol);
    s.finish();
    if (!(q.phi_max > 0 && q.panels > 0 && q.points_per_panel > 0 && q.abs_tol > 0 && q.rel_tol > 0 &&
          q.hermite_order > 0 && q.envelope_tol > 0)) {
        throw ConfigError("numerics.quad: all entries must be positive");
    }
    if (!(q.poisson_tail_mass > 0 && q.poisson_tail_mass <= 1e-8)) {
        throw ConfigError("numerics.quad.poisson_tail_mass must lie in (0, 1e-8]");
    }
}

void read_european(Section s, EuropeanOptions& e) {
    s.number("truncation_tol", e.truncation_tol);
    s.integer("max_refinements", e.max_refinements);
    s.finish();
}

void read_mc(Section s, McOptions& m) {
    s.integer("n_paths", m.config.n_paths);
    s.integer("n_steps", m.config.n_steps);
    s.integer("seed", m.config.seed);
    const std::string scheme = s.string("scheme", "euler");
    if (scheme == "euler") {
        m.config.scheme = VarianceScheme::FullTruncationEuler;
    } else if (scheme == "exact") {
        m.config.scheme = VarianceScheme::ExactCIR;
    } else {
        throw ConfigError("numerics.mc.scheme: expected \"euler\" or \"exact\"");
    }
    s.boolean("antithetic", m.config.antithetic);
    s.number("max_work", m.config.max_work);
    s.integer("basis_degree", m.basis_degree);
    s.boolean("american", m.american);
    s.finish();
    if (m.config.n_paths < 1 || m.config.n_steps < 1) throw ConfigError("numerics.mc: n_paths and n_steps must be >= 1");
}

void read_premium(Section s, PremiumQuad& q) {
    s.integer("u_nodes", q.u_nodes);
    s.integer("vu_nodes", q.vu_nodes);
    s.number("vu_width", q.vu_width);
    s.number("window", q.window);
    s.integer("spike_points", q.spike_points);
    s.integer("xi_nodes", q.xi_nodes);
    s.integer("mark_nodes", q.mark_nodes);
    s.number("envelope_tol", q.envelope_tol);
    s.finish();
}

void read_american(Section s, AmericanOptions& a) {
    AmericanGrids& g = a.grids;
    s.integer("time_nodes", g.time_nodes);
    s.integer("var_nodes", g.var_nodes);
    s.number("var_lo", g.var_lo);
    s.number("var_hi", g.var_hi);
    s.integer("s_nodes", g.s_nodes);
    s.number("s_log_halfwidth", g.s_log_halfwidth);
    s.number("s_log_above", g.s_log_above);
    s.integer("max_sweeps", a.max_sweeps);
    s.number("tol", a.tol);
    s.number("root_tol", a.root_tol);
    s.number("cache_bytes", a.cache_bytes);
    json premium;
    if (s.optional_child("premium", premium)) read_premium(Section(premium, "numerics.american.premium"), a.premium);
    s.finish();
}

void read_density(Section s, DensityOptions& d) {
    s.integer("s_nodes", d.s_nodes);
    s.integer("v_nodes", d.v_nodes);
    s.number("s_lo", d.s_lo);
    s.number("s_hi", d.s_hi);
    s.number("v_lo", d.v_lo);
    s.number("v_hi", d.v_hi);
    const std::string form = s.string("form", "series");
    if (form == "series") {
        d.folded = false;
    } else if (form == "folded") {
        d.folded = true;
    } else {
        throw ConfigError("numerics.density.form: expected \"series\" or \"folded\"");
    }
    s.finish();
    if (d.s_nodes < 2 || d.v_nodes < 2 || !(d.s_lo > 0 && d.s_hi > d.s_lo && d.v_lo > 0 && d.v_hi > d.v_lo)) {
        throw ConfigError("numerics.density: grid needs >= 2 nodes per axis and increasing positive bounds");
    }
}

std::string locate(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("configuration syntax error at " + locate(text, e.byte) + ": " + e.what());
    }
    RunConfig cfg;
    cfg.american.european = cfg.european;
    Section root(doc, "config");
    root.only({"model", "jumps", "market", "numerics", "output"});
    read_model(root.child("model"), cfg.model);
    {
        Section jumps = root.child("jumps");
        read_jump(jumps.child("jump1"), cfg.jump1);
        read_jump(jumps.child("jump2"), cfg.jump2);
        jumps.finish();
    }
    read_market(root.child("market"), cfg.market);
    json numerics;
    if (root.optional_child("numerics", numerics)) {
        Section n(numerics, "config.numerics");
        json sub;
        if (n.optional_child("quad", sub)) read_quad(Section(sub, "numerics.quad"), cfg.quad);
        if (n.optional_child("european", sub)) read_european(Section(sub, "numerics.european"), cfg.european);
        if (n.optional_child("mc", sub)) read_mc(Section(sub, "numerics.mc"), cfg.mc);
        if (n.optional_child("american", sub)) read_american(Section(sub, "numerics.american"), cfg.american);
        if (n.optional_child("density", sub)) read_density(Section(sub, "numerics.density"), cfg.density);
        n.finish();
    }
    json output;
    if (root.optional_child("output", output)) {
        Section o(output, "config.output");
        o.boolean("surface", cfg.output.surface);
        o.finish();
    }
    root.finish();
    cfg.european.quad = cfg.quad;
    cfg.american.european = cfg.european;
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open configuration file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

json echo_config(const RunConfig& c) {
    const ModelParams& p = c.model;
    const auto jump = [](const JumpSpec& j) {
        return json{{"lambda_tilde", j.lambda_tilde}, {"gamma", j.gamma}, {"delta", j.delta}};
    };
    const QuadSpec& q = c.quad;
    const AmericanOptions& a = c.american;
    const PremiumQuad& pq = a.premium;
    json out;
    out["model"] = {{"sigma1", p.sigma1}, {"sigma2", p.sigma2}, {"rho_w", p.rho_w}, {"rho1", p.rho1},
                    {"rho2", p.rho2},     {"xi", p.xi},         {"eta", p.eta},     {"omega", p.omega},
                    {"Lambda", p.Lambda}, {"q1", p.q1},         {"q2", p.q2},       {"r", p.r},
                    {"T", p.T}};
    out["jumps"] = {{"jump1", jump(c.jump1)}, {"jump2", jump(c.jump2)}};
    out["market"] = {{"t", c.market.t}, {"S1", c.market.S1}, {"S2", c.market.S2}, {"v", c.market.v}};
    out["numerics"]["quad"] = {{"phi_max", q.phi_max},
                               {"panels", q.panels},
                               {"points_per_panel", q.points_per_panel},
                               {"abs_tol", q.abs_tol},
                               {"rel_tol", q.rel_tol},
                               {"hermite_order", q.hermite_order},
                               {"poisson_tail_mass", q.poisson_tail_mass},
                               {"envelope_tol", q.envelope_tol}};
    out["numerics"]["european"] = {{"truncation_tol", c.european.truncation_tol},
                                   {"max_refinements", c.european.max_refinements}};
    out["numerics"]["mc"] = {{"n_paths", c.mc.config.n_paths},
                             {"n_steps", c.mc.config.n_steps},
                             {"seed", c.mc.config.seed},
                             {"scheme", c.mc.config.scheme == VarianceScheme::ExactCIR ? "exact" : "euler"},
                             {"antithetic", c.mc.config.antithetic},
                             {"max_work", c.mc.config.max_work},
                             {"basis_degree", c.mc.basis_degree},
                             {"american", c.mc.american}};
    out["numerics"]["american"] = {{"time_nodes", a.grids.time_nodes},
                                   {"var_nodes", a.grids.var_nodes},
                                   {"var_lo", a.grids.var_lo},
                                   {"var_hi", a.grids.var_hi},
                                   {"s_nodes", a.grids.s_nodes},
                                   {"s_log_halfwidth", a.grids.s_log_halfwidth},
                                   {"s_log_above", a.grids.s_log_above},
                                   {"max_sweeps", a.max_sweeps},
                                   {"tol", a.tol},
                                   {"root_tol", a.root_tol},
                                   {"cache_bytes", a.cache_bytes},
                                   {"premium",
                                    {{"u_nodes", pq.u_nodes},
                                     {"vu_nodes", pq.vu_nodes},
                                     {"vu_width", pq.vu_width},
                                     {"window", pq.window},
                                     {"spike_points", pq.spike_points},
                                     {"xi_nodes", pq.xi_nodes},
                                     {"mark_nodes", pq.mark_nodes},
                                     {"envelope_tol", pq.envelope_tol}}}};
    out["numerics"]["density"] = {{"s_nodes", c.density.s_nodes}, {"v_nodes", c.density.v_nodes},
                                  {"s_lo", c.density.s_lo},       {"s_hi", c.density.s_hi},
                                  {"v_lo", c.density.v_lo},       {"v_hi", c.density.v_hi},
                                  {"form", c.density.folded ? "folded" : "series"}};
    out["output"] = {{"surface", c.output.surface}};
    return out;
}

}  // namespace exch::cli
