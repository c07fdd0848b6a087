#pragma once

#include "exch/american.hpp"
#include "exch/european.hpp"
#include "exch/model.hpp"
#include "exch/montecarlo.hpp"
#include "exch/numerics.hpp"

#include "json.hpp"

#include <stdexcept>
#include <string>

namespace exch::cli {

using json = nlohmann::ordered_json;

// Malformed configuration: syntax errors, unknown or missing keys, wrong types.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DensityOptions {
    int s_nodes = 81, v_nodes = 41;
    // Ratio bounds as multiples of the current ratio, variance bounds as multiples of eta.
    double s_lo = 0.5, s_hi = 2.0;
    double v_lo = 0.1, v_hi = 4.0;
    bool folded = false;   // series over jump counts unless set
};

struct McOptions {
    McConfig config;
    int basis_degree = 3;
    bool american = false;   // also run the Longstaff-Schwartz estimator
};

struct OutputOptions {
    bool surface = false;    // European surface CSV for price-european
};

// Everything a command needs. Model, jump and market sections are mandatory
// and complete; numerics sections fall back to library defaults.
struct RunConfig {
    ModelParams model;
    JumpSpec jump1, jump2;
    MarketState market;
    QuadSpec quad;
    EuropeanOptions european;
    AmericanOptions american;
    McOptions mc;
    DensityOptions density;
    OutputOptions output;
};

// Parses configuration text; syntax errors report line and column.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// The complete configuration, defaults included, as a JSON document.
json echo_config(const RunConfig& cfg);

}  // namespace exch::cli
