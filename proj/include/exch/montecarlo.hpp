#pragma once

#include "exch/model.hpp"
#include "exch/numerics.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <stdexcept>

namespace exch {

enum class VarianceScheme { FullTruncationEuler, ExactCIR };

struct McConfig {
    std::int64_t n_paths = 100000;
    int n_steps = 250;
    std::uint64_t seed = 20240601;
    VarianceScheme scheme = VarianceScheme::FullTruncationEuler;
    bool antithetic = true;
    int workers = 1;
    double max_work = 1e11;   // budget on n_paths * n_steps
};

struct McEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;
    std::int64_t n_paths = 0;
    std::uint64_t seed = 0;
};

class ResourceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Counter-based generator: the stream for path unit k is a pure function of
// (seed, k), so work can be split across threads without changing results.
class SplitMix64 {
public:
    using result_type = std::uint64_t;
    SplitMix64(std::uint64_t seed, std::uint64_t stream);
    result_type operator()();
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

private:
    std::uint64_t state_;
};

// Joint paths of (ln s, v) on the uniform step grid over [t, T].
struct PathBatch {
    Eigen::VectorXd times;
    Eigen::MatrixXd log_s;   // n_paths x (n_steps + 1)
    Eigen::MatrixXd v;
    Eigen::VectorXi jumps1, jumps2;   // jump counts per path
};

PathBatch simulate_paths(const MarketState& state, const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2,
                         const McConfig& cfg);

// Nominal European exchange value S2 e^{q2 t} E[e^{-q1 T}(s_T - e^{(q1-q2)T})^+].
McEstimate mc_price_european(const MarketState& state, const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2,
                             const McConfig& cfg);

// Longstaff-Schwartz estimate of the American exchange value (nominal), with
// exercise allowed on every step date and a polynomial basis in (s, v) of
// total degree basis_degree.
McEstimate mc_price_american_lsm(const MarketState& state, const ModelParams& p, const JumpSpec& j1,
                                 const JumpSpec& j2, const McConfig& cfg, int basis_degree = 2);

struct Histogram2D {
    Eigen::VectorXd s_edges, v_edges;
    Eigen::MatrixXd counts;        // paths per bin
    std::int64_t total = 0;        // all simulated paths, including those outside the grid
    // Fraction of all paths in each bin (estimates bin probabilities).
    Eigen::MatrixXd probability() const { return counts / static_cast<double>(total); }
    // Bin masses rescaled to sum to one over the grid.
    Eigen::MatrixXd normalized() const { return counts / counts.sum(); }
};

Histogram2D mc_density_histogram(const MarketState& state, const ModelParams& p, const JumpSpec& j1,
                                 const JumpSpec& j2, const McConfig& cfg, const Eigen::VectorXd& s_edges,
                                 const Eigen::VectorXd& v_edges);

}  // namespace exch
