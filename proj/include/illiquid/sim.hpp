#pragma once

// Closed-loop Monte Carlo of the optimal strategy across Poisson trading
// dates.  Noise comes from a counter-based generator so every draw is a pure
// function of (seed, path, step, stream).

#include "illiquid/model.hpp"
#include "illiquid/policy.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace illiquid {

/// Philox4x32-10.
class Philox {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    explicit Philox(std::uint64_t seed)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)}
    {
    }

    Counter operator()(Counter ctr) const;

    /// Two standard normals (Box-Muller) for counter (path, step, stream).
    std::array<double, 2> normals(std::uint64_t path, std::uint32_t step, std::uint32_t stream) const;
    /// Four standard normals from one block, 32-bit uniforms.
    std::array<double, 4> normals4(std::uint64_t path, std::uint32_t step, std::uint32_t stream) const;
    /// Uniform in (0, 1).
    double uniform(std::uint64_t path, std::uint32_t step, std::uint32_t stream) const;

private:
    Key key_;
};

struct SimConfig {
    double horizon = 30.0;
    double dt_euler = 1e-2;
    int n_paths = 100000;
    std::uint64_t seed = 1;
    double initial_wealth = 1.0;
    int record_paths = 0;  // full trajectories kept for this many leading paths
    int record_stride = 10;

    void validate() const;
};

struct TradeRecord {
    double tau;
    double X_pre;
    double A_pre;  // illiquid value Y J just before the trade
    double X_post;
    double Y_post;
};

struct PathSample {
    int path_id;
    double s;
    double X;
    double Y;  // observed proxy
    double A;  // true illiquid value
    double c;
    double pi;
    bool is_trade;
};

struct PathSummary {
    double discounted_utility = 0;  // includes the tail estimate
    double tail = 0;
    double consumption_integral = 0;
    int n_trades = 0;
    bool absorbed = false;
    double final_wealth = 0;
};

struct SimulationResult {
    std::vector<PathSummary> paths;
    std::vector<std::vector<TradeRecord>> trades;  // recorded paths only
    std::vector<PathSample> samples;
    double mean_utility = 0;
    double std_error = 0;
    double mean_tail = 0;
    long long trade_events = 0;
    long long ratio_violations = 0;
    long long negativity_violations = 0;
    long long absorbed_paths = 0;
    double phi0 = 0;  // HJB-scale value being estimated
};

/// Tail estimate e^{-beta H} Phi0 R_H^p is added at the horizon.
SimulationResult simulate(const ModelParams& params, const PolicyField& policy, double phi0, const SimConfig& cfg);

struct RatioPaths {
    Eigen::VectorXd s;
    Eigen::MatrixXd Z;         // Euler on the closed-loop ratio equation
    Eigen::MatrixXd X_over_Y;  // joint simulation of X and Y with the same noise
};

/// Per-unit-Y controls (c/Y, theta/Y) as a function of elapsed time and Z = X/Y.
using RatioFeedback = std::function<void(double s, double Z, double& c_tilde, double& theta_tilde)>;

RatioFeedback policy_ratio_feedback(const ModelParams& params, const PolicyField& policy);

/// Single inter-trade interval from s = 0 with Z_0 = z0 (absorbing at 0).
RatioPaths simulate_ratio(const ModelParams& params, const RatioFeedback& feedback, double z0, const SimConfig& cfg,
                          int n_paths);

void write_samples_csv(const SimulationResult& result, const std::string& path, const std::string& header_comment);

/// Stable key=value lines.
std::string summary(const SimulationResult& result);

} // namespace illiquid
