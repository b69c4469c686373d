#pragma once

// Experiment harness behind the command-line tool: JSON configuration, sweep
// execution, CSV tables, figure data with gnuplot scripts, and summaries.

#include "illiquid/hjb.hpp"
#include "illiquid/model.hpp"
#include "illiquid/policy.hpp"
#include "illiquid/sim.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace illiquid {

/// Optional overrides applied on top of a scheme profile.
struct SchemeOverrides {
    std::optional<double> T;
    std::optional<double> dt;
    std::optional<double> dz;
    std::optional<double> fixed_point_tol;
    std::optional<int> max_outer_iters;
    std::optional<double> clamp_m;
    std::optional<double> clamp_d;
    std::optional<GridMethod> grid_method;
    std::optional<int> grid_size;
};

struct SweepAxes {
    std::vector<double> lambda{1, 5, 10, 50};
    std::vector<double> gamma{0, 1};
    std::vector<double> rho{0, 0.5, -0.5};
};

struct TableOptions {
    std::vector<double> lambda_allocation{1, 3, 5, 10, 50};
    bool no_liquid = true;
    double tol_value = 0.01;
    double tol_cost = 0.005;
    double tol_allocation = 0.02;
};

struct FigureOptions {
    std::vector<double> rho{-0.75, -0.5, -0.25, 0, 0.25, 0.5, 0.75};
    std::vector<double> lambda{1, 5, 10, 50};
    std::vector<double> policy_lambda{0, 1, 5, 10, 50};
    std::vector<double> policy_rho{0, -0.5, 0.5};
    std::vector<double> response_gamma{0, 0.2, 0.4, 0.6, 0.8, 1};
    double response_lambda = 5;
    double response_t = 1;
    double response_x = 0.5;
    double response_y0 = 0.5;
    double response_b1_min = -2;
    double response_b1_max = 2;
    int response_points = 41;
};

struct ExperimentSpec {
    ModelParams params{};
    SchemeProfile profile = SchemeProfile::Paper;
    SchemeOverrides scheme{};
    SweepAxes sweep{};
    TableOptions tables{};
    FigureOptions figures{};
    SimConfig simulation{};
    std::string output_dir = "out";
    std::vector<std::string> tasks{};
    int workers = 0;  // 0: hardware concurrency
    bool kernel_cache = true;
    int csv_time_rows = 201;

    /// Scheme for the given trading intensity after profile and overrides.
    SchemeConfig scheme_for(double lambda) const;
    std::uint64_t hash() const;
};

/// Throws ValidationError on malformed input and on any unknown field.
ExperimentSpec parse_spec(const nlohmann::json& j);
ExperimentSpec load_spec(const std::string& path);
nlohmann::json to_json(const ExperimentSpec& spec);

/// Reference values for the reference parameter block, if known.
std::optional<double> reference_value(double rho, double gamma, double lambda, bool liquid_asset);
std::optional<double> reference_cost(double rho, double gamma, double lambda);
std::optional<double> reference_allocation(double gamma, double lambda);

struct CellResult {
    ModelParams params{};
    SchemeConfig scheme{};
    bool ok = false;
    std::string error;
    bool numerical_failure = false;
    double phi0 = 0;
    double value_at_one = 0;
    double cost = 0;
    double z_star = 0;
    double z_hat_star = 0;
    bool converged = false;
    int iterations = 0;
    double wall_seconds = 0;
    Eigen::VectorXd C0;   // t = 0 slice, illiquid-proportion grid
    Eigen::VectorXd Pi0;
    std::optional<PolicyField> policy;  // kept only when requested
};

class Runner {
public:
    Runner(ExperimentSpec spec, std::ostream& log);

    const ExperimentSpec& spec() const { return spec_; }

    /// Validates every parameter set first, then solves them with the worker
    /// pool.  Results come back in input order.
    std::vector<CellResult> solve_cells(const std::vector<ModelParams>& cells, bool keep_policy = false);

    /// Each returns the number of failed cells.
    int run_baseline();
    int run_solve();
    int run_tables();
    int run_figures();
    int run_simulate();
    int run_task(const std::string& task);

    std::string header(const std::string& what, std::uint64_t params_hash) const;

private:
    CellResult solve_cell(const ModelParams& params, bool keep_policy);
    std::string path(const std::string& name) const;
    void ensure_output_dir() const;

    ExperimentSpec spec_;
    std::ostream& log_;
};

/// Parameter block with one (rho, gamma, lambda) cell changed.
ModelParams with_cell(ModelParams base, double rho, double gamma, double lambda);

} // namespace illiquid
