#pragma once

// Feedback maps read off a solved surface.  Public grids are indexed by the
// illiquid proportion yhat = y/(x+y) = 1 - zhat, so column k of a
// PolicyField sits at the liquid-grid column n_space - k.

#include "illiquid/hjb.hpp"
#include "illiquid/model.hpp"

#include <Eigen/Dense>

#include <string>

namespace illiquid {

/// Phi_z and Phi_zz on the surface nodes (liquid-share columns).  The last
/// column (y = 0, z = infinity) holds the limits 0.
struct SurfaceDerivatives {
    Eigen::MatrixXd phi_z;
    Eigen::MatrixXd phi_zz;
};

SurfaceDerivatives derivatives(const ValueSurface& surface);

/// Normalized derivatives D1 = s^{p-1} Phi_z and D2 = s^{p-2} Phi_zz at node (i, j), s = 1 - zhat_j.
void normalized_derivatives(const ValueSurface& surface, Eigen::Index i, Eigen::Index j, double& D1, double& D2);

struct PolicyField {
    Eigen::MatrixXd C_hat;   // consumption per unit total wealth, rows = time, cols = yhat
    Eigen::MatrixXd Pi_hat;  // liquid-asset investment per unit total wealth
    double dt = 0;
    double dy = 0;
    double z_star = 0;       // x/y at trading dates, +inf when nothing goes to the illiquid asset
    double z_hat_star = 0;   // illiquid proportion at trading dates

    Eigen::Index n_time() const { return C_hat.rows() - 1; }
    Eigen::Index n_space() const { return C_hat.cols() - 1; }
    double horizon() const { return dt * static_cast<double>(n_time()); }

    /// Bilinear interpolation; t is clamped to [0, horizon].
    double consumption(double t, double yhat) const;
    double liquid_investment(double t, double yhat) const;
    /// Both maps with a single grid lookup.
    void controls(double t, double yhat, double& c, double& pi) const;
};

struct Allocation {
    double z_star;
    double z_hat_star;
};

/// argmax of Phi_tilde(0, .), ties toward the smaller illiquid proportion.
Allocation optimal_allocation(const ValueSurface& surface);

PolicyField build_policy(const ValueSurface& surface, const DerivedConstants& k, const DerivativeClamp& clamp = {});

/// Pointwise queries straight from the surface, linear in yhat and t.
double consumption_feedback(double t, double yhat, const ValueSurface& surface, const DerivedConstants& k,
                            const DerivativeClamp& clamp = {});
double liquid_feedback(double t, double yhat, const ValueSurface& surface, const DerivedConstants& k,
                       const DerivativeClamp& clamp = {});

/// e(1) = (V_M(1)/V(1))^{1/p} - 1, V(1) on the reported scale, V_M unconstrained.
double cost_of_illiquidity(double value_at_one, const ModelParams& params);

struct ObservationResponse {
    double y_tilde;
    double consumption;
    double liquid_investment;
};

/// Controls at elapsed time t for liquid wealth x_t when y0 was put in the
/// illiquid asset at the last trade and the observed noise is B1 (W set to 0).
ObservationResponse observation_response(double B1, double t, const ModelParams& params, const PolicyField& policy,
                                         double y0, double x_t);

/// Liquid amount per unit total wealth under continuous trading when the
/// illiquid fraction is held at yhat.
double merton_liquid_line(const ModelParams& params, double yhat);

/// CSV with columns t, zhat, C_hat, Pi_hat (zhat = illiquid proportion).
void write_policy_csv(const PolicyField& policy, const std::string& path, const std::string& header_comment,
                      int time_stride = 1);

} // namespace illiquid
