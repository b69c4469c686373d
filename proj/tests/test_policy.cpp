#include "illiquid/error.hpp"
#include "illiquid/hjb.hpp"
#include "illiquid/policy.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

using namespace illiquid;

namespace {

ModelParams params(double lambda, double gamma = 0.0, double rho = 0.0)
{
    ModelParams m;
    m.lambda = lambda;
    m.gamma = gamma;
    m.rho = rho;
    return m;
}

struct Solved {
    SolveResult result;
    PolicyField policy;
};

// Fast-profile solves are shared between cases.
const Solved& solved(const ModelParams& m)
{
    static std::map<std::string, Solved> cache;
    const std::string key = describe(m);
    auto it = cache.find(key);
    if (it == cache.end()) {
        const SchemeConfig cfg = SchemeConfig::fast(m.lambda);
        SolveResult r = solve(m, cfg);
        REQUIRE(r.converged);
        PolicyField pf = build_policy(r.surface, hjb_constants(m), cfg.clamp);
        it = cache.emplace(key, Solved{std::move(r), std::move(pf)}).first;
    }
    return it->second;
}

// u(zhat) = (1-zhat)^p Phi(zhat/(1-zhat)) on a one-row surface.
template <typename F>
ValueSurface manufactured(F Phi, double p, int M)
{
    ValueSurface s;
    s.p = p;
    s.dz = 1.0 / M;
    s.dt = 1.0;
    s.T = 1.0;
    s.phi_tilde.resize(2, M + 1);
    for (int j = 0; j < M; ++j) {
        const double zh = j * s.dz;
        s.phi_tilde(0, j) = s.phi_tilde(1, j) = std::pow(1 - zh, p) * Phi(zh / (1 - zh));
    }
    s.phi_tilde(0, M) = s.phi_tilde(1, M) = s.phi_tilde(0, M - 1);
    return s;
}

} // namespace

TEST_SUITE("policy")
{
    TEST_CASE("derivatives of a constant normalized surface")
    {
        // phi_tilde = c  <=>  Phi = c (1+z)^p
        const double c = 1.7, p = 0.5;
        ValueSurface s;
        s.p = p;
        s.dz = 0.02;
        s.dt = 1;
        s.phi_tilde = Eigen::MatrixXd::Constant(1, 51, c);
        const SurfaceDerivatives d = derivatives(s);
        for (int j = 0; j < 50; ++j) {
            const double z = from_compact(j * s.dz);
            CHECK(d.phi_z(0, j) == doctest::Approx(c * p * std::pow(1 + z, p - 1)).epsilon(1e-12));
            CHECK(d.phi_zz(0, j) == doctest::Approx(c * p * (p - 1) * std::pow(1 + z, p - 2)).epsilon(1e-12));
        }
        // (1+z)^p at z = 1 (zhat = 0.5): p 2^{p-1}
        s.phi_tilde.setOnes();
        CHECK(derivatives(s).phi_z(0, 25) == doctest::Approx(0.35355).epsilon(1e-5));
    }

    TEST_CASE("consumption from a unit marginal value")
    {
        // Phi = 1 + z has Phi_z = 1, so C_hat = yhat up to the O(dz^2) difference error
        const ValueSurface s = manufactured([](double z) { return 1 + z; }, 0.5, 50);
        const DerivedConstants k = hjb_constants(ModelParams{});
        CHECK(consumption_feedback(0.0, 0.5, s, k) == doctest::Approx(0.5).epsilon(5e-3));
        CHECK(consumption_feedback(0.0, 0.3, s, k) == doctest::Approx(0.3).epsilon(5e-3));
        CHECK(consumption_feedback(0.0, 1.0, s, k) == 0.0);
    }

    TEST_CASE("theta matches a 1-D grid argmax")
    {
        const double p = 0.5;
        const ValueSurface s = manufactured([p](double z) { return 2 * std::pow(1 + z, p) + std::log1p(z); }, p, 50);
        const DerivedConstants k = hjb_constants(params(5, 0.0, 0.4));
        for (int j = 5; j < 45; j += 10) {
            double D1 = 0, D2 = 0;
            normalized_derivatives(s, 0, j, D1, D2);
            REQUIRE(D2 < 0);
            double best = -1e300, arg = 0;
            const double step = 1e-4;
            for (double th = -5; th <= 5; th += step) {
                const double v = th * k.K1 * D1 + 0.5 * th * th * k.K2 * k.K2 * D2;
                if (v > best) {
                    best = v;
                    arg = th;
                }
            }
            const double yhat = 1.0 - j * s.dz;
            const double pi = liquid_feedback(0.0, yhat, s, k);
            CHECK(pi - k.hedge_ratio * (1 - yhat) == doctest::Approx(arg).epsilon(step));
        }
    }

    TEST_CASE("no liquid drift and no correlation gives no liquid investment")
    {
        ModelParams m;
        m.b_L = 0.0;
        const DerivedConstants k = hjb_constants(m);
        const ValueSurface s = manufactured([](double z) { return std::sqrt(1 + z) * (2 + std::sin(z)); }, 0.5, 25);
        const PolicyField pf = build_policy(s, k);
        CHECK(pf.Pi_hat.cwiseAbs().maxCoeff() == 0.0);
    }

    TEST_CASE("feedback grids on a solved surface")
    {
        for (auto [lambda, gamma, rho] : {std::tuple{5.0, 0.0, 0.0}, std::tuple{10.0, 1.0, -0.5}}) {
            const Solved& sv = solved(params(lambda, gamma, rho));
            const PolicyField& pf = sv.policy;
            const Eigen::Index M = pf.n_space();
            CHECK((pf.C_hat.array() >= 0).all());
            CHECK(pf.Pi_hat.allFinite());
            CHECK(pf.C_hat.col(M).cwiseAbs().maxCoeff() == 0.0);
            CHECK(pf.Pi_hat.col(M).cwiseAbs().maxCoeff() == 0.0);
            CHECK(pf.z_hat_star > 0);
            CHECK(pf.z_hat_star < 1);
            const auto a = optimal_allocation(sv.result.surface);
            CHECK(a.z_hat_star == pf.z_hat_star);
            CHECK(sv.result.surface.zhat(h0_argmax(sv.result.surface)) == doctest::Approx(1 - pf.z_hat_star));
            CHECK(pf.z_star == doctest::Approx((1 - pf.z_hat_star) / pf.z_hat_star));
            // interpolation hits the nodes
            CHECK(pf.consumption(0.0, 0.4) == doctest::Approx(pf.C_hat(0, static_cast<Eigen::Index>(std::lround(0.4 / pf.dy)))));
            double c = 0, pi = 0;
            pf.controls(0.3, 0.37, c, pi);
            CHECK(c == doctest::Approx(pf.consumption(0.3, 0.37)));
            CHECK(pi == doctest::Approx(pf.liquid_investment(0.3, 0.37)));
        }
        // consumption at t = 0 stays in the figure range
        const PolicyField& pf = solved(params(5)).policy;
        CHECK(pf.C_hat.row(0).maxCoeff() <= 0.4);
    }

    TEST_CASE("allocation is invariant under scaling of the value")
    {
        ValueSurface s = solved(params(5)).result.surface;
        const Allocation a = optimal_allocation(s);
        s.phi_tilde *= 3.7;
        const Allocation b = optimal_allocation(s);
        CHECK(a.z_hat_star == b.z_hat_star);
    }

    TEST_CASE("participation threshold")
    {
        // rho = 0.9: participation iff b_I > 0.135
        for (double b_I : {0.10, 0.12, 0.16, 0.20}) {
            ModelParams m = params(5, 0.0, 0.9);
            m.b_I = b_I;
            const PolicyField& pf = solved(m).policy;
            INFO("b_I=", b_I, " z_hat_star=", pf.z_hat_star);
            CHECK((pf.z_hat_star > 0) == participates(m));
            CHECK(pf.z_hat_star < 1);
        }
    }

    TEST_CASE("allocation is nondecreasing in the trading intensity")
    {
        for (double gamma : {0.0, 1.0}) {
            double prev = 0;
            for (double lambda : {1.0, 3.0, 5.0, 10.0, 50.0}) {
                const double z = solved(params(lambda, gamma)).policy.z_hat_star;
                CHECK(z >= prev);
                prev = z;
            }
        }
    }

    TEST_CASE("cost of illiquidity")
    {
        const ModelParams m;
        CHECK(cost_of_illiquidity(merton_value(m, false), m) == doctest::Approx(0.0).scale(1.0));
        CHECK_THROWS_AS(cost_of_illiquidity(0.0, m), ValidationError);
        const SolveResult& r1 = solved(params(1)).result;
        CHECK(cost_of_illiquidity(r1.value_at_one(), params(1)) == doctest::Approx(0.067).epsilon(0.005 / 0.067));
        const SolveResult& r2 = solved(params(50, 1.0, -0.5)).result;
        CHECK(std::abs(cost_of_illiquidity(r2.value_at_one(), params(50, 1.0, -0.5)) - 0.0120) < 0.005);
    }

    TEST_CASE("fast trading approaches the continuous-trading liquid position")
    {
        const ModelParams m = params(50);
        const PolicyField& pf = solved(m).policy;
        CHECK(pf.z_hat_star == doctest::Approx(0.4));
        const double pi = pf.liquid_investment(0.0, pf.z_hat_star);
        CHECK(merton_liquid_line(m, pf.z_hat_star) == doctest::Approx(0.3));
        CHECK(pi == doctest::Approx(0.3).epsilon(0.03 / 0.3));
        CHECK(merton_liquid_line(m, 0.0) == doctest::Approx(0.3));
    }

    TEST_CASE("observation response")
    {
        const ModelParams m0 = params(5, 0.0);
        const PolicyField& p0 = solved(m0).policy;
        const double c_lo = observation_response(-1.5, 1.0, m0, p0, 0.5, 0.5).consumption;
        const double c_hi = observation_response(1.5, 1.0, m0, p0, 0.5, 0.5).consumption;
        CHECK(c_lo == c_hi);

        double prev_slope = 0;
        for (double gamma : {0.5, 1.0}) {
            const ModelParams m = params(5, gamma);
            const PolicyField& pf = solved(m).policy;
            double prev = -1;
            for (double B1 = -2; B1 <= 2; B1 += 0.25) {
                const double c = observation_response(B1, 1.0, m, pf, 0.5, 0.5).consumption;
                CHECK(c > prev);
                prev = c;
            }
            const double slope = observation_response(0.5, 1.0, m, pf, 0.5, 0.5).consumption -
                                 observation_response(-0.5, 1.0, m, pf, 0.5, 0.5).consumption;
            CHECK(slope > prev_slope);
            prev_slope = slope;

            // B1 = 0, t -> 0 recovers the t = 0 feedback at the initial proportion
            const ObservationResponse r = observation_response(0.0, 1e-9, m, pf, 0.5, 0.5);
            CHECK(r.consumption == doctest::Approx(pf.consumption(0.0, 0.5)).epsilon(1e-6));
        }
    }

    TEST_CASE("policy CSV")
    {
        const PolicyField& pf = solved(params(5)).policy;
        const std::string path = (std::filesystem::temp_directory_path() / "illiquid_policy.csv").string();
        write_policy_csv(pf, path, "# head\n", 10);
        std::ifstream in(path);
        std::string line;
        std::getline(in, line);
        std::getline(in, line);
        CHECK(line == "t,zhat,C_hat,Pi_hat");
        int rows = 0;
        while (std::getline(in, line)) ++rows;
        CHECK(rows == (pf.n_time() / 10 + 1) * (pf.n_space() + 1));
        std::filesystem::remove(path);
    }
}
