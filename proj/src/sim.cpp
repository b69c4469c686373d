#include "illiquid/sim.hpp"

#include "illiquid/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <thread>

namespace illiquid {

namespace {

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo)
{
    const std::uint64_t prod = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(prod >> 32);
    lo = static_cast<std::uint32_t>(prod);
}

// (0, 1) with 53 random bits
inline double to_unit(std::uint32_t hi, std::uint32_t lo)
{
    const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 21) ^ (lo >> 11);
    return (static_cast<double>(bits & ((1ULL << 53) - 1)) + 0.5) * 0x1p-53;
}

} // namespace

Philox::Counter Philox::operator()(Counter ctr) const
{
    constexpr std::uint32_t M0 = 0xD2511F53u;
    constexpr std::uint32_t M1 = 0xCD9E8D57u;
    constexpr std::uint32_t W0 = 0x9E3779B9u;
    constexpr std::uint32_t W1 = 0xBB67AE85u;
    Key key = key_;
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += W0;
            key[1] += W1;
        }
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(M0, ctr[0], hi0, lo0);
        mulhilo(M1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
}

std::array<double, 2> Philox::normals(std::uint64_t path, std::uint32_t step, std::uint32_t stream) const
{
    const Counter r = (*this)({static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32), step, stream});
    const double u1 = to_unit(r[0], r[1]);
    const double u2 = to_unit(r[2], r[3]);
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    return {rad * std::cos(ang), rad * std::sin(ang)};
}

std::array<double, 4> Philox::normals4(std::uint64_t path, std::uint32_t step, std::uint32_t stream) const
{
    const Counter r = (*this)({static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32), step, stream});
    auto unit = [](std::uint32_t x) { return (static_cast<double>(x) + 0.5) * 0x1p-32; };
    const double rad0 = std::sqrt(-2.0 * std::log(unit(r[0])));
    const double ang0 = 2.0 * std::numbers::pi * unit(r[1]);
    const double rad1 = std::sqrt(-2.0 * std::log(unit(r[2])));
    const double ang1 = 2.0 * std::numbers::pi * unit(r[3]);
    return {rad0 * std::cos(ang0), rad0 * std::sin(ang0), rad1 * std::cos(ang1), rad1 * std::sin(ang1)};
}

double Philox::uniform(std::uint64_t path, std::uint32_t step, std::uint32_t stream) const
{
    const Counter r = (*this)({static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32), step, stream});
    return to_unit(r[0], r[1]);
}

void SimConfig::validate() const
{
    auto fail = [](const std::string& what) { throw ValidationError("invalid simulation config: " + what); };
    if (!(horizon > 0) || !std::isfinite(horizon)) fail("horizon must be > 0");
    if (!(dt_euler > 0) || dt_euler > 1e-2) fail("dt_euler must lie in (0, 0.01]");
    if (n_paths < 1) fail("n_paths must be >= 1");
    if (!(initial_wealth > 0)) fail("initial_wealth must be > 0");
    if (record_paths < 0 || record_paths > n_paths) fail("record_paths must lie in [0, n_paths]");
    if (record_stride < 1) fail("record_stride must be >= 1");
}

namespace {

constexpr std::uint32_t kStreamMarket = 0;  // W, B1, B2
constexpr std::uint32_t kStreamTrades = 2;  // inter-arrival times, counter = trade index
// Elapsed times beyond this fraction of the solved horizon reuse the last row before it.
constexpr double kPolicyHorizonFraction = 0.5;

struct Market {
    double b_L, sigma_L, p, beta, lambda;
    double y_drift, y_w, y_b1;  // log-step coefficients of the observed proxy
    double j_drift, j_vol;
};

Market market(const ModelParams& m)
{
    const SplitConstants sc = split_constants(m);
    const double r2 = m.rho * m.rho;
    const double var_Y = m.sigma_I * m.sigma_I * (r2 + m.gamma * m.gamma * (1.0 - r2));
    Market mk{};
    mk.b_L = m.liquid_asset ? m.b_L : 0.0;
    mk.sigma_L = m.sigma_L;
    mk.p = m.p;
    mk.beta = m.beta;
    mk.lambda = m.lambda;
    mk.y_drift = sc.b_Y - 0.5 * var_Y;
    mk.y_w = m.sigma_I * m.rho;
    mk.y_b1 = m.sigma_I * std::sqrt(1.0 - r2) * m.gamma;
    mk.j_drift = sc.b_J - 0.5 * sc.sigma_J * sc.sigma_J;
    mk.j_vol = sc.sigma_J;
    return mk;
}

double exponential(const Philox& rng, std::uint64_t path, std::uint32_t k, double lambda)
{
    if (!(lambda > 0)) return std::numeric_limits<double>::infinity();
    return -std::log(rng.uniform(path, k, kStreamTrades)) / lambda;
}

struct PathOutput {
    PathSummary summary;
    std::vector<TradeRecord> trades;
    std::vector<PathSample> samples;
    long long trade_events = 0;
    long long ratio_violations = 0;
    long long negativity_violations = 0;
};

PathOutput run_path(std::uint64_t path, const Market& mk, const PolicyField& policy, double phi0,
                    const SimConfig& cfg, const Philox& rng, bool record)
{
    PathOutput out;
    const double dt = cfg.dt_euler;
    const double sqdt = std::sqrt(dt);
    const auto n_steps = static_cast<std::uint32_t>(std::llround(cfg.horizon / dt));
    const double yhat_star = policy.z_hat_star;
    // rows near the truncated horizon carry the zero terminal condition
    const double T_pol = kPolicyHorizonFraction * policy.horizon();

    double X = 0, Y = 0, J = 1;
    std::uint32_t trade_index = 0;
    double tau_last = 0;
    auto rebalance = [&](double s, double R) {
        const double X_pre = X;
        const double A_pre = Y * J;
        X = R * (1.0 - yhat_star);
        Y = R * yhat_star;
        J = 1.0;
        tau_last = s;
        if (record) out.trades.push_back({s, X_pre, A_pre, X, Y});
        ++out.trade_events;
        if (R > 0 && std::abs(X / R - (1.0 - yhat_star)) > 1e-12) ++out.ratio_violations;
    };
    rebalance(0.0, cfg.initial_wealth);
    out.trade_events = 0;  // the initial allocation is not a Poisson date
    out.trades.clear();
    double next_trade = exponential(rng, path, trade_index++, mk.lambda);

    double acc = 0;
    double consumed = 0;
    bool absorbed = false;
    const double decay = std::exp(-mk.beta * dt);
    double discount = 1.0;
    for (std::uint32_t n = 0; n < n_steps; ++n, discount *= decay) {
        const double s = n * dt;
        bool traded = false;
        if (s >= next_trade) {
            rebalance(s, X + Y * J);
            ++out.summary.n_trades;
            next_trade += exponential(rng, path, trade_index++, mk.lambda);
            traded = true;
        }
        double c = 0;
        double pi = 0;
        if (X > 0) {
            const double R = X + Y;
            const double yhat = Y / R;
            const double e = std::min(s - tau_last, T_pol);
            policy.controls(e, yhat, c, pi);
            c *= R;
            pi *= R;
        }
        if (record && n % static_cast<std::uint32_t>(cfg.record_stride) == 0)
            out.samples.push_back({static_cast<int>(path), s, X, Y, Y * J, c, pi, traded});
        if (c > 0) acc += discount * utility(c, mk.p) * dt;
        consumed += c * dt;

        const auto z = rng.normals4(path, n, kStreamMarket);
        const double dW = z[0] * sqdt;
        const double dB1 = z[1] * sqdt;
        const double dB2 = z[2] * sqdt;
        if (X > 0) {
            X += pi * (mk.b_L * dt + mk.sigma_L * dW) - c * dt;
            if (X <= 0) {
                X = 0;
                absorbed = true;
            }
        }
        Y *= std::exp(mk.y_drift * dt + mk.y_w * dW + mk.y_b1 * dB1);
        if (mk.j_vol > 0 || mk.j_drift != 0) J *= std::exp(mk.j_drift * dt + mk.j_vol * dB2);
        if (X < 0 || Y < 0 || J < 0) ++out.negativity_violations;
    }
    const double H = n_steps * dt;
    const double R_H = X + Y * J;
    out.summary.tail = std::exp(-mk.beta * H) * phi0 * std::pow(R_H, mk.p);
    out.summary.discounted_utility = acc + out.summary.tail;
    out.summary.consumption_integral = consumed;
    out.summary.absorbed = absorbed;
    out.summary.final_wealth = R_H;
    return out;
}

} // namespace

SimulationResult simulate(const ModelParams& params, const PolicyField& policy, double phi0, const SimConfig& cfg)
{
    validate(params);
    cfg.validate();
    const Market mk = market(params);
    const Philox rng(cfg.seed);
    const auto n = static_cast<std::size_t>(cfg.n_paths);

    std::vector<PathOutput> outputs(n);
    const unsigned workers = std::max(1u, std::min(std::thread::hardware_concurrency(), 64u));
    auto work = [&](unsigned w) {
        for (std::size_t i = w; i < n; i += workers)
            outputs[i] = run_path(i, mk, policy, phi0, cfg, rng, static_cast<int>(i) < cfg.record_paths);
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
    }

    // reduction in path order
    SimulationResult res;
    res.phi0 = phi0;
    res.paths.reserve(n);
    double sum = 0, sum_sq = 0, tail = 0;
    for (std::size_t i = 0; i < n; ++i) {
        PathOutput& o = outputs[i];
        res.paths.push_back(o.summary);
        sum += o.summary.discounted_utility;
        sum_sq += o.summary.discounted_utility * o.summary.discounted_utility;
        tail += o.summary.tail;
        res.trade_events += o.trade_events;
        res.ratio_violations += o.ratio_violations;
        res.negativity_violations += o.negativity_violations;
        res.absorbed_paths += o.summary.absorbed ? 1 : 0;
        if (static_cast<int>(i) < cfg.record_paths) {
            res.trades.push_back(std::move(o.trades));
            res.samples.insert(res.samples.end(), o.samples.begin(), o.samples.end());
        }
    }
    const double nn = static_cast<double>(n);
    res.mean_utility = sum / nn;
    res.mean_tail = tail / nn;
    const double var = n > 1 ? std::max(sum_sq / nn - res.mean_utility * res.mean_utility, 0.0) * nn / (nn - 1) : 0.0;
    res.std_error = std::sqrt(var / nn);
    return res;
}

RatioFeedback policy_ratio_feedback(const ModelParams& params, const PolicyField& policy)
{
    const double hedge = params.liquid_asset ? params.rho * params.sigma_I / params.sigma_L : 0.0;
    return [hedge, &policy](double s, double Z, double& c_tilde, double& theta_tilde) {
        const double t = std::min(s, kPolicyHorizonFraction * policy.horizon());
        const double yhat = 1.0 / (1.0 + Z);
        c_tilde = (1.0 + Z) * policy.consumption(t, yhat);
        theta_tilde = (1.0 + Z) * policy.liquid_investment(t, yhat) - hedge * Z;
    };
}

RatioPaths simulate_ratio(const ModelParams& params, const RatioFeedback& feedback, double z0, const SimConfig& cfg,
                          int n_paths)
{
    validate(params);
    cfg.validate();
    if (!(z0 >= 0)) throw ValidationError("initial ratio must be >= 0");
    const DerivedConstants k = hjb_constants(params);
    const Market mk = market(params);
    const Philox rng(cfg.seed);
    const double dt = cfg.dt_euler;
    const double sqdt = std::sqrt(dt);
    const auto n_steps = static_cast<std::uint32_t>(std::llround(cfg.horizon / dt));
    const double hedge = k.hedge_ratio;

    RatioPaths out;
    out.s = Eigen::VectorXd::LinSpaced(n_steps + 1, 0.0, n_steps * dt);
    out.Z.resize(n_paths, n_steps + 1);
    out.X_over_Y.resize(n_paths, n_steps + 1);
    for (int path = 0; path < n_paths; ++path) {
        double Z = z0;
        double X = z0;
        double Y = 1.0;
        out.Z(path, 0) = Z;
        out.X_over_Y(path, 0) = X / Y;
        for (std::uint32_t n = 0; n < n_steps; ++n) {
            const double s = n * dt;
            const auto z = rng.normals4(static_cast<std::uint64_t>(path), n, kStreamMarket);
            const double dW = z[0] * sqdt;
            const double dB1 = z[1] * sqdt;
            if (Z > 0) {
                double c = 0, theta = 0;
                feedback(s, Z, c, theta);
                Z += -c * dt + theta * (k.Khat1 * dt + k.K2 * dW) + Z * (k.Khat3 * dt + k.K4 * dB1);
                if (Z <= 0) Z = 0;
            }
            if (X > 0) {
                double c = 0, theta = 0;
                feedback(s, X / Y, c, theta);
                const double pi = Y * (theta + hedge * X / Y);
                X += pi * (mk.b_L * dt + mk.sigma_L * dW) - Y * c * dt;
                if (X <= 0) X = 0;
            }
            Y *= std::exp(mk.y_drift * dt + mk.y_w * dW + mk.y_b1 * dB1);
            out.Z(path, n + 1) = Z;
            out.X_over_Y(path, n + 1) = X / Y;
        }
    }
    return out;
}

void write_samples_csv(const SimulationResult& result, const std::string& path, const std::string& header_comment)
{
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    out << header_comment << "path_id,s,X,Y,A,c,pi,is_trade\n";
    out.precision(10);
    for (const PathSample& p : result.samples)
        out << p.path_id << ',' << p.s << ',' << p.X << ',' << p.Y << ',' << p.A << ',' << p.c << ',' << p.pi << ','
            << (p.is_trade ? 1 : 0) << '\n';
}

std::string summary(const SimulationResult& r)
{
    std::ostringstream os;
    os.precision(10);
    os << "sim.n_paths=" << r.paths.size() << '\n'
       << "sim.mean_utility=" << r.mean_utility << '\n'
       << "sim.std_error=" << r.std_error << '\n'
       << "sim.mean_tail=" << r.mean_tail << '\n'
       << "sim.phi0=" << r.phi0 << '\n'
       << "sim.z_score=" << (r.std_error > 0 ? (r.mean_utility - r.phi0) / r.std_error : 0.0) << '\n'
       << "sim.trade_events=" << r.trade_events << '\n'
       << "sim.ratio_violations=" << r.ratio_violations << '\n'
       << "sim.negativity_violations=" << r.negativity_violations << '\n'
       << "sim.absorbed_paths=" << r.absorbed_paths << '\n';
    return os.str();
}

} // namespace illiquid
