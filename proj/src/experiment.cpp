#include "illiquid/experiment.hpp"

#include "illiquid/error.hpp"
#include "illiquid/hash.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace illiquid {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where)
{
    if (!obj.is_object()) throw ValidationError(where + ": expected a JSON object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (!allowed.count(key)) throw ValidationError(where + ": unknown field '" + key + "'");
    }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where)
{
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(where + "." + key + ": wrong type");
    }
}

template <typename T>
void read_opt(const json& obj, const char* key, std::optional<T>& out, const std::string& where)
{
    if (!obj.contains(key)) return;
    T v{};
    read(obj, key, v, where);
    out = v;
}

ModelParams parse_params(const json& j)
{
    check_keys(j, {"b_L", "sigma_L", "b_I", "sigma_I", "rho", "beta", "p", "lambda", "gamma", "liquid_asset"},
               "params");
    ModelParams m;
    read(j, "b_L", m.b_L, "params");
    read(j, "sigma_L", m.sigma_L, "params");
    read(j, "b_I", m.b_I, "params");
    read(j, "sigma_I", m.sigma_I, "params");
    read(j, "rho", m.rho, "params");
    read(j, "beta", m.beta, "params");
    read(j, "p", m.p, "params");
    read(j, "lambda", m.lambda, "params");
    read(j, "gamma", m.gamma, "params");
    read(j, "liquid_asset", m.liquid_asset, "params");
    return m;
}

json params_json(const ModelParams& m)
{
    return {{"b_L", m.b_L},     {"sigma_L", m.sigma_L}, {"b_I", m.b_I},         {"sigma_I", m.sigma_I},
            {"rho", m.rho},     {"beta", m.beta},       {"p", m.p},             {"lambda", m.lambda},
            {"gamma", m.gamma}, {"liquid_asset", m.liquid_asset}};
}

const std::set<std::string> kTasks{"baseline", "solve", "tables", "figures", "simulate"};

} // namespace

ExperimentSpec parse_spec(const json& j)
{
    check_keys(j, {"params", "profile", "scheme", "sweep", "tables", "figures", "simulation", "output_dir", "tasks",
                   "workers", "kernel_cache", "csv_time_rows"},
               "config");
    ExperimentSpec s;
    if (j.contains("params")) s.params = parse_params(j.at("params"));
    if (j.contains("profile")) {
        std::string name;
        read(j, "profile", name, "config");
        s.profile = scheme_profile_from_string(name);
    }
    if (j.contains("scheme")) {
        const json& o = j.at("scheme");
        check_keys(o, {"T", "dt", "dz", "fixed_point_tol", "max_outer_iters", "clamp_m", "clamp_d", "grid_method",
                       "grid_size"},
                   "scheme");
        read_opt(o, "T", s.scheme.T, "scheme");
        read_opt(o, "dt", s.scheme.dt, "scheme");
        read_opt(o, "dz", s.scheme.dz, "scheme");
        read_opt(o, "fixed_point_tol", s.scheme.fixed_point_tol, "scheme");
        read_opt(o, "max_outer_iters", s.scheme.max_outer_iters, "scheme");
        read_opt(o, "clamp_m", s.scheme.clamp_m, "scheme");
        read_opt(o, "clamp_d", s.scheme.clamp_d, "scheme");
        read_opt(o, "grid_size", s.scheme.grid_size, "scheme");
        if (o.contains("grid_method")) {
            std::string name;
            read(o, "grid_method", name, "scheme");
            s.scheme.grid_method = grid_method_from_string(name);
        }
    }
    if (j.contains("sweep")) {
        const json& o = j.at("sweep");
        check_keys(o, {"lambda", "gamma", "rho"}, "sweep");
        read(o, "lambda", s.sweep.lambda, "sweep");
        read(o, "gamma", s.sweep.gamma, "sweep");
        read(o, "rho", s.sweep.rho, "sweep");
    }
    if (j.contains("tables")) {
        const json& o = j.at("tables");
        check_keys(o, {"lambda_allocation", "no_liquid", "tol_value", "tol_cost", "tol_allocation"}, "tables");
        read(o, "lambda_allocation", s.tables.lambda_allocation, "tables");
        read(o, "no_liquid", s.tables.no_liquid, "tables");
        read(o, "tol_value", s.tables.tol_value, "tables");
        read(o, "tol_cost", s.tables.tol_cost, "tables");
        read(o, "tol_allocation", s.tables.tol_allocation, "tables");
    }
    if (j.contains("figures")) {
        const json& o = j.at("figures");
        check_keys(o, {"rho", "lambda", "policy_lambda", "policy_rho", "response_gamma", "response_lambda",
                       "response_t", "response_x", "response_y0", "response_b1_min", "response_b1_max",
                       "response_points"},
                   "figures");
        FigureOptions& f = s.figures;
        read(o, "rho", f.rho, "figures");
        read(o, "lambda", f.lambda, "figures");
        read(o, "policy_lambda", f.policy_lambda, "figures");
        read(o, "policy_rho", f.policy_rho, "figures");
        read(o, "response_gamma", f.response_gamma, "figures");
        read(o, "response_lambda", f.response_lambda, "figures");
        read(o, "response_t", f.response_t, "figures");
        read(o, "response_x", f.response_x, "figures");
        read(o, "response_y0", f.response_y0, "figures");
        read(o, "response_b1_min", f.response_b1_min, "figures");
        read(o, "response_b1_max", f.response_b1_max, "figures");
        read(o, "response_points", f.response_points, "figures");
        if (f.response_points < 2) throw ValidationError("figures.response_points must be >= 2");
    }
    if (j.contains("simulation")) {
        const json& o = j.at("simulation");
        check_keys(o, {"horizon", "dt_euler", "n_paths", "seed", "initial_wealth", "record_paths", "record_stride"},
                   "simulation");
        SimConfig& c = s.simulation;
        read(o, "horizon", c.horizon, "simulation");
        read(o, "dt_euler", c.dt_euler, "simulation");
        read(o, "n_paths", c.n_paths, "simulation");
        read(o, "seed", c.seed, "simulation");
        read(o, "initial_wealth", c.initial_wealth, "simulation");
        read(o, "record_paths", c.record_paths, "simulation");
        read(o, "record_stride", c.record_stride, "simulation");
    }
    read(j, "output_dir", s.output_dir, "config");
    read(j, "tasks", s.tasks, "config");
    for (const std::string& t : s.tasks)
        if (!kTasks.count(t)) throw ValidationError("config.tasks: unknown task '" + t + "'");
    read(j, "workers", s.workers, "config");
    if (s.workers < 0) throw ValidationError("config.workers must be >= 0");
    read(j, "kernel_cache", s.kernel_cache, "config");
    read(j, "csv_time_rows", s.csv_time_rows, "config");
    if (s.csv_time_rows < 2) throw ValidationError("config.csv_time_rows must be >= 2");
    return s;
}

ExperimentSpec load_spec(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("config " + path + ": " + e.what());
    }
    return parse_spec(j);
}

json to_json(const ExperimentSpec& s)
{
    json j;
    j["params"] = params_json(s.params);
    j["profile"] = to_string(s.profile);
    json sc = json::object();
    if (s.scheme.T) sc["T"] = *s.scheme.T;
    if (s.scheme.dt) sc["dt"] = *s.scheme.dt;
    if (s.scheme.dz) sc["dz"] = *s.scheme.dz;
    if (s.scheme.fixed_point_tol) sc["fixed_point_tol"] = *s.scheme.fixed_point_tol;
    if (s.scheme.max_outer_iters) sc["max_outer_iters"] = *s.scheme.max_outer_iters;
    if (s.scheme.clamp_m) sc["clamp_m"] = *s.scheme.clamp_m;
    if (s.scheme.clamp_d) sc["clamp_d"] = *s.scheme.clamp_d;
    if (s.scheme.grid_method) sc["grid_method"] = to_string(*s.scheme.grid_method);
    if (s.scheme.grid_size) sc["grid_size"] = *s.scheme.grid_size;
    j["scheme"] = sc;
    j["sweep"] = {{"lambda", s.sweep.lambda}, {"gamma", s.sweep.gamma}, {"rho", s.sweep.rho}};
    j["tables"] = {{"lambda_allocation", s.tables.lambda_allocation},
                   {"no_liquid", s.tables.no_liquid},
                   {"tol_value", s.tables.tol_value},
                   {"tol_cost", s.tables.tol_cost},
                   {"tol_allocation", s.tables.tol_allocation}};
    const FigureOptions& f = s.figures;
    j["figures"] = {{"rho", f.rho},
                    {"lambda", f.lambda},
                    {"policy_lambda", f.policy_lambda},
                    {"policy_rho", f.policy_rho},
                    {"response_gamma", f.response_gamma},
                    {"response_lambda", f.response_lambda},
                    {"response_t", f.response_t},
                    {"response_x", f.response_x},
                    {"response_y0", f.response_y0},
                    {"response_b1_min", f.response_b1_min},
                    {"response_b1_max", f.response_b1_max},
                    {"response_points", f.response_points}};
    const SimConfig& c = s.simulation;
    j["simulation"] = {{"horizon", c.horizon},
                       {"dt_euler", c.dt_euler},
                       {"n_paths", c.n_paths},
                       {"seed", c.seed},
                       {"initial_wealth", c.initial_wealth},
                       {"record_paths", c.record_paths},
                       {"record_stride", c.record_stride}};
    j["output_dir"] = s.output_dir;
    j["tasks"] = s.tasks;
    j["workers"] = s.workers;
    j["kernel_cache"] = s.kernel_cache;
    j["csv_time_rows"] = s.csv_time_rows;
    return j;
}

SchemeConfig ExperimentSpec::scheme_for(double lambda) const
{
    SchemeConfig c = SchemeConfig::for_profile(profile, lambda);
    if (scheme.T) c.T = *scheme.T;
    if (scheme.dt) c.dt = *scheme.dt;
    if (scheme.dz) {
        const double n = 1.0 / *scheme.dz;
        c.n_space = static_cast<int>(std::lround(n));
        if (!(*scheme.dz > 0) || std::abs(n - c.n_space) > 1e-9 * n)
            throw ValidationError("scheme.dz must be 1/n for an integer n");
    }
    if (scheme.fixed_point_tol) c.fixed_point_tol = *scheme.fixed_point_tol;
    if (scheme.max_outer_iters) c.max_outer_iters = *scheme.max_outer_iters;
    if (scheme.clamp_m) c.clamp.m = *scheme.clamp_m;
    if (scheme.clamp_d) c.clamp.d = *scheme.clamp_d;
    if (scheme.grid_method) c.grid_method = *scheme.grid_method;
    if (scheme.grid_size) c.grid_size = *scheme.grid_size;
    c.validate();
    return c;
}

std::uint64_t ExperimentSpec::hash() const
{
    json j = to_json(*this);
    for (const char* k : {"output_dir", "tasks", "workers", "kernel_cache", "csv_time_rows"}) j.erase(k);
    Fnv1a f;
    f.text(j.dump());
    return f.h;
}

// ---------------------------------------------------------------- references

namespace {

using Row = std::map<int, double>;  // lambda -> value

const Row* lookup(const std::map<std::pair<int, int>, Row>& table, double rho, double gamma)
{
    const int r = static_cast<int>(std::lround(rho * 10));
    const int g = static_cast<int>(std::lround(gamma * 10));
    if (std::abs(rho * 10 - r) > 1e-9 || std::abs(gamma * 10 - g) > 1e-9) return nullptr;
    auto it = table.find({r, g});
    return it == table.end() ? nullptr : &it->second;
}

std::optional<double> at_lambda(const Row* row, double lambda)
{
    if (!row) return std::nullopt;
    const int l = static_cast<int>(std::lround(lambda));
    if (std::abs(lambda - l) > 1e-9) return std::nullopt;
    auto it = row->find(l);
    if (it == row->end()) return std::nullopt;
    return it->second;
}

const std::map<std::pair<int, int>, Row> kValue{
    {{0, 0}, {{1, 1.66641}, {5, 1.70493}, {10, 1.71257}, {50, 1.71945}}},
    {{0, 10}, {{1, 1.66995}, {5, 1.71121}, {10, 1.71656}, {50, 1.72036}}},
};
const Row kValueNoLiquid{{1, 1.61973}, {5, 1.65377}, {10, 1.65987}, {50, 1.66526}};

const std::map<std::pair<int, int>, Row> kCost{
    {{0, 0}, {{1, 0.067}, {5, 0.0193}, {10, 0.0103}, {50, 0.00218}}},
    {{0, 10}, {{1, 0.062}, {5, 0.0119}, {10, 0.0056}, {50, 0.00112}}},
    {{5, 0}, {{1, 0.0337}, {5, 0.00892}, {10, 0.00462}, {50, 0.00095}}},
    {{5, 10}, {{1, 0.0303}, {5, 0.00491}, {10, 0.00237}, {50, 0.00051}}},
    {{-5, 0}, {{1, 0.2511}, {5, 0.1127}, {10, 0.0700}, {50, 0.0161}}},
    {{-5, 10}, {{1, 0.2493}, {5, 0.1030}, {10, 0.0614}, {50, 0.0120}}},
};

const std::map<std::pair<int, int>, Row> kAllocation{
    {{0, 0}, {{1, 0.18}, {3, 0.3}, {5, 0.34}, {10, 0.36}, {50, 0.4}}},
    {{0, 10}, {{1, 0.18}, {3, 0.32}, {5, 0.36}, {10, 0.38}, {50, 0.4}}},
};

bool is_reference_block(const ModelParams& m)
{
    const ModelParams r = ModelParams::reference();
    return m.b_L == r.b_L && m.sigma_L == r.sigma_L && m.b_I == r.b_I && m.sigma_I == r.sigma_I &&
           m.beta == r.beta && m.p == r.p;
}

} // namespace

std::optional<double> reference_value(double rho, double gamma, double lambda, bool liquid_asset)
{
    if (!liquid_asset) return (rho == 0 && gamma == 0) ? at_lambda(&kValueNoLiquid, lambda) : std::nullopt;
    return at_lambda(lookup(kValue, rho, gamma), lambda);
}

std::optional<double> reference_cost(double rho, double gamma, double lambda)
{
    return at_lambda(lookup(kCost, rho, gamma), lambda);
}

std::optional<double> reference_allocation(double gamma, double lambda)
{
    return at_lambda(lookup(kAllocation, 0.0, gamma), lambda);
}

// ---------------------------------------------------------------- runner

ModelParams with_cell(ModelParams base, double rho, double gamma, double lambda)
{
    base.rho = rho;
    base.gamma = gamma;
    base.lambda = lambda;
    return base;
}

namespace {

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v + 0.0);
    return buf;
}

std::string opt_fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

void write_file(const std::string& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    out << content;
}

std::mutex g_log_mutex;

} // namespace

Runner::Runner(ExperimentSpec spec, std::ostream& log) : spec_(std::move(spec)), log_(log) {}

std::string Runner::path(const std::string& name) const { return (fs::path(spec_.output_dir) / name).string(); }

void Runner::ensure_output_dir() const
{
    std::error_code ec;
    fs::create_directories(fs::path(spec_.output_dir) / "cache", ec);
    if (ec) throw ValidationError("cannot create output directory " + spec_.output_dir + ": " + ec.message());
}

std::string Runner::header(const std::string& what, std::uint64_t params_hash) const
{
    std::ostringstream os;
    os << "# " << what << "\n# params_hash=" << hex64(params_hash) << " profile=" << to_string(spec_.profile)
       << "\n";
    return os.str();
}

CellResult Runner::solve_cell(const ModelParams& params, bool keep_policy)
{
    CellResult r;
    r.params = params;
    try {
        r.scheme = spec_.scheme_for(params.lambda);
        const DerivedConstants k = hjb_constants(params);
        KernelTable kernel;
        bool loaded = false;
        std::string kpath;
        if (spec_.kernel_cache) {
            const std::uint64_t key = kernel_cache_key(k, r.scheme.grid_method, r.scheme.grid_size,
                                                       r.scheme.n_time(), r.scheme.n_space, r.scheme.dt);
            kpath = path("cache/kernel-" + hex64(key) + ".bin");
            loaded = kernel.load(kpath, key);
            if (!loaded) {
                kernel = build_kernel(k, r.scheme);
                // write then rename so concurrent cells never see a partial file
                const std::string tmp = kpath + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
                kernel.save(tmp, key);
                std::error_code ec;
                fs::rename(tmp, kpath, ec);
            }
        } else {
            kernel = build_kernel(k, r.scheme);
        }
        const SolveResult sr = fixed_point(r.scheme, k, kernel);
        r.phi0 = sr.phi0;
        r.value_at_one = sr.value_at_one();
        r.cost = cost_of_illiquidity(r.value_at_one, params);
        r.converged = sr.converged;
        r.iterations = sr.iterations();
        r.wall_seconds = sr.wall_seconds;
        PolicyField pf = build_policy(sr.surface, k, r.scheme.clamp);
        r.z_star = pf.z_star;
        r.z_hat_star = pf.z_hat_star;
        r.C0 = pf.C_hat.row(0).transpose();
        r.Pi0 = pf.Pi_hat.row(0).transpose();
        if (keep_policy) r.policy = std::move(pf);
        r.ok = sr.converged;
        if (!sr.converged) {
            r.numerical_failure = true;
            r.error = "fixed point not converged after " + std::to_string(sr.iterations()) + " iterations";
        }
    } catch (const NumericalError& e) {
        r.ok = false;
        r.numerical_failure = true;
        r.error = e.what();
    }
    std::lock_guard<std::mutex> lock(g_log_mutex);
    log_ << "cell " << describe(params) << (r.ok ? " ok" : " FAILED: " + r.error) << '\n';
    return r;
}

std::vector<CellResult> Runner::solve_cells(const std::vector<ModelParams>& cells, bool keep_policy)
{
    // validate everything up front
    for (const ModelParams& m : cells) {
        const DerivedConstants k = hjb_constants(m);
        cfl_margin(spec_.scheme_for(m.lambda), k);
    }
    ensure_output_dir();
    std::vector<CellResult> out(cells.size());
    unsigned workers = spec_.workers > 0 ? static_cast<unsigned>(spec_.workers) : std::thread::hardware_concurrency();
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(cells.size())));
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i; (i = next++) < cells.size();) out[i] = solve_cell(cells[i], keep_policy);
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    return out;
}

int Runner::run_baseline()
{
    const ModelParams& m = spec_.params;
    const DerivedConstants k = hjb_constants(m);
    const SplitConstants s = split_constants(m);
    std::ostringstream os;
    os << "params_hash=" << hex64(spec_.hash()) << '\n';
    auto kv = [&](const char* key, double v) { os << key << '=' << fmt(v) << '\n'; };
    kv("k_p", k.k_p);
    kv("k_p_unconstrained", compute_kp_unconstrained(m));
    kv("b_Y", s.b_Y);
    kv("b_J", s.b_J);
    kv("sigma_J", s.sigma_J);
    kv("k_LYp", s.k_LYp);
    kv("k_Jp", s.k_Jp);
    kv("K_lambda", k.K_lambda);
    kv("K1", k.K1);
    kv("K2", k.K2);
    kv("K3", k.K3);
    kv("K4", k.K4);
    kv("Khat1", k.Khat1);
    kv("Khat3", k.Khat3);
    kv("merton_value_constrained", merton_value(m, true));
    kv("merton_value_unconstrained", merton_value(m, false));
    kv("merton_illiquid_share", merton_illiquid_share(m, true));
    kv("merton_liquid_share", merton_liquid_share(m, true));
    kv("merton_consumption", merton_consumption_rate(m, true));
    os << "participates=" << (participates(m) ? 1 : 0) << '\n';
    if (k0_linear_coefficient(m) > 0) kv("K0_no_source", solve_K0(m, 0.0));
    log_ << os.str();
    return 0;
}

int Runner::run_solve()
{
    const ModelParams& m = spec_.params;
    const SchemeConfig cfg = spec_.scheme_for(m.lambda);
    const DerivedConstants k = hjb_constants(m);
    cfl_margin(cfg, k);
    ensure_output_dir();
    const std::uint64_t h = solve_hash(m, cfg);

    KernelTable kernel;
    const std::uint64_t key = kernel_cache_key(k, cfg.grid_method, cfg.grid_size, cfg.n_time(), cfg.n_space, cfg.dt);
    const std::string kpath = path("cache/kernel-" + hex64(key) + ".bin");
    if (!(spec_.kernel_cache && kernel.load(kpath, key))) {
        kernel = build_kernel(k, cfg);
        if (spec_.kernel_cache) kernel.save(kpath, key);
    }
    const SolveResult sr = fixed_point(cfg, k, kernel);
    const PolicyField pf = build_policy(sr.surface, k, cfg.clamp);

    save_surface(sr.surface, path("cache/surface-" + hex64(h) + ".bin"), h);
    const int stride = std::max(1, cfg.n_time() / (spec_.csv_time_rows - 1));
    write_surface_csv(sr.surface, path("surface.csv"), header("surface", h), stride);
    write_policy_csv(pf, path("policy.csv"), header("policy", h), stride);
    {
        std::ostringstream hist;
        hist << header("outer iteration history", h) << "n,phi0\n";
        for (std::size_t n = 0; n < sr.outer_history.size(); ++n) hist << n << ',' << fmt(sr.outer_history[n]) << '\n';
        write_file(path("history.csv"), hist.str());
    }

    std::ostringstream os;
    os << "params_hash=" << hex64(h) << '\n'
       << "profile=" << to_string(spec_.profile) << '\n'
       << "T=" << fmt(cfg.T) << '\n'
       << "dt=" << fmt(cfg.dt) << '\n'
       << "dz=" << fmt(cfg.dz()) << '\n'
       << "phi0=" << fmt(sr.phi0) << '\n'
       << "V1=" << fmt(sr.value_at_one()) << '\n'
       << "e1=" << fmt(cost_of_illiquidity(sr.value_at_one(), m)) << '\n'
       << "z_star=" << fmt(pf.z_star) << '\n'
       << "z_hat_star=" << fmt(pf.z_hat_star) << '\n'
       << "iterations=" << sr.iterations() << '\n'
       << "converged=" << (sr.converged ? 1 : 0) << '\n'
       << "wall_seconds=" << fmt(sr.wall_seconds) << '\n';
    log_ << os.str();
    if (!sr.converged) throw NumericalError("fixed point did not converge within max_outer_iters");
    return 0;
}

int Runner::run_tables()
{
    const ModelParams& base = spec_.params;
    const bool ref = is_reference_block(base);
    const std::uint64_t h = spec_.hash();
    std::vector<ModelParams> cells;
    for (double rho : spec_.sweep.rho)
        for (double g : spec_.sweep.gamma)
            for (double l : spec_.sweep.lambda) cells.push_back(with_cell(base, rho, g, l));
    const std::size_t n_main = cells.size();
    for (double g : spec_.sweep.gamma)
        for (double l : spec_.tables.lambda_allocation) cells.push_back(with_cell(base, base.rho, g, l));
    const std::size_t n_alloc = cells.size() - n_main;
    if (spec_.tables.no_liquid) {
        for (double l : spec_.sweep.lambda) {
            ModelParams m = with_cell(base, 0.0, 0.0, l);
            m.liquid_asset = false;
            cells.push_back(m);
        }
    }
    // identical cells are solved once
    std::vector<ModelParams> unique;
    std::vector<std::size_t> index(cells.size());
    std::map<std::uint64_t, std::size_t> seen;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const std::uint64_t key = solve_hash(cells[i], spec_.scheme_for(cells[i].lambda));
        auto [it, inserted] = seen.emplace(key, unique.size());
        if (inserted) unique.push_back(cells[i]);
        index[i] = it->second;
    }
    const std::vector<CellResult> solved = solve_cells(unique);
    auto result = [&](std::size_t i) -> const CellResult& { return solved[index[i]]; };

    int failed = 0;
    for (const CellResult& r : solved) failed += r.ok ? 0 : 1;

    auto status = [](const CellResult& r) { return r.ok ? std::string("ok") : std::string("failed"); };
    auto check = [](const std::optional<double>& ref_v, double v, double tol) -> std::string {
        if (!ref_v) return "";
        return std::abs(v - *ref_v) <= tol ? "1" : "0";
    };

    // V(1), rows at the base correlation
    std::ostringstream tv;
    tv << header("table V(1)", h) << "rho,gamma,lambda,V1,reference,abs_error,within_tol,merton,status\n";
    std::ostringstream te;
    te << header("table e(1)", h) << "rho,gamma,lambda,e1,reference,abs_error,within_tol,status\n";
    for (std::size_t i = 0; i < n_main; ++i) {
        const CellResult& r = result(i);
        const ModelParams& m = cells[i];
        std::optional<double> rv;
        if (ref) rv = reference_value(m.rho, m.gamma, m.lambda, true);
        const auto rc = ref ? reference_cost(m.rho, m.gamma, m.lambda) : std::nullopt;
        if (m.rho == base.rho) {
            tv << fmt(m.rho) << ',' << fmt(m.gamma) << ',' << fmt(m.lambda) << ',' << fmt(r.value_at_one) << ','
               << opt_fmt(rv) << ',' << (rv ? fmt(std::abs(r.value_at_one - *rv)) : "") << ','
               << check(rv, r.value_at_one, spec_.tables.tol_value) << ',' << fmt(merton_value(m, false)) << ','
               << status(r) << '\n';
            log_ << "table=V rho=" << fmt(m.rho) << " gamma=" << fmt(m.gamma) << " lambda=" << fmt(m.lambda)
                 << " V1=" << fmt(r.value_at_one) << " reference=" << opt_fmt(rv) << " status=" << status(r) << '\n';
        }
        te << fmt(m.rho) << ',' << fmt(m.gamma) << ',' << fmt(m.lambda) << ',' << fmt(r.cost) << ',' << opt_fmt(rc)
           << ',' << (rc ? fmt(std::abs(r.cost - *rc)) : "") << ',' << check(rc, r.cost, spec_.tables.tol_cost) << ','
           << status(r) << '\n';
        log_ << "table=e rho=" << fmt(m.rho) << " gamma=" << fmt(m.gamma) << " lambda=" << fmt(m.lambda)
             << " e1=" << fmt(r.cost) << " reference=" << opt_fmt(rc) << " status=" << status(r) << '\n';
    }

    std::ostringstream tz;
    tz << header("table optimal illiquid proportion", h)
       << "rho,gamma,lambda,z_hat_star,reference,within_tol,merton_constrained,status\n";
    for (std::size_t i = n_main; i < n_main + n_alloc; ++i) {
        const CellResult& r = result(i);
        const ModelParams& m = cells[i];
        const auto rz = (ref && m.rho == 0) ? reference_allocation(m.gamma, m.lambda) : std::nullopt;
        tz << fmt(m.rho) << ',' << fmt(m.gamma) << ',' << fmt(m.lambda) << ',' << fmt(r.z_hat_star) << ','
           << opt_fmt(rz) << ',' << check(rz, r.z_hat_star, spec_.tables.tol_allocation + 1e-9) << ','
           << fmt(merton_illiquid_share(m, true)) << ',' << status(r) << '\n';
        log_ << "table=z gamma=" << fmt(m.gamma) << " lambda=" << fmt(m.lambda) << " z_hat_star=" << fmt(r.z_hat_star)
             << " reference=" << opt_fmt(rz) << " status=" << status(r) << '\n';
    }

    ensure_output_dir();
    write_file(path("table_V.csv"), tv.str());
    write_file(path("table_e.csv"), te.str());
    write_file(path("table_z.csv"), tz.str());

    if (spec_.tables.no_liquid) {
        std::ostringstream tn;
        tn << header("table V(1) without liquid asset", h) << "lambda,V1,reference,abs_error,within_tol,merton,status\n";
        for (std::size_t i = n_main + n_alloc; i < cells.size(); ++i) {
            const CellResult& r = result(i);
            const ModelParams& m = cells[i];
            std::optional<double> rv;
            if (ref) rv = reference_value(0, 0, m.lambda, false);
            tn << fmt(m.lambda) << ',' << fmt(r.value_at_one) << ',' << opt_fmt(rv) << ','
               << (rv ? fmt(std::abs(r.value_at_one - *rv)) : "") << ','
               << check(rv, r.value_at_one, spec_.tables.tol_value) << ',' << fmt(merton_value(m, false)) << ','
               << status(r) << '\n';
            log_ << "table=V_no_liquid lambda=" << fmt(m.lambda) << " V1=" << fmt(r.value_at_one)
                 << " reference=" << opt_fmt(rv) << " status=" << status(r) << '\n';
        }
        write_file(path("table_V_no_liquid.csv"), tn.str());
    }
    return failed;
}

namespace {

// Columns are: x, then one per series.
std::string gnuplot_script(const std::string& stem, const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, int n_series)
{
    std::ostringstream os;
    os << "set datafile separator ','\n"
       << "set datafile commentschars '#'\n"
       << "set terminal pngcairo size 900,600\n"
       << "set output '" << stem << ".png'\n"
       << "set title '" << title << "'\n"
       << "set xlabel '" << xlabel << "'\n"
       << "set ylabel '" << ylabel << "'\n"
       << "set key outside right autotitle columnhead\n"
       << "set grid\n"
       << "plot for [i=2:" << n_series + 1 << "] '" << stem << ".csv' using 1:i with linespoints\n";
    return os.str();
}

std::string label(const char* name, double v) { return std::string(name) + "=" + fmt(v); }

} // namespace

int Runner::run_figures()
{
    const ModelParams& base = spec_.params;
    const FigureOptions& f = spec_.figures;
    const std::uint64_t h = spec_.hash();

    std::vector<ModelParams> cells;
    for (double l : f.lambda)
        for (double rho : f.rho) cells.push_back(with_cell(base, rho, 0.0, l));
    const std::size_t n_rho = cells.size();
    for (double rho : f.policy_rho)
        for (double l : f.policy_lambda) cells.push_back(with_cell(base, rho, 0.0, l));
    const std::size_t n_policy = cells.size() - n_rho;

    std::vector<CellResult> solved = solve_cells(cells);
    std::vector<ModelParams> resp_cells;
    for (double g : f.response_gamma) resp_cells.push_back(with_cell(base, base.rho, g, f.response_lambda));
    std::vector<CellResult> resp = solve_cells(resp_cells, true);

    int failed = 0;
    for (const auto* set : {&solved, &resp})
        for (const CellResult& r : *set) failed += r.ok ? 0 : 1;
    ensure_output_dir();

    auto emit = [&](const std::string& stem, const std::string& title, const std::string& xlabel,
                    const std::string& ylabel, const std::vector<std::string>& columns,
                    const std::vector<std::vector<std::string>>& rows) {
        std::ostringstream csv;
        csv << header("figure " + stem + ": " + title, h);
        for (std::size_t c = 0; c < columns.size(); ++c) csv << (c ? "," : "") << columns[c];
        csv << '\n';
        for (const auto& row : rows) {
            for (std::size_t c = 0; c < row.size(); ++c) csv << (c ? "," : "") << row[c];
            csv << '\n';
        }
        write_file(path(stem + ".csv"), csv.str());
        write_file(path(stem + ".gp"),
                   gnuplot_script(stem, title, xlabel, ylabel, static_cast<int>(columns.size()) - 1));
        log_ << "figure=" << stem << " rows=" << rows.size() << '\n';
    };
    auto cell_value = [](const CellResult& r, double v) { return r.ok ? fmt(v) : std::string("NaN"); };

    // value and allocation against correlation, gamma = 0
    {
        std::vector<std::string> cv{"rho"}, ca{"rho"};
        for (double l : f.lambda) {
            cv.push_back(label("lambda", l));
            ca.push_back(label("lambda", l));
        }
        cv.push_back("merton_constrained");
        cv.push_back("merton_unconstrained");
        ca.push_back("merton_constrained");
        std::vector<std::vector<std::string>> rv, ra;
        for (std::size_t r = 0; r < f.rho.size(); ++r) {
            const ModelParams m = with_cell(base, f.rho[r], 0.0, base.lambda);
            std::vector<std::string> a{fmt(f.rho[r])}, b{fmt(f.rho[r])};
            for (std::size_t li = 0; li < f.lambda.size(); ++li) {
                const CellResult& c = solved[li * f.rho.size() + r];
                a.push_back(cell_value(c, c.value_at_one));
                b.push_back(cell_value(c, c.z_hat_star));
            }
            a.push_back(fmt(merton_value(m, true)));
            a.push_back(fmt(merton_value(m, false)));
            b.push_back(fmt(merton_illiquid_share(m, true)));
            rv.push_back(a);
            ra.push_back(b);
        }
        emit("fig_value_rho", "V(1) against rho, gamma=0", "rho", "V(1)", cv, rv);
        emit("fig_allocation_rho", "optimal illiquid proportion against rho, gamma=0", "rho", "illiquid proportion",
             ca, ra);
    }

    // feedback maps at t = 0 over the illiquid proportion
    for (std::size_t pr = 0; pr < f.policy_rho.size(); ++pr) {
        const double rho = f.policy_rho[pr];
        const ModelParams m = with_cell(base, rho, 0.0, base.lambda);
        std::vector<std::string> cols{"zhat"};
        for (double l : f.policy_lambda) cols.push_back(label("lambda", l));
        std::vector<std::string> cols_pi = cols;
        cols_pi.push_back("merton");
        std::vector<std::vector<std::string>> rc, rp;
        Eigen::Index n = 0;
        for (std::size_t li = 0; li < f.policy_lambda.size(); ++li) {
            const CellResult& c = solved[n_rho + pr * f.policy_lambda.size() + li];
            if (c.ok) n = std::max(n, c.C0.size());
        }
        for (Eigen::Index j = 0; j < n; ++j) {
            const double yhat = static_cast<double>(j) / static_cast<double>(n - 1);
            std::vector<std::string> a{fmt(yhat)}, b{fmt(yhat)};
            for (std::size_t li = 0; li < f.policy_lambda.size(); ++li) {
                const CellResult& c = solved[n_rho + pr * f.policy_lambda.size() + li];
                const bool have = c.ok && c.C0.size() == n;
                a.push_back(have ? fmt(c.C0[j]) : "NaN");
                b.push_back(have ? fmt(c.Pi0[j]) : "NaN");
            }
            b.push_back(fmt(merton_liquid_line(m, yhat)));
            rc.push_back(a);
            rp.push_back(b);
        }
        const std::string tag = "rho=" + fmt(rho);
        std::string stem_tag = fmt(rho);
        std::replace(stem_tag.begin(), stem_tag.end(), '-', 'm');
        if (rho == 0) emit("fig_consumption", "consumption rate at t=0, " + tag, "illiquid proportion", "C_hat", cols, rc);
        emit("fig_liquid_rho_" + stem_tag, "liquid investment at t=0, " + tag, "illiquid proportion", "Pi_hat",
             cols_pi, rp);
    }
    (void)n_policy;

    // response to the observed noise
    {
        std::vector<std::string> cols{"B1"};
        for (double g : f.response_gamma) cols.push_back(label("gamma", g));
        std::vector<std::vector<std::string>> rc, rp;
        for (int q = 0; q < f.response_points; ++q) {
            const double B1 =
                f.response_b1_min + (f.response_b1_max - f.response_b1_min) * q / (f.response_points - 1);
            std::vector<std::string> a{fmt(B1)}, b{fmt(B1)};
            for (std::size_t gi = 0; gi < f.response_gamma.size(); ++gi) {
                const CellResult& c = resp[gi];
                if (!c.ok || !c.policy) {
                    a.push_back("NaN");
                    b.push_back("NaN");
                    continue;
                }
                const ObservationResponse o =
                    observation_response(B1, f.response_t, c.params, *c.policy, f.response_y0, f.response_x);
                a.push_back(fmt(o.consumption));
                b.push_back(fmt(o.liquid_investment));
            }
            rc.push_back(a);
            rp.push_back(b);
        }
        emit("fig_response_consumption", "consumption rate against B1", "B1", "consumption", cols, rc);
        emit("fig_response_liquid", "liquid investment against B1", "B1", "liquid investment", cols, rp);
    }
    return failed;
}

int Runner::run_simulate()
{
    const ModelParams& m = spec_.params;
    const SchemeConfig cfg = spec_.scheme_for(m.lambda);
    const DerivedConstants k = hjb_constants(m);
    cfl_margin(cfg, k);
    spec_.simulation.validate();
    ensure_output_dir();
    const std::uint64_t h = solve_hash(m, cfg);
    const std::string spath = path("cache/surface-" + hex64(h) + ".bin");

    std::optional<ValueSurface> surface = load_surface(spath, h);
    double phi0 = 0;
    if (surface) {
        // the surface was solved with source Phi0 from the previous iterate; the fixed point is h0 of it
        phi0 = h0(*surface);
        log_ << "surface=" << spath << '\n';
    } else {
        log_ << "no persisted surface for params_hash=" << hex64(h) << ", solving first\n";
        run_solve();
        surface = load_surface(spath, h);
        if (!surface) throw NumericalError("surface cache could not be read back");
        phi0 = h0(*surface);
    }
    const PolicyField pf = build_policy(*surface, k, cfg.clamp);
    const SimulationResult res = simulate(m, pf, phi0, spec_.simulation);

    const std::uint64_t sh = [&] {
        Fnv1a f;
        f.value(h);
        f.value(spec_.simulation.seed);
        f.value(spec_.simulation.n_paths);
        f.value(spec_.simulation.horizon);
        f.value(spec_.simulation.dt_euler);
        f.value(spec_.simulation.initial_wealth);
        return f.h;
    }();
    write_samples_csv(res, path("sim_paths.csv"), header("simulated paths", sh));
    {
        std::ostringstream os;
        os << header("per-path summary", sh) << "path_id,discounted_utility,tail,n_trades,absorbed,final_wealth\n";
        for (std::size_t i = 0; i < res.paths.size(); ++i) {
            const PathSummary& p = res.paths[i];
            os << i << ',' << fmt(p.discounted_utility) << ',' << fmt(p.tail) << ',' << p.n_trades << ','
               << (p.absorbed ? 1 : 0) << ',' << fmt(p.final_wealth) << '\n';
        }
        write_file(path("sim_summary.csv"), os.str());
    }
    log_ << "params_hash=" << hex64(h) << '\n' << "seed=" << spec_.simulation.seed << '\n' << summary(res);
    return 0;
}

int Runner::run_task(const std::string& task)
{
    if (task == "baseline") return run_baseline();
    if (task == "solve") return run_solve();
    if (task == "tables") return run_tables();
    if (task == "figures") return run_figures();
    if (task == "simulate") return run_simulate();
    throw ValidationError("unknown task '" + task + "'");
}

} // namespace illiquid
