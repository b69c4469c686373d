#include "illiquid/error.hpp"
#include "illiquid/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

namespace {

struct Options {
    std::string config;
    std::string out;
    std::string profile;
    std::optional<std::uint64_t> seed;
};

illiquid::ExperimentSpec make_spec(const Options& o)
{
    illiquid::ExperimentSpec spec = o.config.empty() ? illiquid::ExperimentSpec{} : illiquid::load_spec(o.config);
    if (!o.out.empty()) spec.output_dir = o.out;
    if (!o.profile.empty()) spec.profile = illiquid::scheme_profile_from_string(o.profile);
    if (o.seed) spec.simulation.seed = *o.seed;
    return spec;
}

int run(const std::string& command, const Options& o)
{
    illiquid::Runner runner(make_spec(o), std::cout);
    int failed = 0;
    if (command == "run") {
        if (runner.spec().tasks.empty()) throw illiquid::ValidationError("config lists no tasks");
        for (const std::string& t : runner.spec().tasks) failed += runner.run_task(t);
    } else {
        failed = runner.run_task(command);
    }
    std::cout << "failed_cells=" << failed << '\n';
    return failed > 0 ? 2 : 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Optimal investment with an illiquid asset traded at Poisson times"};
    app.require_subcommand(1);
    Options opts;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config, "JSON configuration file")->check(CLI::ExistingFile);
        sub->add_option("--out", opts.out, "output directory");
        sub->add_option("--profile", opts.profile, "scheme profile")->check(CLI::IsMember({"paper", "fast"}));
        sub->add_option("--seed", opts.seed, "simulation seed");
    };
    const std::vector<std::pair<std::string, std::string>> commands{
        {"baseline", "derived constants and continuous-trading benchmarks"},
        {"solve", "value surface, feedback maps and summary for one parameter set"},
        {"tables", "value, cost-of-illiquidity and allocation tables"},
        {"figures", "figure data and gnuplot scripts"},
        {"simulate", "Monte Carlo of the optimal strategy"},
        {"run", "tasks listed in the configuration"},
    };
    for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return run(command, opts);
    } catch (const illiquid::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const illiquid::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 2;
    }
}
