#include <CLI11.hpp>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <string>

#include "pwsavg/run.hpp"

namespace {

std::string default_out_dir() {
    if (const char* env = std::getenv("PWSAVG_OUT")) return env;
    return "out";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Periodic oscillations of piecewise-smooth systems by averaging"};
    app.require_subcommand(1);

    std::string scenario_path;
    std::string out_dir = default_out_dir();
    double epsilon_override = std::numeric_limits<double>::quiet_NaN();
    bool quiet = false;

    for (const auto& name : pwsavg::command_names()) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
        sub->add_option("--out", out_dir, "Output directory (default: $PWSAVG_OUT or ./out)");
        sub->add_option("--epsilon", epsilon_override, "Override the scenario's epsilon");
        sub->add_flag("--quiet", quiet, "Suppress console output");
    }

    CLI11_PARSE(app, argc, argv);
    std::string command = app.get_subcommands().front()->get_name();

    try {
        pwsavg::Scenario sc = pwsavg::parse_scenario(scenario_path);
        if (!std::isnan(epsilon_override)) {
            if (epsilon_override < 0.0 || epsilon_override > 1.0) {
                std::cerr << "SchemaError: epsilon must lie in [0, 1]\n";
                return 2;
            }
            sc.epsilon = epsilon_override;
        }
        pwsavg::RunOutcome outcome = pwsavg::run(command, sc, out_dir);
        if (!quiet) {
            std::cout << command << ": "
                      << (outcome.exit_code == 0 ? "ok" : "hypothesis check failed") << "\n";
            for (const auto& path : outcome.artifacts) std::cout << "  wrote " << path << "\n";
        }
        return outcome.exit_code;
    } catch (const pwsavg::Error& e) {
        std::cerr << e.what() << "\n";
        return pwsavg::exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
