#include <catch2/catch.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

namespace {

namespace fs = std::filesystem;

int run_cli(const std::string& args) {
    std::string cmd = std::string(PWSAVG_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh_dir(const std::string& tag) {
    auto dir = fs::temp_directory_path() / ("pwsavg_cli_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_scenario(const fs::path& dir, const std::string& body) {
    auto path = dir / "scenario.json";
    std::ofstream(path) << body;
    return path;
}

const std::string kFixtures = PWSAVG_SCENARIO_DIR;

}  // namespace

TEST_CASE("cli: a clean run exits 0 and writes its artifacts") {
    auto dir = fresh_dir("ok");
    int code = run_cli("average --scenario " + kFixtures + "/dry_friction.json --out " +
                       dir.string() + " --quiet");
    CHECK(code == 0);
    CHECK(fs::exists(dir / "run_report.json"));
    CHECK(fs::exists(dir / "fbar_tabulation.csv"));

    auto loaded = nlohmann::ordered_json::parse(std::ifstream(dir / "run_report.json"));
    CHECK(loaded["report"]["verdict"] == "asymptotically_stable");
    CHECK(loaded["report"]["xi0"][0].get<double>() == Approx(-0.70710678).margin(1e-6));
}

TEST_CASE("cli: scenario problems exit 2") {
    auto dir = fresh_dir("schema");
    auto bad_eps = write_scenario(dir, R"({
        "schema_version": 1,
        "model": {"name": "dry_friction", "params": {"a": 0.3, "b": 0.1}},
        "epsilon": -0.1,
        "xi_guess": [-0.7]
    })");
    CHECK(run_cli("average --scenario " + bad_eps.string() + " --out " + dir.string()) == 2);

    auto dir2 = fresh_dir("model");
    auto bogus = write_scenario(dir2, R"({
        "schema_version": 1,
        "model": {"name": "bogus", "params": {}},
        "epsilon": 0.1,
        "xi_guess": [0.5]
    })");
    CHECK(run_cli("average --scenario " + bogus.string() + " --out " + dir2.string()) == 2);

    CHECK(run_cli("average --scenario /does/not/exist.json --out " + dir.string()) == 2);
}

TEST_CASE("cli: numerical failures exit 1") {
    auto dir = fresh_dir("graze");
    auto grazing = write_scenario(dir, R"({
        "schema_version": 1,
        "model": {"name": "dry_friction", "params": {"a": 0.3, "b": 0.1}},
        "epsilon": 0.0,
        "xi_guess": [0.99999999999999]
    })");
    CHECK(run_cli("simulate --scenario " + grazing.string() + " --out " + dir.string()) == 1);
}

TEST_CASE("cli: failed hypotheses exit 3") {
    auto dir = fresh_dir("hyp");
    auto on_plane = write_scenario(dir, R"({
        "schema_version": 1,
        "model": {"name": "dry_friction", "params": {"a": 0.3, "b": 0.1}},
        "epsilon": 0.01,
        "xi_guess": [0.0],
        "check": {"epsilons": [0.1, 0.01]}
    })");
    CHECK(run_cli("check --scenario " + on_plane.string() + " --out " + dir.string()) == 3);
}

TEST_CASE("cli: the epsilon override is applied before the run") {
    auto dir = fresh_dir("override");
    int code = run_cli("find-periodic --scenario " + kFixtures +
                       "/dry_friction.json --epsilon 0.005 --out " + dir.string() + " --quiet");
    CHECK(code == 0);
    auto loaded = nlohmann::ordered_json::parse(std::ifstream(dir / "run_report.json"));
    CHECK(loaded["scenario"]["epsilon"].get<double>() == 0.005);
}

TEST_CASE("cli: rejects unknown subcommands") {
    CHECK(run_cli("meditate --scenario x.json") != 0);
}
