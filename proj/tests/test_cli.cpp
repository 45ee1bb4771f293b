#include "relief/cli.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace relief;
namespace fs = std::filesystem;

namespace {

nlohmann::json tiny_scenario() {
    return nlohmann::json::parse(R"({
      "task": {
        "modalities": 2, "dims": [4, 4], "classes": 2, "samples_per_client": 10,
        "noise_sigma": 0.3, "hetero_zeta": 0.2, "rare_signal_weight": [0.6, 0.4],
        "test_samples": 40
      },
      "model": { "rank": 2, "out_dim": 6, "encoder_layers": [1, 1], "head_layers": 1 },
      "system": { "tau_base_s": 0.01, "uplink_bps": 1e9 },
      "devices": [
        { "count": 2, "modalities": [0, 1], "slowdown": 1, "power_w": 60 },
        { "count": 2, "modalities": [0], "slowdown": 5, "power_w": 10 }
      ],
      "training": { "epochs": 2, "lr": 0.05, "batch": 4, "rounds": 5 },
      "scheduler": { "gamma": 0.9, "t_overhead_s": 0.02 },
      "strategy": "relief",
      "seed": 3
    })");
}

fs::path write_config(const nlohmann::json& j, const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "relief_cli_test";
    fs::create_directories(dir);
    fs::path p = dir / name;
    std::ofstream out(p);
    out << j.dump(2);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("scenario parsing reports the offending key") {
    auto j = tiny_scenario();
    j["task"].erase("dims");
    try {
        parse_scenario(j);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        REQUIRE(e.key() == "task.dims");
    }

    auto unknown = tiny_scenario();
    unknown["task"]["typo_key"] = 1;
    try {
        parse_scenario(unknown);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        REQUIRE(e.key() == "task.typo_key");
    }

    auto bad_mod = tiny_scenario();
    bad_mod["devices"][1]["modalities"] = {0, 5};
    REQUIRE_THROWS_AS(parse_scenario(bad_mod), ConfigError);

    auto bad_strat = tiny_scenario();
    bad_strat["strategy"] = "magic";
    REQUIRE_THROWS_AS(parse_scenario(bad_strat), ConfigError);
}

TEST_CASE("effective config echoes defaults") {
    auto j = tiny_scenario();
    j.erase("scheduler");  // rely on defaults
    j["training"].erase("rounds");
    auto sc = parse_scenario(j);
    REQUIRE(sc.orch.gamma == 0.9);
    REQUIRE(sc.orch.t_overhead == 0.0);
    REQUIRE(sc.orch.rounds == 200);
    REQUIRE(sc.effective["scheduler"]["gamma"] == 0.9);
    REQUIRE(sc.effective["training"]["rounds"] == 200);
    REQUIRE(sc.effective["devices"].size() == 4);
    REQUIRE(sc.effective["devices"][3]["power_idle_w"] == Catch::Approx(2.0));
}

TEST_CASE("the bundled scenarios parse") {
    auto a = load_scenario(std::string(RELIEF_SOURCE_DIR) + "/scenarios/pamap2_shape.json");
    REQUIRE(a.orch.task.clients == 8);
    REQUIRE(a.orch.profiles[7].compute_slowdown == 55.0);
    REQUIRE(a.orch.gamma == 0.9);
    auto b = load_scenario(std::string(RELIEF_SOURCE_DIR) + "/scenarios/mhealth_shape.json");
    REQUIRE(b.orch.task.clients == 10);
}

TEST_CASE("cmd_run writes ledger and manifest; missing config exits 2") {
    REQUIRE(cmd_run("/no/such/file.json") == 2);

    auto cfg = write_config(tiny_scenario(), "tiny.json");
    fs::path out = fs::temp_directory_path() / "relief_cli_test" / "out_run";
    fs::remove_all(out);
    REQUIRE(cmd_run(cfg.string(), std::nullopt, out.string()) == 0);
    REQUIRE(fs::exists(out / "ledger.csv"));
    REQUIRE(fs::exists(out / "manifest.json"));

    // header matches the documented schema (G = 2+1+2+1 = 6)
    std::ifstream in(out / "ledger.csv");
    std::string header;
    std::getline(in, header);
    auto cols = ledger_columns(2, 6);
    std::string expect;
    for (std::size_t i = 0; i < cols.size(); ++i) expect += (i ? "," : "") + cols[i];
    REQUIRE(header == expect);

    // 5 rounds + bootstrap
    int rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    REQUIRE(rows == 6);

    auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
    REQUIRE(manifest["config"]["seed"] == 3);
    REQUIRE(manifest["config"]["scheduler"]["gamma"] == 0.9);
    REQUIRE(manifest["csv_columns"].size() == cols.size());
}

TEST_CASE("cmd_run is byte-deterministic, also under parallelism") {
    auto cfg = write_config(tiny_scenario(), "tiny_det.json");
    fs::path out1 = fs::temp_directory_path() / "relief_cli_test" / "det1";
    fs::path out2 = fs::temp_directory_path() / "relief_cli_test" / "det2";
    fs::remove_all(out1);
    fs::remove_all(out2);
    setenv("RELIEF_SIM_THREADS", "4", 1);
    REQUIRE(cmd_run(cfg.string(), 11, out1.string()) == 0);
    REQUIRE(cmd_run(cfg.string(), 11, out2.string()) == 0);
    unsetenv("RELIEF_SIM_THREADS");
    REQUIRE(slurp(out1 / "ledger.csv") == slurp(out2 / "ledger.csv"));
    REQUIRE(slurp(out1 / "manifest.json") == slurp(out2 / "manifest.json"));
    REQUIRE(!slurp(out1 / "ledger.csv").empty());
}

TEST_CASE("cmd_compare writes per-strategy ledgers and a summary") {
    auto cfg = write_config(tiny_scenario(), "tiny_cmp.json");
    fs::path out = fs::temp_directory_path() / "relief_cli_test" / "cmp";
    fs::remove_all(out);
    REQUIRE(cmd_compare(cfg.string(), {"fedavg", "relief"}, 5, out.string()) == 0);
    REQUIRE(fs::exists(out / "ledger_fedavg.csv"));
    REQUIRE(fs::exists(out / "ledger_relief.csv"));

    std::ifstream in(out / "summary.csv");
    std::string header, fed_row, relief_row;
    std::getline(in, header);
    std::getline(in, fed_row);
    std::getline(in, relief_row);
    REQUIRE(header.rfind("strategy,final_test_acc", 0) == 0);
    // fedavg vs itself: speedup exactly 1
    REQUIRE(fed_row.find("fedavg") == 0);
    std::stringstream ss(fed_row);
    std::string field;
    for (int i = 0; i <= 6; ++i) std::getline(ss, field, ',');
    REQUIRE(field == "1");

    REQUIRE(cmd_compare(cfg.string(), {"fedavg", "warp"}, 5, out.string()) == 2);
    REQUIRE(cmd_compare(cfg.string(), {}, 5, out.string()) == 2);
}

TEST_CASE("cmd_verify rejects unknown suites") { REQUIRE(cmd_verify("nope") == 2); }
