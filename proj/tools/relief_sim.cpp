#include "relief/cli.hpp"

#include <CLI11.hpp>

#include <optional>
#include <string>
#include <vector>

int main(int argc, char** argv) {
    CLI::App app{"RELIEF multimodal federated-learning protocol simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::string strategies_csv;
    std::string suite;

    auto* run_cmd = app.add_subcommand("run", "run one scenario, writing ledger.csv and manifest.json");
    run_cmd->add_option("--config", config_path, "scenario JSON path")->required();
    auto* run_seed = run_cmd->add_option("--seed", seed, "override the scenario seed");
    auto* run_out = run_cmd->add_option("--out", out_dir, "override the output directory");

    auto* cmp_cmd = app.add_subcommand("compare", "run several strategies on shared data and summarize");
    cmp_cmd->add_option("--config", config_path, "scenario JSON path")->required();
    cmp_cmd->add_option("--strategies", strategies_csv, "comma-separated strategy list")->required();
    auto* cmp_seed = cmp_cmd->add_option("--seed", seed, "override the scenario seed");
    auto* cmp_out = cmp_cmd->add_option("--out", out_dir, "override the output directory");

    auto* ver_cmd = app.add_subcommand("verify", "run a numeric oracle suite");
    ver_cmd->add_option("--suite", suite, "lemma1|prop1|prop2|gradcheck|tstar")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    std::optional<std::uint64_t> seed_opt;
    std::optional<std::string> out_opt;

    if (run_cmd->parsed()) {
        if (run_seed->count() > 0) seed_opt = seed;
        if (run_out->count() > 0) out_opt = out_dir;
        return relief::cmd_run(config_path, seed_opt, out_opt);
    }
    if (cmp_cmd->parsed()) {
        if (cmp_seed->count() > 0) seed_opt = seed;
        if (cmp_out->count() > 0) out_opt = out_dir;
        std::vector<std::string> names;
        std::string cur;
        for (char c : strategies_csv) {
            if (c == ',') {
                if (!cur.empty()) names.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        if (!cur.empty()) names.push_back(cur);
        return relief::cmd_compare(config_path, names, seed_opt, out_opt);
    }
    return relief::cmd_verify(suite);
}
