#pragma once

#include "relief/scenario.hpp"
#include "relief/verify.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>

namespace relief {

/// Client-task parallelism: RELIEF_SIM_THREADS if set, else logical cores.
inline int resolve_threads() {
    if (const char* env = std::getenv("RELIEF_SIM_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) return static_cast<int>(v);
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

inline int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed = {},
                   std::optional<std::string> out_dir = {}) {
    try {
        ScenarioConfig sc = load_scenario(config_path);
        if (seed) {
            sc.orch.task.seed = *seed;
            sc.effective["seed"] = *seed;
        }
        if (out_dir) {
            sc.output_dir = *out_dir;
            sc.effective["output_dir"] = *out_dir;
        }
        sc.orch.threads = resolve_threads();
        std::filesystem::create_directories(sc.output_dir);
        RunResult result = run(sc.orch);
        const int groups = result.final_model.registry.size();
        write_ledger_csv(sc.output_dir + "/ledger.csv", result.ledgers, sc.orch.task.modalities, groups);
        write_manifest(sc.output_dir + "/manifest.json", sc, sc.orch.threads);
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

namespace detail {

/// Modalities held by the fewest devices (when not held by everyone).
inline std::vector<int> rare_modalities(const std::vector<ModalitySet>& assignment, int modalities) {
    std::vector<int> sizes(static_cast<std::size_t>(modalities), 0);
    for (const auto& ms : assignment)
        for (int m : ms.indices()) ++sizes[static_cast<std::size_t>(m)];
    int smallest = *std::min_element(sizes.begin(), sizes.end());
    std::vector<int> rare;
    if (smallest == static_cast<int>(assignment.size())) return rare;
    for (int m = 0; m < modalities; ++m)
        if (sizes[static_cast<std::size_t>(m)] == smallest) rare.push_back(m);
    return rare;
}

struct StrategyTotals {
    double final_test_acc = 0.0;
    double final_macro_f1 = 0.0;
    double total_wall_s = 0.0;
    double total_fleet_j = 0.0;
    std::uint64_t total_upload_bytes = 0;
    double rare_mod_acc = std::numeric_limits<double>::quiet_NaN();
};

inline StrategyTotals totals_of(const std::vector<RoundLedger>& ledgers, const std::vector<int>& rare) {
    StrategyTotals t;
    for (const auto& row : ledgers) {
        t.total_wall_s += row.wall_s;
        t.total_fleet_j += row.fleet_j;
        t.total_upload_bytes += row.upload_bytes;
    }
    const auto& last = ledgers.back();
    t.final_test_acc = last.test_acc;
    t.final_macro_f1 = last.macro_f1;
    if (!rare.empty()) {
        double acc = 0.0;
        for (int m : rare) acc += last.acc_per_modality[static_cast<std::size_t>(m)];
        t.rare_mod_acc = acc / static_cast<double>(rare.size());
    }
    return t;
}

}  // namespace detail

/// Runs the requested strategies on identical data and seeds, then writes
/// per-strategy ledgers and summary.csv. FedAvg is always run as the
/// speedup/energy reference even when not requested.
inline int cmd_compare(const std::string& config_path, const std::vector<std::string>& strategy_names,
                       std::optional<std::uint64_t> seed = {}, std::optional<std::string> out_dir = {}) {
    try {
        if (strategy_names.empty()) throw ConfigError("strategies", "need at least one strategy");
        std::vector<Strategy> requested;
        for (const auto& name : strategy_names) {
            auto s = parse_strategy(name);
            if (!s) throw ConfigError("strategies", "unknown strategy '" + name + "'");
            requested.push_back(*s);
        }
        ScenarioConfig sc = load_scenario(config_path);
        if (seed) sc.orch.task.seed = *seed;
        if (out_dir) sc.output_dir = *out_dir;
        sc.orch.threads = resolve_threads();
        std::filesystem::create_directories(sc.output_dir);

        std::vector<Strategy> to_run = requested;
        if (std::find(to_run.begin(), to_run.end(), Strategy::FedAvg) == to_run.end())
            to_run.push_back(Strategy::FedAvg);

        std::map<Strategy, detail::StrategyTotals> totals;
        const auto rare = detail::rare_modalities(sc.orch.assignment, sc.orch.task.modalities);
        int groups = 0;
        for (Strategy s : to_run) {
            OrchestratorConfig oc = sc.orch;
            oc.strategy = s;
            RunResult result = run(oc);
            groups = result.final_model.registry.size();
            if (std::find(requested.begin(), requested.end(), s) != requested.end())
                write_ledger_csv(sc.output_dir + "/ledger_" + strategy_name(s) + ".csv", result.ledgers,
                                 oc.task.modalities, groups);
            totals[s] = detail::totals_of(result.ledgers, rare);
        }

        const auto& ref = totals.at(Strategy::FedAvg);
        std::ofstream out(sc.output_dir + "/summary.csv", std::ios::binary);
        out << "strategy,final_test_acc,final_macro_f1,total_wall_s,total_fleet_j,total_upload_bytes,"
               "speedup_vs_fedavg,energy_ratio_vs_fedavg,rare_mod_acc,rare_mod_acc_delta_vs_fedavg\n";
        for (Strategy s : requested) {
            const auto& t = totals.at(s);
            out << strategy_name(s) << "," << detail::fmt17(t.final_test_acc) << ","
                << detail::fmt17(t.final_macro_f1) << "," << detail::fmt17(t.total_wall_s) << ","
                << detail::fmt17(t.total_fleet_j) << "," << t.total_upload_bytes << ","
                << detail::fmt17(ref.total_wall_s / t.total_wall_s) << ","
                << detail::fmt17(t.total_fleet_j / ref.total_fleet_j) << ","
                << detail::fmt17(t.rare_mod_acc) << ","
                << detail::fmt17(t.rare_mod_acc - ref.rare_mod_acc) << "\n";
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

/// Runs one oracle suite, printing measured-vs-expected lines; exit 0 iff all
/// checks hold.
inline int cmd_verify(const std::string& suite) {
    verify::SuiteResult res;
    if (suite == "lemma1")
        res = verify::run_lemma1_suite();
    else if (suite == "prop1")
        res = verify::run_prop1_suite();
    else if (suite == "prop2")
        res = verify::run_prop2_suite();
    else if (suite == "gradcheck")
        res = verify::run_gradcheck_suite();
    else if (suite == "tstar")
        res = verify::run_tstar_suite();
    else {
        std::cerr << "unknown suite '" << suite << "' (use lemma1|prop1|prop2|gradcheck|tstar)\n";
        return 2;
    }
    for (const auto& line : res.lines) std::cout << line << "\n";
    std::cout << "suite " << suite << ": " << (res.pass ? "PASS" : "FAIL") << " ("
              << res.elapsed_s << " s)\n";
    return res.pass ? 0 : 1;
}

}  // namespace relief
