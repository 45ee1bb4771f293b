#pragma once

#include "relief/orchestrator.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

namespace relief {

constexpr const char* kVersion = "relief-sim 0.1.0";

/// Fully-resolved scenario: the orchestrator config plus output bookkeeping.
struct ScenarioConfig {
    OrchestratorConfig orch;
    double tau_base_s = 0.1;
    std::string output_dir = "out";
    nlohmann::ordered_json effective;  // every parameter incl. defaults
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& obj, const std::string& prefix,
                       std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok) throw ConfigError(prefix + it.key(), "unknown key");
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(key, "has the wrong type");
    }
}

template <typename T>
T require(const json& obj, const std::string& prefix, const char* key) {
    if (!obj.contains(key)) throw ConfigError(prefix + key, "missing required key");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(prefix + key, "has the wrong type");
    }
}

}  // namespace detail

/// Parses and validates a scenario JSON. Unknown keys, missing required keys
/// and type errors all throw ConfigError naming the offending key.
inline ScenarioConfig parse_scenario(const nlohmann::json& j) {
    using detail::check_keys;
    using detail::get_or;
    using detail::require;

    check_keys(j, "", {"task", "model", "devices", "system", "training", "scheduler", "strategy",
                       "seed", "output_dir"});

    ScenarioConfig sc;
    OrchestratorConfig& oc = sc.orch;

    if (!j.contains("task")) throw ConfigError("task", "missing required key");
    const auto& jt = j.at("task");
    check_keys(jt, "task.", {"modalities", "dims", "classes", "clients", "samples_per_client",
                             "noise_sigma", "hetero_zeta", "rare_signal_weight", "test_samples"});
    oc.task.modalities = require<int>(jt, "task.", "modalities");
    oc.task.dims = require<std::vector<int>>(jt, "task.", "dims");
    oc.task.classes = require<int>(jt, "task.", "classes");
    oc.task.samples_per_client = require<int>(jt, "task.", "samples_per_client");
    oc.task.noise_sigma = get_or<double>(jt, "noise_sigma", 0.0);
    oc.task.hetero_zeta = get_or<double>(jt, "hetero_zeta", 0.0);
    oc.task.rare_signal_weight = require<std::vector<double>>(jt, "task.", "rare_signal_weight");
    oc.test_samples = get_or<int>(jt, "test_samples", 256);

    if (!j.contains("model")) throw ConfigError("model", "missing required key");
    const auto& jm = j.at("model");
    check_keys(jm, "model.", {"rank", "out_dim", "encoder_layers", "head_layers"});
    oc.rank = require<int>(jm, "model.", "rank");
    oc.out_dim = require<int>(jm, "model.", "out_dim");
    oc.enc_layers = require<std::vector<int>>(jm, "model.", "encoder_layers");
    oc.head_layers = require<int>(jm, "model.", "head_layers");

    const auto& js = j.contains("system") ? j.at("system") : nlohmann::json::object();
    check_keys(js, "system.", {"tau_base_s", "uplink_bps"});
    sc.tau_base_s = get_or<double>(js, "tau_base_s", 0.1);
    double uplink_default = get_or<double>(js, "uplink_bps", 1e9);
    if (sc.tau_base_s <= 0.0) throw ConfigError("system.tau_base_s", "must be positive");

    if (!j.contains("devices")) throw ConfigError("devices", "missing required key");
    const auto& jd = j.at("devices");
    if (!jd.is_array() || jd.empty()) throw ConfigError("devices", "must be a non-empty array");
    int next_id = 0;
    for (const auto& cls : jd) {
        check_keys(cls, "devices.", {"count", "modalities", "slowdown", "power_w", "power_comm_w",
                                     "power_idle_w", "uplink_bps"});
        int count = get_or<int>(cls, "count", 1);
        if (count < 1) throw ConfigError("devices.count", "must be >= 1");
        auto mods = require<std::vector<int>>(cls, "devices.", "modalities");
        double slowdown = get_or<double>(cls, "slowdown", 1.0);
        double power = require<double>(cls, "devices.", "power_w");
        double power_comm = get_or<double>(cls, "power_comm_w", 0.5 * power);
        double power_idle = get_or<double>(cls, "power_idle_w", 0.2 * power);
        double uplink = get_or<double>(cls, "uplink_bps", uplink_default);
        for (int i = 0; i < count; ++i) {
            ModalitySet ms(mods, oc.task.modalities);
            DeviceProfile p;
            p.id = next_id++;
            p.mods = ms;
            p.compute_slowdown = slowdown;
            p.tau_per_group = sc.tau_base_s * slowdown;
            p.uplink_bps = uplink;
            p.power_active_w = power;
            p.power_comm_w = power_comm;
            p.power_idle_w = power_idle;
            oc.assignment.push_back(ms);
            oc.profiles.push_back(p);
        }
    }
    oc.task.clients = next_id;
    if (jt.contains("clients") && jt.at("clients").get<int>() != next_id)
        throw ConfigError("task.clients", "does not match the device list (" + std::to_string(next_id) + ")");

    const auto& jtr = j.contains("training") ? j.at("training") : nlohmann::json::object();
    check_keys(jtr, "training.", {"epochs", "lr", "batch", "rounds"});
    oc.epochs = get_or<int>(jtr, "epochs", 5);
    oc.lr = get_or<double>(jtr, "lr", 1e-3);
    oc.batch = get_or<int>(jtr, "batch", 32);
    oc.rounds = get_or<int>(jtr, "rounds", 200);

    const auto& jsc = j.contains("scheduler") ? j.at("scheduler") : nlohmann::json::object();
    check_keys(jsc, "scheduler.", {"gamma", "t_overhead_s"});
    oc.gamma = get_or<double>(jsc, "gamma", 0.9);
    oc.t_overhead = get_or<double>(jsc, "t_overhead_s", 0.0);

    std::string strat = get_or<std::string>(j, "strategy", "relief");
    auto parsed = parse_strategy(strat);
    if (!parsed) throw ConfigError("strategy", "unknown strategy '" + strat + "'");
    oc.strategy = *parsed;

    oc.task.seed = get_or<std::uint64_t>(j, "seed", 1);
    sc.output_dir = get_or<std::string>(j, "output_dir", "out");

    oc.validate();

    // echo of every effective parameter, defaults included
    nlohmann::ordered_json e;
    e["task"] = {{"modalities", oc.task.modalities},
                 {"dims", oc.task.dims},
                 {"classes", oc.task.classes},
                 {"clients", oc.task.clients},
                 {"samples_per_client", oc.task.samples_per_client},
                 {"noise_sigma", oc.task.noise_sigma},
                 {"hetero_zeta", oc.task.hetero_zeta},
                 {"rare_signal_weight", oc.task.rare_signal_weight},
                 {"test_samples", oc.test_samples}};
    e["model"] = {{"rank", oc.rank},
                  {"out_dim", oc.out_dim},
                  {"encoder_layers", oc.enc_layers},
                  {"head_layers", oc.head_layers}};
    e["system"] = {{"tau_base_s", sc.tau_base_s}, {"uplink_bps", uplink_default}};
    e["devices"] = nlohmann::ordered_json::array();
    for (const auto& p : oc.profiles) {
        std::vector<int> mods(p.mods.indices().begin(), p.mods.indices().end());
        e["devices"].push_back({{"id", p.id},
                                {"modalities", mods},
                                {"slowdown", p.compute_slowdown},
                                {"tau_per_group_s", p.tau_per_group},
                                {"uplink_bps", p.uplink_bps},
                                {"power_w", p.power_active_w},
                                {"power_comm_w", p.power_comm_w},
                                {"power_idle_w", p.power_idle_w}});
    }
    e["training"] = {{"epochs", oc.epochs}, {"lr", oc.lr}, {"batch", oc.batch}, {"rounds", oc.rounds}};
    e["scheduler"] = {{"gamma", oc.gamma}, {"t_overhead_s", oc.t_overhead}};
    e["strategy"] = strategy_name(oc.strategy);
    e["seed"] = oc.task.seed;
    e["output_dir"] = sc.output_dir;
    sc.effective = std::move(e);
    return sc;
}

inline ScenarioConfig load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError("config", std::string("invalid JSON: ") + ex.what());
    }
    return parse_scenario(j);
}

namespace detail {

inline std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline std::vector<std::string> ledger_columns(int modalities, int groups) {
    std::vector<std::string> cols{"round", "strategy", "train_loss", "test_acc", "macro_f1"};
    for (int m = 0; m < modalities; ++m) cols.push_back("acc_mod_" + std::to_string(m));
    for (int g = 0; g < groups; ++g) cols.push_back("div_raw_g" + std::to_string(g));
    for (int g = 0; g < groups; ++g) cols.push_back("div_ema_g" + std::to_string(g));
    cols.insert(cols.end(), {"wall_s", "fleet_j", "upload_bytes", "straggler_id"});
    return cols;
}

/// Fixed-schema CSV, floats at 17 significant digits.
inline void write_ledger_csv(const std::string& path, const std::vector<RoundLedger>& ledgers,
                             int modalities, int groups) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("output_dir", "cannot write " + path);
    auto cols = ledger_columns(modalities, groups);
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << "\n";
    for (const auto& row : ledgers) {
        out << row.round << "," << strategy_name(row.strategy) << "," << detail::fmt17(row.train_loss)
            << "," << detail::fmt17(row.test_acc) << "," << detail::fmt17(row.macro_f1);
        for (double a : row.acc_per_modality) out << "," << detail::fmt17(a);
        for (double d : row.div_raw) out << "," << detail::fmt17(d);
        for (double d : row.div_ema) out << "," << detail::fmt17(d);
        out << "," << detail::fmt17(row.wall_s) << "," << detail::fmt17(row.fleet_j) << ","
            << row.upload_bytes << "," << row.straggler << "\n";
    }
}

inline void write_manifest(const std::string& path, const ScenarioConfig& sc, int threads) {
    nlohmann::ordered_json m;
    m["version"] = kVersion;
    m["threads"] = threads;
    m["config"] = sc.effective;
    int groups = static_cast<int>(GroupRegistry(sc.orch.task.modalities, sc.orch.task.dims,
                                                sc.orch.enc_layers, sc.orch.head_layers, sc.orch.rank,
                                                sc.orch.out_dim, sc.orch.task.classes)
                                      .size());
    m["group_count"] = groups;
    m["csv_columns"] = ledger_columns(sc.orch.task.modalities, groups);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("output_dir", "cannot write " + path);
    out << m.dump(2) << "\n";
}

}  // namespace relief
