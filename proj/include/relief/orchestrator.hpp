#pragma once

#include "relief/aggregation.hpp"
#include "relief/scheduler.hpp"
#include "relief/synthetic_task.hpp"

#include <array>
#include <atomic>
#include <optional>
#include <thread>

namespace relief {

enum class Strategy { Relief, NoElastic, NoCohortAgg, RandomElastic, FedAvg };

inline std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::Relief: return "relief";
        case Strategy::NoElastic: return "no_elastic";
        case Strategy::NoCohortAgg: return "no_cohort_agg";
        case Strategy::RandomElastic: return "random_elastic";
        case Strategy::FedAvg: return "fedavg";
    }
    return "?";
}

inline std::optional<Strategy> parse_strategy(std::string name) {
    for (char& c : name) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (name == "relief" || name == "v0") return Strategy::Relief;
    if (name == "no_elastic" || name == "v1") return Strategy::NoElastic;
    if (name == "no_cohort_agg" || name == "v2") return Strategy::NoCohortAgg;
    if (name == "random_elastic" || name == "v3") return Strategy::RandomElastic;
    if (name == "fedavg") return Strategy::FedAvg;
    return std::nullopt;
}

/// One row per round: learning metrics, divergence signals, and the system
/// model's timing/energy/communication accounting.
struct RoundLedger {
    int round = 0;
    Strategy strategy = Strategy::Relief;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_loss = 0.0;
    double test_acc = 0.0;
    double macro_f1 = 0.0;
    std::vector<double> acc_per_modality;
    std::vector<double> div_raw;
    std::vector<double> div_ema;
    double wall_s = 0.0;
    double fleet_j = 0.0;
    std::vector<double> device_j;
    std::uint64_t upload_bytes = 0;
    int straggler = 0;
};

struct OrchestratorConfig {
    TaskSpec task;
    std::vector<int> enc_layers;
    int head_layers = 1;
    int rank = 4;
    int out_dim = 16;
    std::vector<ModalitySet> assignment;   // per client
    std::vector<DeviceProfile> profiles;   // per client, ids 0..N-1
    int epochs = 5;
    double lr = 1e-3;
    int batch = 32;
    int rounds = 200;
    double gamma = 0.9;
    double t_overhead = 0.0;
    Strategy strategy = Strategy::Relief;
    int test_samples = 256;
    int threads = 1;

    void validate() const {
        task.validate();
        if (static_cast<int>(assignment.size()) != task.clients)
            throw ConfigError("devices", "device count does not match task.clients");
        if (profiles.size() != assignment.size())
            throw ConfigError("devices", "profiles and assignment must align");
        for (const auto& mods : assignment)
            if (mods.modality_count() != task.modalities)
                throw ConfigError("devices.modalities", "device modality universe != task modalities");
        if (static_cast<int>(enc_layers.size()) != task.modalities)
            throw ConfigError("model.encoder_layers", "need one entry per modality");
        if (epochs < 0) throw ConfigError("training.epochs", "must be >= 0");
        if (rounds < 0) throw ConfigError("training.rounds", "must be >= 0");
        if (batch < 1) throw ConfigError("training.batch", "must be >= 1");
        if (lr < 0.0) throw ConfigError("training.lr", "must be >= 0");
        if (gamma <= 0.0 || gamma >= 1.0) throw ConfigError("scheduler.gamma", "must be in (0,1)");
        if (t_overhead < 0.0) throw ConfigError("scheduler.t_overhead", "must be >= 0");
        if (test_samples < 1) throw ConfigError("task.test_samples", "must be >= 1");
        for (const auto& p : profiles) {
            if (p.tau_per_group <= 0.0) throw ConfigError("devices.tau", "must be positive");
            if (p.uplink_bps <= 0.0) throw ConfigError("devices.uplink_bps", "must be positive");
            if (p.compute_slowdown < 1.0) throw ConfigError("devices.slowdown", "must be >= 1");
        }
    }
};

struct RunResult {
    std::vector<RoundLedger> ledgers;
    GlobalModel final_model;
    FrozenBase base;
    double t_star = 0.0;
    std::vector<std::vector<UpdatePayload>> round_payloads;  // only when kept
};

namespace detail {

template <typename F>
void parallel_for(int n, int threads, F&& body) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
    };
    std::vector<std::thread> pool;
    int count = std::min(threads, n);
    pool.reserve(static_cast<std::size_t>(count));
    for (int t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

inline std::vector<int> predict(const LocalModel& model, const ClientDataset& data) {
    std::vector<int> out(static_cast<std::size_t>(data.size()));
    for (int i = 0; i < data.size(); ++i) {
        auto cache = forward_sample(model, data.features[static_cast<std::size_t>(i)]);
        Eigen::Index arg = 0;
        cache.logits.maxCoeff(&arg);
        out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }
    return out;
}

inline double macro_f1_score(const std::vector<int>& truth, const std::vector<int>& pred, int classes) {
    double f1_sum = 0.0;
    for (int c = 0; c < classes; ++c) {
        int tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            bool t = truth[i] == c, p = pred[i] == c;
            tp += (t && p);
            fp += (!t && p);
            fn += (t && !p);
        }
        double denom = 2.0 * tp + fp + fn;
        f1_sum += denom > 0.0 ? 2.0 * tp / denom : 0.0;
    }
    return f1_sum / classes;
}

// FedAvg uploads every group; untrained ones carry exact zeros.
inline void complete_payload_all_groups(UpdatePayload& p, const GroupRegistry& registry) {
    std::vector<std::pair<int, Mat>> full;
    full.reserve(static_cast<std::size_t>(registry.size()));
    for (int g = 0; g < registry.size(); ++g) {
        bool found = false;
        for (auto& [gid, mat] : p.deltas)
            if (gid == g) {
                full.emplace_back(g, std::move(mat));
                found = true;
                break;
            }
        if (!found) full.emplace_back(g, Mat::Zero(registry.at(g).rows, registry.at(g).cols));
    }
    p.deltas = std::move(full);
    p.bytes = serialize_payload(p).size();
}

}  // namespace detail

/// Accuracy of each single-modality probe: the holdout is re-evaluated with
/// every other modality's features zeroed.
inline std::vector<double> per_modality_eval(const LocalModel& model, const ClientDataset& testset) {
    const int modalities = testset.mods.modality_count();
    std::vector<double> acc(static_cast<std::size_t>(modalities), 0.0);
    for (int m = 0; m < modalities; ++m) {
        ClientDataset probe = testset;
        for (auto& row : probe.features)
            for (int k = 0; k < modalities; ++k)
                if (k != m) row[static_cast<std::size_t>(k)].setZero();
        auto pred = detail::predict(model, probe);
        int hit = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == probe.labels[i];
        acc[static_cast<std::size_t>(m)] = static_cast<double>(hit) / pred.size();
    }
    return acc;
}

/// Runs the full protocol: one bootstrap round where every device trains all
/// its accessible groups, then `rounds` rounds of allocate -> parallel local
/// training -> aggregation, one ledger row per round (bootstrap is row 0).
inline RunResult run(const OrchestratorConfig& config, bool keep_payloads = false) {
    config.validate();
    const int n_clients = config.task.clients;
    const std::uint64_t seed = config.task.seed;

    GlobalModel global = build_registry(config.task.modalities, config.task.dims, config.enc_layers,
                                        config.head_layers, config.rank, config.out_dim,
                                        config.task.classes);
    init_adapter(global, config.task.seed);
    const GroupRegistry& reg = global.registry;
    const int g_total = reg.size();

    RunResult result;
    result.base = build_frozen_base(reg, seed);
    const FrozenBase& base = result.base;

    const std::vector<ClientDataset> data = generate(config.task, config.assignment);
    const ClientDataset testset = generate_testset(config.task, config.test_samples);

    std::vector<std::vector<int>> accessible(static_cast<std::size_t>(n_clients));
    for (int n = 0; n < n_clients; ++n)
        accessible[static_cast<std::size_t>(n)] = accessible_groups(reg, config.assignment[static_cast<std::size_t>(n)]);

    const bool elastic = config.strategy == Strategy::Relief || config.strategy == Strategy::NoCohortAgg ||
                         config.strategy == Strategy::RandomElastic;
    double t_star = 0.0;
    if (elastic) {
        bool mandatory = config.strategy == Strategy::Relief;
        t_star = solve_t_star(config.profiles, reg, config.t_overhead, mandatory);
    }
    result.t_star = t_star;

    DivergenceState div;
    div.gamma = config.gamma;
    div.raw.assign(static_cast<std::size_t>(g_total), 0.0);
    div.smoothed.assign(static_cast<std::size_t>(g_total), 0.0);

    auto full_plans = [&]() {
        std::vector<AllocationPlan> plans(static_cast<std::size_t>(n_clients));
        for (int n = 0; n < n_clients; ++n) {
            auto& plan = plans[static_cast<std::size_t>(n)];
            plan.client = n;
            plan.groups = accessible[static_cast<std::size_t>(n)];
            plan.budget = static_cast<int>(plan.groups.size());
            for (int m : config.assignment[static_cast<std::size_t>(n)].indices())
                plan.mandatory.push_back(reg.fusion_block_id(m));
        }
        return plans;
    };

    auto plans_for_round = [&](int round) {
        if (round == 0 || config.strategy == Strategy::NoElastic || config.strategy == Strategy::FedAvg)
            return full_plans();
        switch (config.strategy) {
            case Strategy::Relief:
                return allocate(div, config.profiles, reg, t_star, config.t_overhead);
            case Strategy::NoCohortAgg:
                return allocate_no_mandatory(div, config.profiles, reg, t_star, config.t_overhead);
            case Strategy::RandomElastic: {
                std::vector<AllocationPlan> plans(static_cast<std::size_t>(n_clients));
                for (int n = 0; n < n_clients; ++n) {
                    auto& plan = plans[static_cast<std::size_t>(n)];
                    plan.client = n;
                    const auto& p = config.profiles[static_cast<std::size_t>(n)];
                    plan.budget = budget_floor_only(t_star, config.t_overhead, p.tau_per_group, g_total);
                    std::vector<int> acc = accessible[static_cast<std::size_t>(n)];
                    int target = std::min(plan.budget, static_cast<int>(acc.size()));
                    auto rng = rng_stream(seed, {streams::kRandomPlan, static_cast<std::uint64_t>(round),
                                                 static_cast<std::uint64_t>(n)});
                    std::shuffle(acc.begin(), acc.end(), rng);
                    plan.groups.assign(acc.begin(), acc.begin() + target);
                    std::sort(plan.groups.begin(), plan.groups.end());
                }
                return plans;
            }
            default: return full_plans();
        }
    };

    for (int round = 0; round <= config.rounds; ++round) {
        std::vector<AllocationPlan> plans = plans_for_round(round);

        // parallel local training against the same global snapshot
        std::vector<UpdatePayload> payloads(static_cast<std::size_t>(n_clients));
        detail::parallel_for(n_clients, config.threads, [&](int n) {
            LocalModel local;
            local.params = global;
            local.base = &base;
            auto rng = rng_stream(seed, {streams::kShuffle, static_cast<std::uint64_t>(n),
                                         static_cast<std::uint64_t>(round)});
            payloads[static_cast<std::size_t>(n)] =
                local_train(local, data[static_cast<std::size_t>(n)], plans[static_cast<std::size_t>(n)],
                            config.epochs, config.lr, config.batch, rng);
        });

        if (config.strategy == Strategy::FedAvg)
            for (auto& p : payloads) detail::complete_payload_all_groups(p, reg);

        // aggregation (merge order is ascending client id by construction)
        if (config.strategy == Strategy::FedAvg) {
            aggregate_fedavg(global, payloads);
        } else if (config.strategy == Strategy::NoCohortAgg) {
            aggregate_uniform_over_uploaders(global, payloads);
        } else {
            aggregate_cohort(global, payloads);
            std::vector<UpdatePayload> with_b;
            const int bid = reg.shared_projection_id();
            for (const auto& p : payloads)
                if (p.has(bid)) with_b.push_back(p);
            if (!with_b.empty()) aggregate_b(global, with_b);
        }

        // divergence bookkeeping; stale groups carry their previous values
        RawDivergences rd = raw_divergences(reg, payloads);
        if (!div.seeded) {
            div.raw = rd.values;
            div.smoothed = rd.values;
            div.seeded = true;
        } else {
            for (int g = 0; g < g_total; ++g) {
                if (!rd.fresh[static_cast<std::size_t>(g)]) continue;
                div.raw[static_cast<std::size_t>(g)] = rd.values[static_cast<std::size_t>(g)];
                div.smoothed[static_cast<std::size_t>(g)] =
                    config.gamma * rd.values[static_cast<std::size_t>(g)] +
                    (1.0 - config.gamma) * div.smoothed[static_cast<std::size_t>(g)];
            }
        }

        // system accounting; FedAvg charges the full model on every device
        std::vector<int> timed_sizes(static_cast<std::size_t>(n_clients));
        std::vector<std::uint64_t> bytes(static_cast<std::size_t>(n_clients));
        for (int n = 0; n < n_clients; ++n) {
            timed_sizes[static_cast<std::size_t>(n)] =
                config.strategy == Strategy::FedAvg
                    ? g_total
                    : static_cast<int>(plans[static_cast<std::size_t>(n)].groups.size());
            bytes[static_cast<std::size_t>(n)] = payloads[static_cast<std::size_t>(n)].bytes;
        }
        RoundTiming timing = round_timing(timed_sizes, config.profiles, bytes, config.t_overhead);
        std::vector<double> joules = round_energy(timing, config.profiles);

        // evaluation of the post-aggregation model
        LocalModel eval_model;
        eval_model.params = global;
        eval_model.base = &base;

        RoundLedger row;
        row.round = round;
        row.strategy = config.strategy;
        {
            double loss = 0.0;
            int correct = 0, total = 0;
            for (int n = 0; n < n_clients; ++n) {
                const auto& ds = data[static_cast<std::size_t>(n)];
                std::vector<int> idx(static_cast<std::size_t>(ds.size()));
                std::iota(idx.begin(), idx.end(), 0);
                auto res = forward_loss(eval_model, ds, idx);
                loss += res.loss * ds.size();
                correct += res.correct;
                total += ds.size();
            }
            row.train_loss = loss / total;
            row.train_acc = static_cast<double>(correct) / total;
        }
        {
            std::vector<int> idx(static_cast<std::size_t>(testset.size()));
            std::iota(idx.begin(), idx.end(), 0);
            auto res = forward_loss(eval_model, testset, idx);
            row.test_loss = res.loss;
            row.test_acc = static_cast<double>(res.correct) / testset.size();
            auto pred = detail::predict(eval_model, testset);
            row.macro_f1 = detail::macro_f1_score(testset.labels, pred, config.task.classes);
        }
        row.acc_per_modality = per_modality_eval(eval_model, testset);
        row.div_raw = div.raw;
        row.div_ema = div.smoothed;
        row.wall_s = timing.round_wall_s;
        row.straggler = timing.straggler;
        row.device_j = joules;
        row.fleet_j = fleet_energy(joules);
        for (const auto& p : payloads) row.upload_bytes += p.bytes;
        result.ledgers.push_back(std::move(row));

        if (keep_payloads) result.round_payloads.push_back(payloads);
    }

    result.final_model = std::move(global);
    return result;
}

/// Observation-style diagnostics on a FedAvg run: per-block mean cosine by
/// device-pair type, and per-group divergence means over five phases.
struct DiagnosticsReport {
    std::vector<double> full_full_cosine;    // per fusion block
    std::vector<double> full_single_cosine;  // per fusion block
    std::vector<std::array<double, 5>> phase_divergence;  // per group
    RunResult run;
};

inline DiagnosticsReport diagnostics_run(const OrchestratorConfig& config) {
    if (config.strategy != Strategy::FedAvg)
        throw ContractError("diagnostics_run: requires the FedAvg strategy");
    DiagnosticsReport report;
    report.run = run(config, /*keep_payloads=*/true);
    const GroupRegistry& reg = report.run.final_model.registry;
    const int modalities = reg.modalities();
    const int m_all = modalities;

    std::vector<double> ff_sum(static_cast<std::size_t>(modalities), 0.0);
    std::vector<int> ff_n(static_cast<std::size_t>(modalities), 0);
    std::vector<double> fs_sum(static_cast<std::size_t>(modalities), 0.0);
    std::vector<int> fs_n(static_cast<std::size_t>(modalities), 0);
    for (const auto& payloads : report.run.round_payloads) {
        auto cosines = pairwise_block_cosine(payloads, reg);
        for (int m = 0; m < modalities; ++m) {
            const Mat& c = cosines[static_cast<std::size_t>(m)];
            for (int i = 0; i < c.rows(); ++i) {
                for (int j = i + 1; j < c.cols(); ++j) {
                    if (std::isnan(c(i, j))) continue;
                    int ci = payloads[static_cast<std::size_t>(i)].mods.count();
                    int cj = payloads[static_cast<std::size_t>(j)].mods.count();
                    if (ci == m_all && cj == m_all) {
                        ff_sum[static_cast<std::size_t>(m)] += c(i, j);
                        ++ff_n[static_cast<std::size_t>(m)];
                    } else if ((ci == m_all && cj == 1) || (ci == 1 && cj == m_all)) {
                        fs_sum[static_cast<std::size_t>(m)] += c(i, j);
                        ++fs_n[static_cast<std::size_t>(m)];
                    }
                }
            }
        }
    }
    report.full_full_cosine.resize(static_cast<std::size_t>(modalities),
                                   std::numeric_limits<double>::quiet_NaN());
    report.full_single_cosine.resize(static_cast<std::size_t>(modalities),
                                     std::numeric_limits<double>::quiet_NaN());
    for (int m = 0; m < modalities; ++m) {
        if (ff_n[static_cast<std::size_t>(m)] > 0)
            report.full_full_cosine[static_cast<std::size_t>(m)] =
                ff_sum[static_cast<std::size_t>(m)] / ff_n[static_cast<std::size_t>(m)];
        if (fs_n[static_cast<std::size_t>(m)] > 0)
            report.full_single_cosine[static_cast<std::size_t>(m)] =
                fs_sum[static_cast<std::size_t>(m)] / fs_n[static_cast<std::size_t>(m)];
    }

    const auto& ledgers = report.run.ledgers;
    const int rounds = static_cast<int>(ledgers.size());
    report.phase_divergence.assign(static_cast<std::size_t>(reg.size()), {0, 0, 0, 0, 0});
    for (int g = 0; g < reg.size(); ++g) {
        for (int phase = 0; phase < 5; ++phase) {
            int lo = phase * rounds / 5;
            int hi = (phase + 1) * rounds / 5;
            double acc = 0.0;
            int n = 0;
            for (int r = lo; r < hi; ++r) {
                acc += ledgers[static_cast<std::size_t>(r)].div_raw[static_cast<std::size_t>(g)];
                ++n;
            }
            report.phase_divergence[static_cast<std::size_t>(g)][static_cast<std::size_t>(phase)] =
                n > 0 ? acc / n : 0.0;
        }
    }
    return report;
}

}  // namespace relief
