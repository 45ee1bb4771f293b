#include "relief/orchestrator.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace relief;

namespace {

// small canonical-shaped fleet: 1x full, 2x {0,1} (4x slower), 1x {0} (10x slower)
OrchestratorConfig small_config(std::uint64_t seed = 1) {
    OrchestratorConfig oc;
    oc.task.modalities = 3;
    oc.task.dims = {4, 4, 4};
    oc.task.classes = 3;
    oc.task.samples_per_client = 12;
    oc.task.noise_sigma = 0.3;
    oc.task.hetero_zeta = 0.3;
    oc.task.rare_signal_weight = {0.4, 0.3, 0.3};
    oc.task.seed = seed;
    oc.enc_layers = {1, 1, 1};
    oc.head_layers = 1;
    oc.rank = 2;
    oc.out_dim = 8;
    oc.epochs = 2;
    oc.lr = 0.05;
    oc.batch = 6;
    oc.rounds = 4;
    oc.gamma = 0.9;
    oc.t_overhead = 0.05;
    oc.test_samples = 60;
    oc.threads = 1;

    auto add = [&](std::vector<int> mods, double slowdown, double power) {
        DeviceProfile p;
        p.id = static_cast<int>(oc.profiles.size());
        p.mods = ModalitySet(mods, 3);
        p.compute_slowdown = slowdown;
        p.tau_per_group = 0.02 * slowdown;
        p.uplink_bps = 1e9;
        p.power_active_w = power;
        p.power_comm_w = 0.5 * power;
        p.power_idle_w = 0.2 * power;
        oc.assignment.push_back(p.mods);
        oc.profiles.push_back(p);
    };
    add({0, 1, 2}, 1.0, 60.0);
    add({0, 1}, 4.0, 30.0);
    add({0, 1}, 4.0, 30.0);
    add({0}, 10.0, 5.0);
    oc.task.clients = 4;
    return oc;
}

}  // namespace

TEST_CASE("zero rounds leaves only the bootstrap row") {
    auto oc = small_config();
    oc.rounds = 0;
    auto res = run(oc);
    REQUIRE(res.ledgers.size() == 1);
    REQUIRE(res.ledgers[0].round == 0);
}

TEST_CASE("single full-modality client: relief and fedavg coincide bitwise") {
    auto oc = small_config();
    oc.assignment.assign(1, ModalitySet({0, 1, 2}, 3));
    oc.profiles.resize(1);
    oc.task.clients = 1;
    oc.rounds = 5;

    OrchestratorConfig fa = oc;
    fa.strategy = Strategy::FedAvg;
    oc.strategy = Strategy::Relief;
    auto a = run(oc);
    auto b = run(fa);
    for (std::size_t r = 0; r < a.ledgers.size(); ++r) {
        REQUIRE(a.ledgers[r].train_loss == b.ledgers[r].train_loss);
        REQUIRE(a.ledgers[r].test_loss == b.ledgers[r].test_loss);
    }
    Vec fa_flat = flatten(b.final_model);
    Vec re_flat = flatten(a.final_model);
    REQUIRE((fa_flat.array() == re_flat.array()).all());
}

TEST_CASE("relief plans always include the mandatory fusion blocks") {
    auto oc = small_config();
    oc.rounds = 6;
    auto res = run(oc, /*keep_payloads=*/true);
    const auto& reg = res.final_model.registry;
    for (const auto& payloads : res.round_payloads) {
        for (const auto& p : payloads) {
            for (int m : p.mods.indices()) {
                REQUIRE(p.has(reg.fusion_block_id(m)));
            }
        }
    }
}

TEST_CASE("ledger byte accounting equals the serialized payload sizes") {
    auto oc = small_config();
    oc.rounds = 3;
    auto res = run(oc, /*keep_payloads=*/true);
    for (std::size_t r = 0; r < res.ledgers.size(); ++r) {
        std::uint64_t total = 0;
        for (const auto& p : res.round_payloads[r]) total += serialize_payload(p).size();
        REQUIRE(res.ledgers[r].upload_bytes == total);
    }
}

TEST_CASE("client parallelism does not change any ledger bit") {
    auto oc = small_config();
    oc.rounds = 5;
    auto serial = run(oc);
    oc.threads = 4;
    auto parallel = run(oc);
    REQUIRE(serial.ledgers.size() == parallel.ledgers.size());
    for (std::size_t r = 0; r < serial.ledgers.size(); ++r) {
        REQUIRE(serial.ledgers[r].train_loss == parallel.ledgers[r].train_loss);
        REQUIRE(serial.ledgers[r].test_acc == parallel.ledgers[r].test_acc);
        REQUIRE(serial.ledgers[r].upload_bytes == parallel.ledgers[r].upload_bytes);
        for (std::size_t g = 0; g < serial.ledgers[r].div_ema.size(); ++g)
            REQUIRE(serial.ledgers[r].div_ema[g] == parallel.ledgers[r].div_ema[g]);
    }
    Vec a = flatten(serial.final_model);
    Vec b = flatten(parallel.final_model);
    REQUIRE((a.array() == b.array()).all());
}

TEST_CASE("untrained model scores near chance on every modality probe") {
    auto oc = small_config();
    oc.rounds = 0;
    oc.epochs = 0;
    oc.test_samples = 300;
    auto res = run(oc);
    for (double acc : res.ledgers[0].acc_per_modality) {
        REQUIRE(acc > 1.0 / 3.0 - 0.15);
        REQUIRE(acc < 1.0 / 3.0 + 0.15);
    }
}

TEST_CASE("signal concentrated on modality 0 shows up only in its probe") {
    auto oc = small_config();
    oc.task.rare_signal_weight = {1.0, 0.0, 0.0};
    oc.task.noise_sigma = 0.2;
    oc.task.hetero_zeta = 0.0;
    oc.rounds = 25;
    oc.epochs = 3;
    oc.lr = 0.08;
    oc.test_samples = 300;
    auto res = run(oc);
    const auto& last = res.ledgers.back();
    REQUIRE(last.acc_per_modality[0] > 0.8);
    REQUIRE(last.acc_per_modality[1] < 0.5);
    REQUIRE(last.acc_per_modality[2] < 0.5);
}

TEST_CASE("equally informative modalities give probes in one band") {
    auto oc = small_config();
    // full-modality fleet so every pathway trains equally
    for (auto& mods : oc.assignment) mods = ModalitySet({0, 1, 2}, 3);
    for (auto& p : oc.profiles) p.mods = ModalitySet({0, 1, 2}, 3);
    oc.task.rare_signal_weight = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    oc.task.noise_sigma = 0.2;
    oc.task.hetero_zeta = 0.0;
    oc.rounds = 25;
    oc.epochs = 3;
    oc.lr = 0.08;
    oc.test_samples = 300;
    auto res = run(oc);
    const auto& acc = res.ledgers.back().acc_per_modality;
    double lo = *std::min_element(acc.begin(), acc.end());
    double hi = *std::max_element(acc.begin(), acc.end());
    REQUIRE(hi - lo < 0.25);
    REQUIRE(lo > 0.5);
}

TEST_CASE("v2 and v3 share plan sizes and the exact same wall clock") {
    auto oc = small_config();
    oc.rounds = 8;
    OrchestratorConfig v2 = oc, v3 = oc;
    v2.strategy = Strategy::NoCohortAgg;
    v3.strategy = Strategy::RandomElastic;
    auto r2 = run(v2);
    auto r3 = run(v3);
    double wall2 = 0, wall3 = 0;
    for (std::size_t r = 0; r < r2.ledgers.size(); ++r) {
        wall2 += r2.ledgers[r].wall_s;
        wall3 += r3.ledgers[r].wall_s;
    }
    REQUIRE(wall2 == wall3);
    REQUIRE(r2.t_star == r3.t_star);
}

TEST_CASE("strategy wall-clock ordering is deterministic") {
    auto oc = small_config();
    oc.rounds = 6;
    std::map<Strategy, double> walls;
    for (Strategy s : {Strategy::FedAvg, Strategy::Relief, Strategy::NoElastic, Strategy::NoCohortAgg,
                       Strategy::RandomElastic}) {
        OrchestratorConfig c = oc;
        c.strategy = s;
        auto r = run(c);
        double w = 0;
        for (const auto& row : r.ledgers) w += row.wall_s;
        walls[s] = w;
    }
    REQUIRE(walls[Strategy::FedAvg] > walls[Strategy::NoElastic]);
    REQUIRE(walls[Strategy::NoElastic] > walls[Strategy::Relief]);
    REQUIRE(walls[Strategy::Relief] > walls[Strategy::NoCohortAgg]);
    REQUIRE(walls[Strategy::NoCohortAgg] == walls[Strategy::RandomElastic]);
}

TEST_CASE("diagnostics require the fedavg strategy") {
    auto oc = small_config();
    REQUIRE_THROWS_AS(diagnostics_run(oc), ContractError);
}

TEST_CASE("macro F1 helper") {
    std::vector<int> truth{0, 0, 1, 1, 2, 2};
    REQUIRE(detail::macro_f1_score(truth, truth, 3) == 1.0);
    std::vector<int> all_zero(6, 0);
    // class 0: precision 1/3, recall 1 -> f1 = 1/2; classes 1,2: 0
    REQUIRE(detail::macro_f1_score(truth, all_zero, 3) == Catch::Approx(0.5 / 3.0).margin(1e-12));
}

TEST_CASE("config validation catches inconsistent devices") {
    auto oc = small_config();
    oc.assignment[1] = ModalitySet({0, 1}, 4);  // wrong modality universe
    REQUIRE_THROWS_AS(run(oc), ConfigError);

    auto oc2 = small_config();
    oc2.gamma = 1.5;
    REQUIRE_THROWS_AS(run(oc2), ConfigError);

    auto oc3 = small_config();
    oc3.profiles[0].tau_per_group = 0.0;
    REQUIRE_THROWS_AS(run(oc3), ConfigError);
}

TEST_CASE("strategy names round-trip") {
    for (Strategy s : {Strategy::Relief, Strategy::NoElastic, Strategy::NoCohortAgg,
                       Strategy::RandomElastic, Strategy::FedAvg})
        REQUIRE(parse_strategy(strategy_name(s)) == s);
    REQUIRE(parse_strategy("V0") == Strategy::Relief);
    REQUIRE(parse_strategy("v3") == Strategy::RandomElastic);
    REQUIRE(!parse_strategy("nope").has_value());
}
