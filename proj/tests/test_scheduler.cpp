#include "relief/scheduler.hpp"
#include "relief/verify.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace relief;

namespace {

DeviceProfile device(int id, std::vector<int> mods, int modality_count, double tau) {
    DeviceProfile p;
    p.id = id;
    p.mods = ModalitySet(mods, modality_count);
    p.tau_per_group = tau;
    return p;
}

}  // namespace

TEST_CASE("divergence formula") {
    Mat a = (Mat(1, 2) << 1, 0).finished();
    Mat b = (Mat(1, 2) << 3, 0).finished();
    REQUIRE(divergence({a, b}) == Catch::Approx(1.0).margin(1e-15));
    REQUIRE(divergence({a, a, a}) == 0.0);
    REQUIRE(divergence({a}) == 0.0);
    REQUIRE_THROWS_AS(divergence({}), ContractError);
}

TEST_CASE("divergence equals the elementwise population-variance oracle") {
    auto rng = rng_stream(5, {1});
    std::vector<Mat> deltas;
    for (int i = 0; i < 5; ++i) deltas.push_back(gaussian_mat(rng, 3, 3, 1.0));
    double got = divergence(deltas);

    // independent route: sum over coordinates of the population variance
    double oracle = 0.0;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            double mean = 0.0;
            for (const Mat& d : deltas) mean += d(r, c);
            mean /= 5.0;
            for (const Mat& d : deltas) oracle += (d(r, c) - mean) * (d(r, c) - mean) / 5.0;
        }
    }
    REQUIRE(got == Catch::Approx(oracle).margin(1e-12));
}

TEST_CASE("ema recursion") {
    DivergenceState st;
    st.gamma = 0.9;
    st.smoothed = {0.0};
    ema_update(st, {1.0});
    REQUIRE(st.smoothed[0] == Catch::Approx(0.9).margin(1e-15));

    // fixed point
    DivergenceState fp;
    fp.gamma = 0.3;
    fp.smoothed = {2.5};
    ema_update(fp, {2.5});
    REQUIRE(fp.smoothed[0] == Catch::Approx(2.5).margin(1e-15));

    // geometric approach to a constant signal from zero
    DivergenceState geo;
    geo.gamma = 0.9;
    geo.smoothed = {0.0};
    const double v = 3.0;
    for (int r = 1; r <= 6; ++r) {
        ema_update(geo, {v});
        REQUIRE(geo.smoothed[0] == Catch::Approx(v * (1.0 - std::pow(0.1, r))).margin(1e-12));
    }

    DivergenceState bad;
    bad.gamma = 1.0;
    bad.smoothed = {0.0};
    REQUIRE_THROWS_AS(ema_update(bad, {1.0}), ContractError);
}

TEST_CASE("budget arithmetic") {
    REQUIRE(budget(10.0, 2.0, 1.5, ModalitySet({0}, 4), 14) == 5);
    REQUIRE(budget(2.0, 2.0, 1.5, ModalitySet({0, 1}, 4), 14) == 2);
    REQUIRE(budget(1.0, 2.0, 1.5, ModalitySet({0, 1, 2}, 4), 14) == 3);
    REQUIRE(budget(10.0, 2.0, 1e-12, ModalitySet({0}, 4), 14) == 14);
    REQUIRE(budget_floor_only(10.0, 2.0, 1.5, 14) == 5);
    REQUIRE(budget_floor_only(2.0, 2.0, 1.5, 14) == 0);
    REQUIRE_THROWS_AS(budget(1.0, 0.0, 0.0, ModalitySet({0}, 4), 14), ContractError);
}

TEST_CASE("t_star worked examples and monotone budgets") {
    auto model = build_registry(4, {8, 8, 8, 8}, {2, 2, 2, 2}, 1, 4, 16, 4);
    const auto& reg = model.registry;

    std::vector<DeviceProfile> fleet{device(0, {0, 1, 2, 3}, 4, 1.0), device(1, {0}, 4, 55.0)};
    double t = solve_t_star(fleet, reg, 0.0);
    REQUIRE(std::abs(t - 55.0) <= 2e-3);
    REQUIRE(std::abs(verify::tstar_scan(fleet, reg, 0.0) - 55.0) <= 1e-12);

    // increasing the target never shrinks a budget
    for (double bump : {0.5, 3.0, 10.0, 100.0}) {
        for (const auto& p : fleet) {
            int k0 = budget(t, 0.0, p.tau_per_group, p.mods, reg.size());
            int k1 = budget(t + bump, 0.0, p.tau_per_group, p.mods, reg.size());
            REQUIRE(k1 >= k0);
        }
    }

    REQUIRE_THROWS_AS(solve_t_star({}, reg, 0.0), ContractError);
}

TEST_CASE("allocation honours budgets, mandatory blocks, and tie-breaking") {
    auto model = build_registry(3, {2, 2, 2}, {1, 1, 1}, 1, 2, 4, 2);
    const auto& reg = model.registry;  // G = 3 + 1 + 3 + 1 = 8

    DivergenceState st;
    st.gamma = 0.9;
    st.smoothed = {0.1, 0.2, 0.3, 0.9, 0.8, 0.7, 0.6, 0.5};
    st.raw = st.smoothed;
    st.seeded = true;

    // k = |M_n|: mandatory blocks only
    std::vector<DeviceProfile> slow{device(0, {0, 2}, 3, 100.0)};
    auto plans = allocate(st, slow, reg, 200.0 + 1e-6, 0.0);
    REQUIRE(plans[0].groups == std::vector<int>{0, 2});
    REQUIRE(plans[0].mandatory == std::vector<int>{0, 2});

    // equal divergences: mandatory plus the lowest accessible ids
    DivergenceState flat;
    flat.gamma = 0.9;
    flat.smoothed.assign(8, 1.0);
    flat.raw = flat.smoothed;
    flat.seeded = true;
    std::vector<DeviceProfile> mid{device(0, {1}, 3, 1.0)};
    // accessible: block 1, B=3, enc(1)=5, head=7 -> budget 3 picks {1,3,5}
    auto p2 = allocate(flat, mid, reg, 3.0, 0.0);
    REQUIRE(p2[0].groups == std::vector<int>{1, 3, 5});

    // scaling all divergences never changes plans
    DivergenceState scaled = st;
    for (auto& v : scaled.smoothed) v *= 37.5;
    std::vector<DeviceProfile> fleet{device(0, {0, 1}, 3, 0.7), device(1, {2}, 3, 2.0)};
    auto a = allocate(st, fleet, reg, 4.0, 0.1);
    auto b = allocate(scaled, fleet, reg, 4.0, 0.1);
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i].groups == b[i].groups);
}

TEST_CASE("allocation matches the exhaustive subset oracle") {
    auto model = build_registry(3, {2, 2, 2}, {1, 1, 1}, 1, 2, 4, 2);
    const auto& reg = model.registry;
    auto rng = rng_stream(17, {3});
    std::uniform_real_distribution<double> u(0.0, 1.0);

    for (int trial = 0; trial < 50; ++trial) {
        DivergenceState st;
        st.gamma = 0.9;
        st.smoothed.resize(static_cast<std::size_t>(reg.size()));
        for (auto& v : st.smoothed) v = u(rng);
        st.raw = st.smoothed;
        st.seeded = true;

        std::vector<int> mods;
        for (int m = 0; m < 3; ++m)
            if (u(rng) < 0.6) mods.push_back(m);
        if (mods.empty()) mods.push_back(0);
        double tau = 0.3 + 2.0 * u(rng);
        std::vector<DeviceProfile> fleet{device(0, mods, 3, tau)};
        double t_star = solve_t_star(fleet, reg, 0.05);
        auto plan = allocate(st, fleet, reg, t_star, 0.05)[0];

        // brute force over all feasible selections of the same size
        auto acc = accessible_groups(reg, fleet[0].mods);
        std::vector<int> rest;
        for (int g : acc)
            if (std::find(plan.mandatory.begin(), plan.mandatory.end(), g) == plan.mandatory.end())
                rest.push_back(g);
        int slots = static_cast<int>(plan.groups.size() - plan.mandatory.size());
        REQUIRE(slots >= 0);

        double best = -1.0;
        std::vector<int> best_set;
        std::vector<int> picked;
        auto walk = [&](auto&& self, std::size_t from, int left) -> void {
            if (left == 0) {
                double sum = 0.0;
                for (int g : picked) sum += st.smoothed[static_cast<std::size_t>(g)];
                std::vector<int> candidate = plan.mandatory;
                candidate.insert(candidate.end(), picked.begin(), picked.end());
                std::sort(candidate.begin(), candidate.end());
                if (sum > best + 1e-15 || (std::abs(sum - best) <= 1e-15 && candidate < best_set)) {
                    best = sum;
                    best_set = candidate;
                }
                return;
            }
            for (std::size_t i = from; i < rest.size(); ++i) {
                picked.push_back(rest[i]);
                self(self, i + 1, left - 1);
                picked.pop_back();
            }
        };
        walk(walk, 0, slots);
        REQUIRE(plan.groups == best_set);
    }
}

TEST_CASE("water-filling closed form") {
    auto w = waterfill_optimum({4.0, 1.0}, 3.0);
    REQUIRE(w.x_star[0] == Catch::Approx(2.0).margin(1e-12));
    REQUIRE(w.x_star[1] == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(w.r_star == Catch::Approx(3.0).margin(1e-12));

    auto eq = waterfill_optimum({2.5, 2.5, 2.5, 2.5}, 10.0);
    for (double x : eq.x_star) REQUIRE(x == Catch::Approx(2.5).margin(1e-12));

    auto w3 = waterfill_optimum({9.0, 4.0, 1.0}, 6.0);
    REQUIRE(w3.x_star[0] == Catch::Approx(3.0).margin(1e-12));
    REQUIRE(w3.x_star[1] == Catch::Approx(2.0).margin(1e-12));
    REQUIRE(w3.x_star[2] == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(w3.r_star == Catch::Approx(6.0).margin(1e-12));

    REQUIRE_THROWS_AS(waterfill_optimum({1.0, 0.0}, 3.0), ContractError);
    REQUIRE_THROWS_AS(waterfill_optimum({1.0}, 0.0), ContractError);
}

TEST_CASE("lattice greedy oracle equals exhaustive enumeration for small M") {
    auto rng = rng_stream(23, {9});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        int m = 2 + static_cast<int>(rng() % 2);
        std::vector<double> deltas(static_cast<std::size_t>(m));
        for (auto& d : deltas) d = 0.1 + 9.9 * u(rng);
        double k = m + 20.0 * u(rng);
        auto greedy = verify::waterfill_lattice_greedy(deltas, k, 40);
        double exhaustive = verify::waterfill_lattice_exhaustive(deltas, k, 40);
        REQUIRE(greedy.residual == Catch::Approx(exhaustive).margin(1e-9));
    }
}

TEST_CASE("waterfill optimality against random feasible perturbations") {
    auto rng = rng_stream(29, {11});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        int m = 2 + static_cast<int>(rng() % 5);
        std::vector<double> deltas(static_cast<std::size_t>(m));
        for (auto& d : deltas) d = 10.0 * (1.0 - u(rng));
        double k = m + (100.0 - m) * u(rng);
        auto w = waterfill_optimum(deltas, k);
        for (int pert = 0; pert < 100; ++pert) {
            // random positive allocation on the same budget
            std::vector<double> x(static_cast<std::size_t>(m));
            double sum = 0.0;
            for (auto& v : x) {
                v = 1e-3 + u(rng);
                sum += v;
            }
            for (auto& v : x) v *= k / sum;
            REQUIRE(w.r_star <= verify::residual_of(deltas, x) + 1e-9);
        }
    }
}

TEST_CASE("greedy ranking preserves the waterfill ordering") {
    auto rng = rng_stream(31, {13});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> deltas(5);
        for (auto& d : deltas) d = 10.0 * (1.0 - u(rng));
        auto w = waterfill_optimum(deltas, 10.0);
        for (std::size_t i = 0; i < deltas.size(); ++i)
            for (std::size_t j = 0; j < deltas.size(); ++j)
                if (deltas[i] > deltas[j]) REQUIRE(w.x_star[i] > w.x_star[j] - 1e-12);
    }
}

TEST_CASE("regret tracking contracts") {
    // static stream: zero regret from the first round
    std::vector<std::vector<double>> stat(50, {3.0, 2.0, 1.0, 0.5});
    auto reg = regret_track(stat, 0.9, 0.0, 2);
    REQUIRE(reg.cumulative_discrete.back() == 0.0);
    REQUIRE(reg.cumulative_continuous.back() == Catch::Approx(0.0).margin(1e-12));

    // drift-bound violations are rejected
    std::vector<std::vector<double>> jumpy{{1.0, 2.0}, {1.0, 2.6}};
    REQUIRE_THROWS_AS(regret_track(jumpy, 0.9, 0.5, 1), ContractError);
    std::vector<std::vector<double>> nonpos{{1.0, 0.0}};
    REQUIRE_THROWS_AS(regret_track(nonpos, 0.9, 0.5, 1), ContractError);

    // gamma near 1: EMA equals the raw signal, regret vanishes
    auto stream = verify::drift_streams(500, 5, 0.05, 7);
    auto fast = regret_track(stream, 1.0 - 1e-12, 0.05, 2);
    REQUIRE(fast.cumulative_discrete.back() == 0.0);

    // discrete regret is nonnegative and nondecreasing
    auto slow = regret_track(stream, 0.9, 0.05, 2);
    double prev = 0.0;
    for (double v : slow.cumulative_discrete) {
        REQUIRE(v >= prev - 1e-15);
        prev = v;
    }
}
