#pragma once

#include "relief/payload.hpp"
#include "relief/system_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace relief {

/// Per-group divergence signal: raw d_j and EMA-smoothed d_bar_j.
struct DivergenceState {
    std::vector<double> raw;
    std::vector<double> smoothed;
    double gamma = 0.9;
    bool seeded = false;  // set once the bootstrap round has filled the state
};

/// One device's training assignment for a round. `groups` is sorted by id;
/// mandatory fusion blocks are always a subset of `groups`.
struct AllocationPlan {
    int client = 0;
    std::vector<int> groups;
    int budget = 0;
    std::vector<int> mandatory;
};

/// Cohort-internal divergence of one group: mean squared Frobenius deviation
/// of the deltas from their mean. A single delta has divergence 0.
inline double divergence(const std::vector<Mat>& deltas) {
    if (deltas.empty()) throw ContractError("divergence: empty delta sequence");
    if (deltas.size() == 1) return 0.0;
    Mat mean = Mat::Zero(deltas.front().rows(), deltas.front().cols());
    for (const Mat& d : deltas) mean += d;
    mean /= static_cast<double>(deltas.size());
    double acc = 0.0;
    for (const Mat& d : deltas) acc += (d - mean).squaredNorm();
    return acc / static_cast<double>(deltas.size());
}

/// EMA recursion d_bar = gamma*raw + (1-gamma)*d_bar, elementwise.
inline void ema_update(DivergenceState& state, const std::vector<double>& raw) {
    if (state.gamma <= 0.0 || state.gamma >= 1.0) throw ContractError("ema_update: gamma must be in (0,1)");
    if (raw.size() != state.smoothed.size()) throw ContractError("ema_update: size mismatch");
    state.raw = raw;
    for (std::size_t j = 0; j < raw.size(); ++j)
        state.smoothed[j] = state.gamma * raw[j] + (1.0 - state.gamma) * state.smoothed[j];
}

/// Elastic budget k_n = max(|M_n|, floor((T* - T_o)/tau_n)), capped at the
/// total group count. When T* <= T_o the floor term is 0.
inline int budget(double t_star, double t_overhead, double tau_n, const ModalitySet& mods,
                  int total_groups) {
    if (tau_n <= 0.0) throw ContractError("budget: tau must be positive");
    int fill = 0;
    if (t_star > t_overhead) fill = static_cast<int>(std::floor((t_star - t_overhead) / tau_n));
    int k = std::max(mods.count(), fill);
    return std::min(k, total_groups);
}

/// Budget without the mandatory floor (the V2/V3 ablations): may be 0.
inline int budget_floor_only(double t_star, double t_overhead, double tau_n, int total_groups) {
    if (tau_n <= 0.0) throw ContractError("budget: tau must be positive");
    int fill = 0;
    if (t_star > t_overhead) fill = static_cast<int>(std::floor((t_star - t_overhead) / tau_n));
    return std::clamp(fill, 0, total_groups);
}

namespace detail {

inline std::vector<int> accessible_counts(const std::vector<DeviceProfile>& profiles,
                                          const GroupRegistry& registry) {
    std::vector<int> caps;
    caps.reserve(profiles.size());
    for (const auto& p : profiles)
        caps.push_back(static_cast<int>(accessible_groups(registry, p.mods).size()));
    return caps;
}

// Round target feasibility. A target T is feasible when (a) every device's
// budgeted time min(cap_n, max(|M_n|, floor((T-T_o)/tau_n))) * tau_n + T_o
// fits in T, and (b) T admits full training on the device whose complete
// accessible set finishes fastest -- that device is never a straggler, so
// relieving it only discards work. Without (b) the search would collapse to
// the mandatory-only bound and relieve fleets with no straggler at all.
// In the no-mandatory variant used by the V2/V3 ablations, (a) drops the
// |M_n| floor (and is then vacuous).
// Slack against last-ulp rounding when a probe lands exactly on a k*tau
// breakpoint; far below the 1e-3 search tolerance.
constexpr double kTimeEps = 1e-9;

inline bool t_star_feasible(double t, const std::vector<DeviceProfile>& profiles,
                            const std::vector<int>& caps, double t_overhead, bool mandatory) {
    double min_full = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < profiles.size(); ++i)
        min_full = std::min(min_full, static_cast<double>(caps[i]) * profiles[i].tau_per_group);
    if (t + kTimeEps < t_overhead + min_full) return false;
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        const auto& p = profiles[i];
        int fill = 0;
        if (t > t_overhead) fill = static_cast<int>(std::floor((t - t_overhead) / p.tau_per_group));
        int k = mandatory ? std::max(p.mods.count(), fill) : std::max(0, fill);
        k = std::min(k, caps[i]);
        if (static_cast<double>(k) * p.tau_per_group + t_overhead > t + kTimeEps) return false;
    }
    return true;
}

}  // namespace detail

/// Smallest feasible per-round time target, found by binary search to 1e-3 s
/// over [T_o + max_n |M_n|*tau_n, T_o + max_n G*tau_n] (from T_o in the
/// no-mandatory variant). See detail::t_star_feasible for the predicate.
inline double solve_t_star(const std::vector<DeviceProfile>& profiles, const GroupRegistry& registry,
                           double t_overhead, bool mandatory = true) {
    if (profiles.empty()) throw ContractError("solve_t_star: need at least one profile");
    const std::vector<int> caps = detail::accessible_counts(profiles, registry);
    double lo = t_overhead;
    double hi = t_overhead;
    for (const auto& p : profiles) {
        if (p.tau_per_group <= 0.0) throw ContractError("solve_t_star: tau must be positive");
        if (mandatory) lo = std::max(lo, t_overhead + p.mods.count() * p.tau_per_group);
        hi = std::max(hi, t_overhead + registry.size() * p.tau_per_group);
    }
    if (detail::t_star_feasible(lo, profiles, caps, t_overhead, mandatory)) return lo;
    constexpr double kTol = 1e-3;
    while (hi - lo > kTol) {
        double mid = 0.5 * (lo + hi);
        if (detail::t_star_feasible(mid, profiles, caps, t_overhead, mandatory))
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

namespace detail {

// Descending smoothed divergence, ties by ascending group id.
inline std::vector<int> rank_by_divergence(const std::vector<double>& smoothed,
                                           const std::vector<int>& candidates) {
    std::vector<int> order = candidates;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        double da = smoothed[static_cast<std::size_t>(a)];
        double db = smoothed[static_cast<std::size_t>(b)];
        if (da != db) return da > db;
        return a < b;
    });
    return order;
}

}  // namespace detail

/// Greedy top-k selection with mandatory fusion-block inclusion. |S_n| =
/// min(k_n, |accessible|); slots beyond the mandatory set are filled by
/// descending d_bar, ties by ascending group id.
inline std::vector<AllocationPlan> allocate(const DivergenceState& state,
                                            const std::vector<DeviceProfile>& profiles,
                                            const GroupRegistry& registry, double t_star,
                                            double t_overhead) {
    if (static_cast<int>(state.smoothed.size()) != registry.size())
        throw ContractError("allocate: divergence state does not cover the registry");
    std::vector<AllocationPlan> plans;
    plans.reserve(profiles.size());
    for (const auto& p : profiles) {
        AllocationPlan plan;
        plan.client = p.id;
        for (int m : p.mods.indices()) plan.mandatory.push_back(registry.fusion_block_id(m));
        plan.budget = budget(t_star, t_overhead, p.tau_per_group, p.mods, registry.size());
        std::vector<int> acc = accessible_groups(registry, p.mods);
        int target = std::min(plan.budget, static_cast<int>(acc.size()));
        std::vector<int> rest;
        for (int g : acc)
            if (std::find(plan.mandatory.begin(), plan.mandatory.end(), g) == plan.mandatory.end())
                rest.push_back(g);
        std::vector<int> ranked = detail::rank_by_divergence(state.smoothed, rest);
        plan.groups = plan.mandatory;
        for (int g : ranked) {
            if (static_cast<int>(plan.groups.size()) >= target) break;
            plan.groups.push_back(g);
        }
        std::sort(plan.groups.begin(), plan.groups.end());
        std::sort(plan.mandatory.begin(), plan.mandatory.end());
        plans.push_back(std::move(plan));
    }
    return plans;
}

/// Top-k selection with no mandatory set (V2); budget may be 0.
inline std::vector<AllocationPlan> allocate_no_mandatory(const DivergenceState& state,
                                                         const std::vector<DeviceProfile>& profiles,
                                                         const GroupRegistry& registry, double t_star,
                                                         double t_overhead) {
    if (static_cast<int>(state.smoothed.size()) != registry.size())
        throw ContractError("allocate: divergence state does not cover the registry");
    std::vector<AllocationPlan> plans;
    plans.reserve(profiles.size());
    for (const auto& p : profiles) {
        AllocationPlan plan;
        plan.client = p.id;
        plan.budget = budget_floor_only(t_star, t_overhead, p.tau_per_group, registry.size());
        std::vector<int> acc = accessible_groups(registry, p.mods);
        int target = std::min(plan.budget, static_cast<int>(acc.size()));
        std::vector<int> ranked = detail::rank_by_divergence(state.smoothed, acc);
        plan.groups.assign(ranked.begin(), ranked.begin() + target);
        std::sort(plan.groups.begin(), plan.groups.end());
        plans.push_back(std::move(plan));
    }
    return plans;
}

struct Waterfill {
    std::vector<double> x_star;
    double r_star = 0.0;
};

/// Closed-form water-filling: x_m* = K*sqrt(D_m)/sum(sqrt(D)), R* =
/// (sum(sqrt(D)))^2 / K, minimizing sum(D_m/x_m) under sum(x) <= K.
inline Waterfill waterfill_optimum(const std::vector<double>& deltas, double k_total) {
    if (deltas.empty()) throw ContractError("waterfill: no blocks");
    if (k_total <= 0.0) throw ContractError("waterfill: budget must be positive");
    double root_sum = 0.0;
    for (double d : deltas) {
        if (d <= 0.0) throw ContractError("waterfill: divergences must be positive");
        root_sum += std::sqrt(d);
    }
    Waterfill w;
    w.x_star.reserve(deltas.size());
    for (double d : deltas) w.x_star.push_back(k_total * std::sqrt(d) / root_sum);
    w.r_star = root_sum * root_sum / k_total;
    return w;
}

struct RegretSeries {
    std::vector<double> cumulative_discrete;    // sum over rounds of top-k true-divergence gap
    std::vector<double> cumulative_continuous;  // sum of waterfill residual gaps
};

namespace detail {

inline std::vector<int> top_k(const std::vector<double>& values, int k) {
    std::vector<int> ids(values.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
        if (values[static_cast<std::size_t>(a)] != values[static_cast<std::size_t>(b)])
            return values[static_cast<std::size_t>(a)] > values[static_cast<std::size_t>(b)];
        return a < b;
    });
    ids.resize(static_cast<std::size_t>(k));
    return ids;
}

}  // namespace detail

/// Tracks the regret of EMA-based selection against the true-divergence
/// oracle on a drift-bounded stream. Per round: the EMA absorbs the true
/// values, both sides select top-`select_k` groups (EMA vs truth), and the
/// regret is evaluated on the true divergences. The continuous series uses
/// the waterfill residual with budget `select_k` over all groups instead.
inline RegretSeries regret_track(const std::vector<std::vector<double>>& true_divs, double gamma,
                                 double drift_delta, int select_k) {
    if (true_divs.empty()) throw ContractError("regret_track: empty stream");
    const std::size_t groups = true_divs.front().size();
    if (select_k < 1 || select_k > static_cast<int>(groups))
        throw ContractError("regret_track: select_k out of range");
    for (std::size_t r = 0; r + 1 < true_divs.size(); ++r)
        for (std::size_t j = 0; j < groups; ++j)
            if (std::abs(true_divs[r + 1][j] - true_divs[r][j]) > drift_delta + 1e-12)
                throw ContractError("regret_track: drift bound violated at round " + std::to_string(r + 1));
    for (const auto& row : true_divs)
        for (double v : row)
            if (v <= 0.0) throw ContractError("regret_track: divergences must be positive");

    DivergenceState state;
    state.gamma = gamma;
    state.smoothed = true_divs.front();
    RegretSeries out;
    double cum_a = 0.0, cum_b = 0.0;
    for (std::size_t r = 0; r < true_divs.size(); ++r) {
        const std::vector<double>& d = true_divs[r];
        if (r > 0) ema_update(state, d);
        std::vector<int> picked = detail::top_k(state.smoothed, select_k);
        std::vector<int> oracle = detail::top_k(d, select_k);
        double got = 0.0, best = 0.0;
        for (int g : picked) got += d[static_cast<std::size_t>(g)];
        for (int g : oracle) best += d[static_cast<std::size_t>(g)];
        cum_a += best - got;

        Waterfill wx = waterfill_optimum(state.smoothed, static_cast<double>(select_k));
        Waterfill wo = waterfill_optimum(d, static_cast<double>(select_k));
        double res_x = 0.0, res_o = 0.0;
        for (std::size_t j = 0; j < groups; ++j) {
            res_x += d[j] / wx.x_star[j];
            res_o += d[j] / wo.x_star[j];
        }
        cum_b += res_x - res_o;
        out.cumulative_discrete.push_back(cum_a);
        out.cumulative_continuous.push_back(cum_b);
    }
    return out;
}

/// round_timing overload taking allocation plans (the sizes drive the model).
inline RoundTiming round_timing(const std::vector<AllocationPlan>& plans,
                                const std::vector<DeviceProfile>& profiles,
                                const std::vector<std::uint64_t>& payload_bytes, double t_overhead) {
    std::vector<int> sizes;
    sizes.reserve(plans.size());
    for (const auto& p : plans) sizes.push_back(static_cast<int>(p.groups.size()));
    return round_timing(sizes, profiles, payload_bytes, t_overhead);
}

}  // namespace relief
