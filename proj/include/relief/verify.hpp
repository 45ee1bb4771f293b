#pragma once

#include "relief/orchestrator.hpp"

#include <chrono>
#include <sstream>

namespace relief::verify {

struct SuiteResult {
    bool pass = true;
    std::vector<std::string> lines;
    double elapsed_s = 0.0;

    void check(bool ok, const std::string& what) {
        pass = pass && ok;
        lines.push_back(std::string(ok ? "  [ok]   " : "  [FAIL] ") + what);
    }
    void note(const std::string& what) { lines.push_back("         " + what); }
};

namespace detail {

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Water-filling oracle: optimal allocation on the 0.01-step budget lattice.
// Greedy marginal allocation is exact for separable convex objectives, and is
// cross-checked against exhaustive enumeration for small M in the unit tests.
// ---------------------------------------------------------------------------

struct LatticeAllocation {
    std::vector<double> x;
    double residual = 0.0;
};

inline double residual_of(const std::vector<double>& deltas, const std::vector<double>& x) {
    double r = 0.0;
    for (std::size_t i = 0; i < deltas.size(); ++i) r += deltas[i] / x[i];
    return r;
}

inline LatticeAllocation waterfill_lattice_greedy(const std::vector<double>& deltas, double k_total,
                                                  int steps = 100) {
    const int m = static_cast<int>(deltas.size());
    if (steps < m) throw ContractError("lattice oracle: fewer grid units than blocks");
    const double unit = k_total / static_cast<double>(steps);
    std::vector<int> units(static_cast<std::size_t>(m), 1);
    for (int given = m; given < steps; ++given) {
        int best = 0;
        double best_gain = -1.0;
        for (int i = 0; i < m; ++i) {
            double cur = static_cast<double>(units[static_cast<std::size_t>(i)]) * unit;
            double gain = deltas[static_cast<std::size_t>(i)] / cur -
                          deltas[static_cast<std::size_t>(i)] / (cur + unit);
            if (gain > best_gain) {
                best_gain = gain;
                best = i;
            }
        }
        ++units[static_cast<std::size_t>(best)];
    }
    LatticeAllocation out;
    out.x.resize(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) out.x[static_cast<std::size_t>(i)] = units[static_cast<std::size_t>(i)] * unit;
    out.residual = residual_of(deltas, out.x);
    return out;
}

/// Exhaustive lattice minimum; exponential, for small M only.
inline double waterfill_lattice_exhaustive(const std::vector<double>& deltas, double k_total,
                                           int steps = 100) {
    const int m = static_cast<int>(deltas.size());
    const double unit = k_total / static_cast<double>(steps);
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> units(static_cast<std::size_t>(m), 0);
    auto rec = [&](auto&& self, int i, int left) -> void {
        if (i == m - 1) {
            if (left < 1) return;
            units[static_cast<std::size_t>(i)] = left;
            double r = 0.0;
            for (int j = 0; j < m; ++j)
                r += deltas[static_cast<std::size_t>(j)] / (units[static_cast<std::size_t>(j)] * unit);
            best = std::min(best, r);
            return;
        }
        for (int u = 1; u <= left - (m - 1 - i); ++u) {
            units[static_cast<std::size_t>(i)] = u;
            self(self, i + 1, left - u);
        }
    };
    rec(rec, 0, steps);
    return best;
}

/// Nearest feasible lattice point to a continuous allocation (largest
/// remainder rounding, every block keeps at least one unit).
inline LatticeAllocation snap_to_lattice(const std::vector<double>& deltas,
                                         const std::vector<double>& x_cont, double k_total,
                                         int steps = 100) {
    const int m = static_cast<int>(x_cont.size());
    const double unit = k_total / static_cast<double>(steps);
    std::vector<int> units(static_cast<std::size_t>(m));
    int sum = 0;
    for (int i = 0; i < m; ++i) {
        units[static_cast<std::size_t>(i)] =
            std::max(1, static_cast<int>(std::floor(x_cont[static_cast<std::size_t>(i)] / unit)));
        sum += units[static_cast<std::size_t>(i)];
    }
    auto frac = [&](int i) {
        return x_cont[static_cast<std::size_t>(i)] / unit - units[static_cast<std::size_t>(i)];
    };
    while (sum < steps) {
        int best = 0;
        for (int i = 1; i < m; ++i)
            if (frac(i) > frac(best)) best = i;
        ++units[static_cast<std::size_t>(best)];
        ++sum;
    }
    while (sum > steps) {
        int best = -1;
        for (int i = 0; i < m; ++i) {
            if (units[static_cast<std::size_t>(i)] <= 1) continue;
            if (best < 0 || frac(i) < frac(best)) best = i;
        }
        --units[static_cast<std::size_t>(best)];
        --sum;
    }
    LatticeAllocation out;
    out.x.resize(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) out.x[static_cast<std::size_t>(i)] = units[static_cast<std::size_t>(i)] * unit;
    out.residual = residual_of(deltas, out.x);
    return out;
}

// ---------------------------------------------------------------------------
// Round-target oracle: exhaustive feasibility scan over candidate targets.
// ---------------------------------------------------------------------------

inline double tstar_scan(const std::vector<DeviceProfile>& profiles, const GroupRegistry& registry,
                         double t_overhead, bool mandatory = true) {
    const std::vector<int> caps = relief::detail::accessible_counts(profiles, registry);
    std::vector<double> candidates;
    double min_full = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        int lo = mandatory ? profiles[i].mods.count() : 0;
        for (int k = lo; k <= caps[i]; ++k)
            candidates.push_back(t_overhead + k * profiles[i].tau_per_group);
        min_full = std::min(min_full, caps[i] * profiles[i].tau_per_group);
    }
    candidates.push_back(t_overhead + min_full);
    std::sort(candidates.begin(), candidates.end());
    for (double t : candidates)
        if (relief::detail::t_star_feasible(t, profiles, caps, t_overhead, mandatory)) return t;
    return candidates.back();
}

// ---------------------------------------------------------------------------
// Suite 1: Lemma 1 / Theorem 1 Monte-Carlo decomposition.
// ---------------------------------------------------------------------------

struct Lemma1Setting {
    double sigma;
    int epochs;
    double eps0;
    double zeta;
    double gbar_norm;
    int cohort;
    int devices;
};

inline std::vector<Lemma1Setting> lemma1_settings() {
    std::vector<Lemma1Setting> rows;
    rows.push_back({0.0, 1, 0.0, 0.0, 1.0, 3, 8});   // deterministic scaling bias only
    rows.push_back({0.5, 5, 0.0, 0.5, 0.0, 3, 8});   // pure noise, cohort-vs-fedavg ratio
    rows.push_back({0.0, 1, 0.5, 0.0, 0.0, 3, 8});   // pure interference
    rows.push_back({1.0, 1, 0.2, 0.3, 1.0, 2, 5});
    rows.push_back({0.7, 5, 0.1, 0.4, 0.5, 8, 8});   // full cohort, no contamination
    for (double sigma : {0.3, 1.0})
        for (double eps0 : {0.0, 0.3})
            for (double zeta : {0.0, 0.7})
                for (auto [c, n] : {std::pair{3, 8}, std::pair{6, 10}})
                    rows.push_back({sigma, 5, eps0, zeta, 1.0, c, n});
    return rows;  // 5 + 16 = 21 settings
}

inline std::vector<Vec> make_cohort_gradients(double gbar_norm, double zeta, int cohort, int dim,
                                              std::uint64_t seed) {
    auto rng = rng_stream(seed, {streams::kMonteCarlo, 0xabcd});
    Vec gbar = gbar_norm == 0.0 ? Vec(Vec::Zero(dim)) : Vec(gbar_norm * unit_vec(rng, dim));
    std::vector<Vec> grads(static_cast<std::size_t>(cohort), gbar);
    if (zeta > 0.0 && cohort > 1) {
        std::vector<Vec> rho;
        Vec mean = Vec::Zero(dim);
        for (int i = 0; i < cohort; ++i) {
            rho.push_back(gaussian_vec(rng, dim, 1.0));
            mean += rho.back();
        }
        mean /= static_cast<double>(cohort);
        double ms = 0.0;
        for (auto& r : rho) {
            r -= mean;
            ms += r.squaredNorm();
        }
        double scale = zeta / std::sqrt(ms / static_cast<double>(cohort));
        for (int i = 0; i < cohort; ++i) grads[static_cast<std::size_t>(i)] += scale * rho[static_cast<std::size_t>(i)];
    }
    return grads;
}

inline SuiteResult run_lemma1_suite(int trials = 10000, std::uint64_t seed = 20240501) {
    detail::Stopwatch clock;
    SuiteResult res;
    const int dim = 16;
    int row_id = 0;
    for (const auto& s : lemma1_settings()) {
        auto grads = make_cohort_gradients(s.gbar_norm, s.zeta, s.cohort, dim,
                                           seed + static_cast<std::uint64_t>(row_id));
        auto d = decompose_error(grads, s.sigma, s.epochs, s.eps0, s.devices, s.cohort, trials,
                                 seed + 1000 + static_cast<std::uint64_t>(row_id));
        const double c = s.cohort, n = s.devices;
        const double expected = d.fedavg.scaling_bias_sq + d.fedavg.interference_sq + d.fedavg.intra_cohort_var;
        const double tol_fed = std::max(3.0 * d.fedavg_se, 1e-12);
        std::ostringstream tag;
        tag << "s=" << s.sigma << " E=" << s.epochs << " e0=" << s.eps0 << " z=" << detail::fmt(d.zeta_sq)
            << " |g|=" << s.gbar_norm << " c=" << s.cohort << "/" << s.devices;

        res.check(std::abs(d.fedavg.total_sq - expected) <= tol_fed,
                  "lemma1 identity " + tag.str() + ": measured " + detail::fmt(d.fedavg.total_sq) +
                      " vs I+II+III " + detail::fmt(expected) + " (3SE " + detail::fmt(tol_fed) + ")");

        const double noise_var = s.sigma * s.sigma / s.epochs;
        const double cohort_bound = (noise_var + d.zeta_sq) / c + 3.0 * d.cohort_se + 1e-12;
        res.check(d.cohort.total_sq <= cohort_bound,
                  "theorem1 cohort bound " + tag.str() + ": measured " + detail::fmt(d.cohort.total_sq) +
                      " <= " + detail::fmt(cohort_bound));
        res.check(d.cohort.scaling_bias_sq == 0.0 && d.cohort.interference_sq == 0.0,
                  "theorem1 terms I/II vanish " + tag.str());

        const double paper_bound = d.fedavg.scaling_bias_sq + ((n - c) / n) * ((n - c) / n) * s.eps0 * s.eps0 +
                                   (c / (n * n)) * (noise_var + d.zeta_sq) + 3.0 * d.fedavg_se + 1e-12;
        res.check(d.fedavg.total_sq <= paper_bound,
                  "lemma1 relaxed bound " + tag.str() + ": measured " + detail::fmt(d.fedavg.total_sq) +
                      " <= " + detail::fmt(paper_bound));
        ++row_id;
    }
    res.elapsed_s = clock.seconds();
    return res;
}

// ---------------------------------------------------------------------------
// Suite 2: Proposition 1 water-filling closed form vs the lattice oracle.
// ---------------------------------------------------------------------------

inline SuiteResult run_prop1_suite(int instances = 1000, std::uint64_t seed = 77) {
    detail::Stopwatch clock;
    SuiteResult res;
    auto rng = rng_stream(seed, {streams::kMonteCarlo, 0x9e1});
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    double worst_form = 0.0, worst_gap = 0.0;
    bool beats = true, formula = true, within = true;
    for (int i = 0; i < instances; ++i) {
        int m = 1 + static_cast<int>(rng() % 6);
        std::vector<double> deltas(static_cast<std::size_t>(m));
        for (auto& d : deltas) d = 10.0 * (1.0 - u01(rng));  // (0, 10]
        double k_total = m + (100.0 - m) * u01(rng);

        Waterfill w = waterfill_optimum(deltas, k_total);
        double direct = residual_of(deltas, w.x_star);
        worst_form = std::max(worst_form, std::abs(direct - w.r_star));
        formula = formula && std::abs(direct - w.r_star) <= 1e-10;

        LatticeAllocation grid = waterfill_lattice_greedy(deltas, k_total, 100);
        beats = beats && (w.r_star <= grid.residual + 1e-9);
        LatticeAllocation snap = snap_to_lattice(deltas, w.x_star, k_total, 100);
        within = within && (grid.residual <= snap.residual + 1e-12);
        worst_gap = std::max(worst_gap, (grid.residual - w.r_star) / w.r_star);
    }
    res.check(formula, "R* matches sum(D/x*) to 1e-10 (worst |diff| " + detail::fmt(worst_form) + ")");
    res.check(beats, "closed form beats the 0.01-step lattice optimum on every instance");
    res.check(within, "lattice optimum is within grid resolution of the rounded closed form");
    res.note("worst relative lattice gap: " + detail::fmt(worst_gap));
    res.elapsed_s = clock.seconds();
    return res;
}

// ---------------------------------------------------------------------------
// Suite 3: Proposition 2 regret of EMA tracking on drift-bounded streams.
// ---------------------------------------------------------------------------

/// Bounded-step random-walk divergence streams (|step| <= delta, reflected
/// away from zero). All walks start at a common level, so rank crossings are
/// dense early and thin out diffusively; that recrossing decay is what makes
/// the cumulative regret sublinear.
inline std::vector<std::vector<double>> drift_streams(int rounds, int groups, double delta,
                                                      std::uint64_t seed) {
    auto rng = rng_stream(seed, {streams::kMonteCarlo, 0xd21f});
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> cur(static_cast<std::size_t>(groups), 5.0);
    std::vector<std::vector<double>> stream;
    stream.reserve(static_cast<std::size_t>(rounds));
    stream.push_back(cur);
    for (int r = 1; r < rounds; ++r) {
        for (int g = 0; g < groups; ++g) {
            double& v = cur[static_cast<std::size_t>(g)];
            v += delta * u(rng);
            if (v < 0.5) v = 1.0 - v;  // reflect, stays positive
        }
        stream.push_back(cur);
    }
    return stream;
}

inline double loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (ys[i] <= 0.0) continue;
        double lx = std::log(xs[i]), ly = std::log(ys[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++n;
    }
    if (n < 2) return 0.0;
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline SuiteResult run_prop2_suite(std::uint64_t seed = 31) {
    detail::Stopwatch clock;
    SuiteResult res;
    const int rounds = 3200;
    const int groups = 6;
    const int select_k = 3;
    const std::vector<double> checkpoints{100, 200, 400, 800, 1600, 3200};

    {  // static stream: zero regret after (trivial) burn-in
        auto stream = drift_streams(rounds, groups, 0.0, seed);
        auto reg = regret_track(stream, 0.9, 0.0, select_k);
        res.check(reg.cumulative_discrete.back() == 0.0, "static stream (delta=0): cumulative regret is 0");
    }
    {  // gamma -> 1: EMA equals the raw signal
        auto stream = drift_streams(rounds, groups, 0.02, seed + 1);
        auto reg = regret_track(stream, 1.0 - 1e-12, 0.02, select_k);
        res.check(reg.cumulative_discrete.back() == 0.0, "gamma->1: regret 0 on a drifting stream");
    }
    int delta_idx = 0;
    for (double delta : {0.005, 0.02, 0.05}) {
        // mean cumulative regret over independent streams; a single walk's
        // regret arrives in a handful of bursts and fits a noisy slope
        const int repeats = 16;
        std::vector<double> cums(checkpoints.size(), 0.0);
        double cont_last = 0.0;
        for (int rep = 0; rep < repeats; ++rep) {
            auto stream = drift_streams(rounds, groups, delta,
                                        seed + 100 * static_cast<std::uint64_t>(delta_idx + 1) +
                                            static_cast<std::uint64_t>(rep));
            auto reg = regret_track(stream, 0.9, delta, select_k);
            for (std::size_t i = 0; i < checkpoints.size(); ++i)
                cums[i] += reg.cumulative_discrete[static_cast<std::size_t>(checkpoints[i]) - 1] / repeats;
            cont_last += reg.cumulative_continuous.back() / repeats;
        }
        double slope = loglog_slope(checkpoints, cums);
        res.check(cums.back() > 0.0, "delta=" + detail::fmt(delta) + ": regret is measurably positive (" +
                                         detail::fmt(cums.back()) + ")");
        res.check(slope < 1.0, "delta=" + detail::fmt(delta) + ": log-log slope " + detail::fmt(slope) +
                                   " < 1 (sublinear)");
        res.check(cont_last >= -1e-9,
                  "delta=" + detail::fmt(delta) + ": continuous residual regret is nonnegative");
        ++delta_idx;
    }
    res.elapsed_s = clock.seconds();
    return res;
}

// ---------------------------------------------------------------------------
// Suite 4: gradient correctness against central finite differences.
// ---------------------------------------------------------------------------

inline SuiteResult run_gradcheck_suite(std::uint64_t seed = 99) {
    detail::Stopwatch clock;
    SuiteResult res;

    TaskSpec spec;
    spec.modalities = 2;
    spec.dims = {2, 3};
    spec.classes = 2;
    spec.clients = 2;
    spec.samples_per_client = 6;
    spec.noise_sigma = 0.3;
    spec.hetero_zeta = 0.2;
    spec.rare_signal_weight = {0.6, 0.4};
    spec.seed = seed;
    auto data = generate(spec, {ModalitySet({0, 1}, 2), ModalitySet({0}, 2)});

    LocalModel model;
    model.params = build_registry(2, {2, 3}, {1, 1}, 1, 2, 3, 2);
    FrozenBase base = build_frozen_base(model.params.registry, seed);
    model.base = &base;
    // start from a non-trivial point so no gradient sits at a symmetry zero
    auto rng = rng_stream(seed, {streams::kMonteCarlo, 5});
    for (int g = 0; g < model.params.registry.size(); ++g)
        model.params.group(g) =
            gaussian_mat(rng, model.params.registry.at(g).rows, model.params.registry.at(g).cols, 0.3);

    Eigen::Index param_count = model.params.registry.total_elems();
    res.note("trainable parameters: " + std::to_string(param_count));
    res.check(param_count <= 100, "instance has at most 100 parameters");

    std::vector<int> idx(static_cast<std::size_t>(data[0].size()));
    std::iota(idx.begin(), idx.end(), 0);
    auto acc = accessible_groups(model.params.registry, data[0].mods);
    auto grads = masked_grad(model, data[0], idx, acc);

    double worst = 0.0;
    const double h = 1e-5;
    for (int g = 0; g < model.params.registry.size(); ++g) {
        Mat& theta = model.params.group(g);
        for (Eigen::Index r = 0; r < theta.rows(); ++r) {
            for (Eigen::Index c = 0; c < theta.cols(); ++c) {
                double keep = theta(r, c);
                theta(r, c) = keep + h;
                double lp = forward_loss(model, data[0], idx).loss;
                theta(r, c) = keep - h;
                double lm = forward_loss(model, data[0], idx).loss;
                theta(r, c) = keep;
                double fd = (lp - lm) / (2.0 * h);
                double got = grads[static_cast<std::size_t>(g)](r, c);
                double rel = std::abs(got - fd) / std::max({std::abs(got), std::abs(fd), 1e-3});
                worst = std::max(worst, rel);
            }
        }
    }
    res.check(worst <= 1e-6, "central differences (h=1e-5): worst relative error " + detail::fmt(worst));

    // absent modality: exactly zero gradients even when nominally allowed
    std::vector<int> idx1(static_cast<std::size_t>(data[1].size()));
    std::iota(idx1.begin(), idx1.end(), 0);
    ClientDataset as_full = data[1];
    as_full.mods = ModalitySet({0, 1}, 2);
    auto g_full = masked_grad(model, as_full, idx1, accessible_groups(model.params.registry, as_full.mods));
    double absent = g_full[1].norm();
    for (int g = 0; g < model.params.registry.size(); ++g) {
        const auto& d = model.params.registry.at(g);
        if ((d.kind == GroupKind::FusionBlock || d.kind == GroupKind::EncoderLayer) && d.modality == 1)
            absent += g_full[static_cast<std::size_t>(g)].norm();
    }
    res.check(absent == 0.0, "absent-modality fusion-block and encoder gradients are exactly zero");
    res.elapsed_s = clock.seconds();
    return res;
}

// ---------------------------------------------------------------------------
// Suite 5: round-target and budget exactness.
// ---------------------------------------------------------------------------

inline SuiteResult run_tstar_suite(std::uint64_t seed = 1234) {
    detail::Stopwatch clock;
    SuiteResult res;

    auto model = build_registry(4, {8, 8, 8, 8}, {2, 2, 2, 2}, 1, 4, 16, 4);
    const GroupRegistry& reg = model.registry;

    // worked budget arithmetic
    res.check(budget(10.0, 2.0, 1.5, ModalitySet({0}, 4), reg.size()) == 5,
              "budget(T*=10, T_o=2, tau=1.5, |M|=1) = 5");
    res.check(budget(3.0, 3.0, 1.5, ModalitySet({0, 2}, 4), reg.size()) == 2,
              "budget(T*=T_o) = |M_n|");
    res.check(budget(10.0, 2.0, 1e-9, ModalitySet({0}, 4), reg.size()) == reg.size(),
              "budget caps at G when tau -> 0");

    auto mk = [&](int id, std::vector<int> mods, double tau) {
        DeviceProfile p;
        p.id = id;
        p.mods = ModalitySet(mods, 4);
        p.tau_per_group = tau;
        return p;
    };

    {  // homogeneous fleet: everyone trains everything
        std::vector<DeviceProfile> fleet{mk(0, {0, 1, 2, 3}, 0.25), mk(1, {0, 1, 2, 3}, 0.25),
                                         mk(2, {0, 1, 2, 3}, 0.25)};
        double t = solve_t_star(fleet, reg, 0.2);
        res.check(std::abs(t - (0.2 + 14 * 0.25)) <= 2e-3,
                  "homogeneous fleet: T* = T_o + G*tau (got " + detail::fmt(t) + ")");
    }
    {  // slow straggler's single mandatory group dominates
        std::vector<DeviceProfile> fleet{mk(0, {0, 1, 2, 3}, 1.0), mk(1, {0}, 55.0)};
        double t = solve_t_star(fleet, reg, 0.0);
        res.check(std::abs(t - 55.0) <= 2e-3, "two-device fleet: T* = 55 (got " + detail::fmt(t) + ")");
        double scan = tstar_scan(fleet, reg, 0.0);
        res.check(std::abs(t - scan) <= 2e-3, "binary search matches the feasibility scan");
        int k_fast = budget(t, 0.0, 1.0, fleet[0].mods, reg.size());
        res.check(std::min(k_fast, 14) == 14, "fast device fills to all 14 groups");
    }
    {  // single device trains its whole accessible set
        std::vector<DeviceProfile> fleet{mk(0, {0, 1}, 0.5)};
        double t = solve_t_star(fleet, reg, 0.3);
        res.check(std::abs(t - (0.3 + 8 * 0.5)) <= 2e-3,
                  "single device: T* = T_o + |accessible|*tau (got " + detail::fmt(t) + ")");
    }

    // random fleets against the exhaustive scan
    auto rng = rng_stream(seed, {streams::kMonteCarlo, 0x7e57});
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    bool all_match = true, all_tight = true;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        int modalities = 1 + static_cast<int>(rng() % 4);
        std::vector<int> dims(static_cast<std::size_t>(modalities), 3);
        std::vector<int> layers(static_cast<std::size_t>(modalities));
        for (auto& l : layers) l = static_cast<int>(rng() % 3);
        int head = static_cast<int>(rng() % 3);
        int out_dim = 4;
        auto rm = build_registry(modalities, dims, layers, head == 0 ? 0 : head, 2, out_dim,
                                 head == 0 ? out_dim : 3);
        int devices = 1 + static_cast<int>(rng() % 5);
        std::vector<DeviceProfile> fleet;
        for (int i = 0; i < devices; ++i) {
            std::vector<int> mods;
            for (int m = 0; m < modalities; ++m)
                if (u01(rng) < 0.5) mods.push_back(m);
            if (mods.empty()) mods.push_back(static_cast<int>(rng() % modalities));
            fleet.push_back(mk(i, mods, 0.05 + 1.95 * u01(rng)));
            fleet.back().mods = ModalitySet(mods, modalities);
        }
        double t_o = 0.5 * u01(rng);
        for (bool mandatory : {true, false}) {
            double bs = solve_t_star(fleet, rm.registry, t_o, mandatory);
            double scan = tstar_scan(fleet, rm.registry, t_o, mandatory);
            worst = std::max(worst, std::abs(bs - scan));
            all_match = all_match && std::abs(bs - scan) <= 2e-3;
            auto caps = relief::detail::accessible_counts(fleet, rm.registry);
            all_tight = all_tight && relief::detail::t_star_feasible(bs, fleet, caps, t_o, mandatory) &&
                        !relief::detail::t_star_feasible(scan - 1e-6, fleet, caps, t_o, mandatory);
        }
    }
    res.check(all_match, "100 random fleets: binary search matches the scan (worst gap " +
                             detail::fmt(worst) + ")");
    res.check(all_tight, "100 random fleets: T* is feasible and T*-tolerance is not");

    {  // homogeneous full-modality fleet: speedup exactly 1
        std::vector<DeviceProfile> fleet;
        for (int i = 0; i < 4; ++i) {
            auto p = mk(i, {0, 1, 2, 3}, 0.125);
            p.uplink_bps = 1e9;
            fleet.push_back(p);
        }
        std::vector<int> full_sizes(4, reg.size());
        std::vector<std::uint64_t> bytes(4, 5000);
        RoundTiming fa = round_timing(full_sizes, fleet, bytes, 0.1);
        RoundTiming relief_t = round_timing(full_sizes, fleet, bytes, 0.1);
        res.check(fa.round_wall_s / relief_t.round_wall_s == 1.0,
                  "homogeneous full-modality fleet: speedup is exactly 1.0");
    }
    res.elapsed_s = clock.seconds();
    return res;
}

}  // namespace relief::verify
