#pragma once

#include "relief/payload.hpp"
#include "relief/rng.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace relief {

namespace detail {

inline void check_shape(const GlobalModel& model, const UpdatePayload& p) {
    for (const auto& [gid, mat] : p.deltas) {
        if (gid < 0 || gid >= model.registry.size())
            throw ProtocolError("payload group id " + std::to_string(gid) + " out of range");
        const GroupDesc& d = model.registry.at(gid);
        if (mat.rows() != d.rows || mat.cols() != d.cols)
            throw ProtocolError("payload delta shape mismatch for group " + std::to_string(gid));
    }
}

}  // namespace detail

/// Cohort-wise aggregation: each fusion block and encoder layer moves by the
/// mean delta over its active cohort (uploaders that possess the modality);
/// an empty active cohort leaves the group bit-identical. Head layers move
/// by the mean over whichever payloads carry them. The shared projection is
/// left to aggregate_b.
inline void aggregate_cohort(GlobalModel& model, const std::vector<UpdatePayload>& payloads) {
    if (payloads.empty()) throw ProtocolError("aggregate_cohort: no payloads");
    for (const auto& p : payloads) detail::check_shape(model, p);
    for (int g = 0; g < model.registry.size(); ++g) {
        const GroupDesc& d = model.registry.at(g);
        if (d.kind == GroupKind::SharedProjection) continue;
        const bool modality_scoped = d.kind == GroupKind::FusionBlock || d.kind == GroupKind::EncoderLayer;
        Mat sum = Mat::Zero(d.rows, d.cols);
        int count = 0;
        for (const auto& p : payloads) {
            if (modality_scoped && !p.mods.has(d.modality)) continue;  // never read outside the cohort
            if (!p.has(g)) continue;
            sum += p.delta(g);
            ++count;
        }
        if (count > 0) model.group(g) += sum / static_cast<double>(count);
    }
}

/// Eq.-style modality-count weighting for the shared projection: B += sum_n
/// w_n * dB_n with w_n = (|M_n|/M) / sum_k (|M_k|/M). Every payload must
/// carry the shared-projection delta.
inline void aggregate_b(GlobalModel& model, const std::vector<UpdatePayload>& payloads) {
    if (payloads.empty()) throw ProtocolError("aggregate_b: no payloads");
    const int bid = model.registry.shared_projection_id();
    const double m_total = static_cast<double>(model.registry.modalities());
    double weight_sum = 0.0;
    for (const auto& p : payloads) {
        if (!p.has(bid)) throw ProtocolError("aggregate_b: payload lacks the shared projection");
        weight_sum += static_cast<double>(p.mods.count()) / m_total;
    }
    Mat inc = Mat::Zero(model.registry.at(bid).rows, model.registry.at(bid).cols);
    for (const auto& p : payloads) {
        double w = (static_cast<double>(p.mods.count()) / m_total) / weight_sum;
        inc += w * p.delta(bid);
    }
    model.group(bid) += inc;
}

/// FedAvg baseline: every group moves by the uniform average over all N
/// payloads (absent-modality blocks contribute exact zeros).
inline void aggregate_fedavg(GlobalModel& model, const std::vector<UpdatePayload>& payloads) {
    if (payloads.empty()) throw ProtocolError("aggregate_fedavg: no payloads");
    for (const auto& p : payloads) detail::check_shape(model, p);
    for (int g = 0; g < model.registry.size(); ++g) {
        const GroupDesc& d = model.registry.at(g);
        Mat sum = Mat::Zero(d.rows, d.cols);
        for (const auto& p : payloads) {
            if (!p.has(g))
                throw ProtocolError("aggregate_fedavg: payload " + std::to_string(p.client) +
                                    " lacks group " + std::to_string(g));
            sum += p.delta(g);
        }
        model.group(g) += sum / static_cast<double>(payloads.size());
    }
}

/// Uniform average over whichever payloads contain each group (the V2
/// ablation's rule); untouched groups stay frozen.
inline void aggregate_uniform_over_uploaders(GlobalModel& model,
                                             const std::vector<UpdatePayload>& payloads) {
    if (payloads.empty()) throw ProtocolError("aggregate: no payloads");
    for (const auto& p : payloads) detail::check_shape(model, p);
    for (int g = 0; g < model.registry.size(); ++g) {
        const GroupDesc& d = model.registry.at(g);
        Mat sum = Mat::Zero(d.rows, d.cols);
        int count = 0;
        for (const auto& p : payloads) {
            if (!p.has(g)) continue;
            sum += p.delta(g);
            ++count;
        }
        if (count > 0) model.group(g) += sum / static_cast<double>(count);
    }
}

/// Raw cohort-internal divergences per group, computed from one round's
/// payloads. fresh[g] is false when fewer than two cohort members uploaded
/// the group (the previous smoothed value is then carried forward).
struct RawDivergences {
    std::vector<double> values;
    std::vector<bool> fresh;
};

inline RawDivergences raw_divergences(const GroupRegistry& registry,
                                      const std::vector<UpdatePayload>& payloads) {
    RawDivergences out;
    out.values.assign(static_cast<std::size_t>(registry.size()), 0.0);
    out.fresh.assign(static_cast<std::size_t>(registry.size()), false);
    for (int g = 0; g < registry.size(); ++g) {
        const GroupDesc& d = registry.at(g);
        const bool modality_scoped = d.kind == GroupKind::FusionBlock || d.kind == GroupKind::EncoderLayer;
        std::vector<Mat> deltas;
        for (const auto& p : payloads) {
            if (modality_scoped && !p.mods.has(d.modality)) continue;
            if (!p.has(g)) continue;
            deltas.push_back(p.delta(g));
        }
        if (deltas.size() >= 2) {
            Mat mean = Mat::Zero(d.rows, d.cols);
            for (const Mat& m : deltas) mean += m;
            mean /= static_cast<double>(deltas.size());
            double acc = 0.0;
            for (const Mat& m : deltas) acc += (m - mean).squaredNorm();
            out.values[static_cast<std::size_t>(g)] = acc / static_cast<double>(deltas.size());
            out.fresh[static_cast<std::size_t>(g)] = true;
        }
    }
    return out;
}

/// Lemma-style error split. For the measured Monte-Carlo runs, total_sq is
/// empirical and the three components are the construction's closed forms.
struct ErrorDecomposition {
    double scaling_bias_sq = 0.0;
    double interference_sq = 0.0;
    double intra_cohort_var = 0.0;
    double total_sq = 0.0;
};

struct DecomposeResult {
    ErrorDecomposition fedavg;
    ErrorDecomposition cohort;
    double fedavg_se = 0.0;  // standard error of the measured totals
    double cohort_se = 0.0;
    double zeta_sq = 0.0;       // dispersion of the supplied true gradients
    double gbar_norm_sq = 0.0;  // squared norm of their mean
};

/// Monte-Carlo oracle for the aggregation-error decomposition. Cohort
/// members upload their true gradient plus Gaussian noise with total
/// variance sigma^2/E; the other N-c devices upload zero-mean contamination
/// drawn uniformly from the eps0-ball. Both estimators are measured against
/// the true cohort mean. The FedAvg components are exact expectations of
/// this construction: scaling (1-c/N)^2 |g|^2, interference (N-c)/N^2 *
/// eps0^2 d/(d+2), noise c/N^2 * sigma^2/E; for the cohort rule the first
/// two are identically zero.
inline DecomposeResult decompose_error(const std::vector<Vec>& true_cohort_grads, double noise_sigma,
                                       int epochs, double eps0, int n_devices, int cohort_size,
                                       int trials, std::uint64_t seed = 0) {
    if (cohort_size <= 0) throw ContractError("decompose_error: cohort must be non-empty");
    if (static_cast<int>(true_cohort_grads.size()) != cohort_size)
        throw ContractError("decompose_error: gradient count != cohort size");
    if (n_devices < cohort_size) throw ContractError("decompose_error: N < cohort size");
    if (trials < 1000) throw ContractError("decompose_error: need at least 1000 trials");
    if (epochs < 1) throw ContractError("decompose_error: epochs must be >= 1");

    const Eigen::Index dim = true_cohort_grads.front().size();
    const double c = static_cast<double>(cohort_size);
    const double n = static_cast<double>(n_devices);
    Vec gbar = Vec::Zero(dim);
    for (const Vec& g : true_cohort_grads) gbar += g;
    gbar /= c;
    double zeta_sq = 0.0;
    for (const Vec& g : true_cohort_grads) zeta_sq += (g - gbar).squaredNorm();
    zeta_sq /= c;

    const double noise_var = noise_sigma * noise_sigma / static_cast<double>(epochs);
    const double coord_std = std::sqrt(noise_var / static_cast<double>(dim));

    double fed_sum = 0.0, fed_sq = 0.0, coh_sum = 0.0, coh_sq = 0.0;
    for (int t = 0; t < trials; ++t) {
        auto rng = rng_stream(seed, {streams::kMonteCarlo, static_cast<std::uint64_t>(t)});
        Vec cohort_total = Vec::Zero(dim);
        for (const Vec& g : true_cohort_grads) cohort_total += g + gaussian_vec(rng, dim, coord_std);
        Vec contaminated = cohort_total;
        for (int k = cohort_size; k < n_devices; ++k) contaminated += ball_vec(rng, dim, eps0);

        double fed_err = (contaminated / n - gbar).squaredNorm();
        double coh_err = (cohort_total / c - gbar).squaredNorm();
        fed_sum += fed_err;
        fed_sq += fed_err * fed_err;
        coh_sum += coh_err;
        coh_sq += coh_err * coh_err;
    }
    const double tr = static_cast<double>(trials);
    DecomposeResult res;
    res.zeta_sq = zeta_sq;
    res.gbar_norm_sq = gbar.squaredNorm();
    res.fedavg.total_sq = fed_sum / tr;
    res.cohort.total_sq = coh_sum / tr;
    res.fedavg_se = std::sqrt(std::max(0.0, fed_sq / tr - res.fedavg.total_sq * res.fedavg.total_sq) / tr);
    res.cohort_se = std::sqrt(std::max(0.0, coh_sq / tr - res.cohort.total_sq * res.cohort.total_sq) / tr);

    const double d = static_cast<double>(dim);
    res.fedavg.scaling_bias_sq = (1.0 - c / n) * (1.0 - c / n) * res.gbar_norm_sq;
    res.fedavg.interference_sq = ((n - c) / (n * n)) * eps0 * eps0 * d / (d + 2.0);
    res.fedavg.intra_cohort_var = (c / (n * n)) * noise_var;
    res.cohort.scaling_bias_sq = 0.0;
    res.cohort.interference_sq = 0.0;
    res.cohort.intra_cohort_var = noise_var / c;
    return res;
}

constexpr double kUndefinedCosine = std::numeric_limits<double>::quiet_NaN();

/// Pairwise cosine of block-m deltas across payloads, one matrix per block.
/// Pairs where either side is missing or has zero norm are NaN.
inline std::vector<Mat> pairwise_block_cosine(const std::vector<UpdatePayload>& payloads,
                                              const GroupRegistry& registry) {
    if (payloads.size() < 2) throw ContractError("pairwise_block_cosine: need at least two payloads");
    const int modalities = registry.modalities();
    const int p = static_cast<int>(payloads.size());
    std::vector<Mat> out;
    out.reserve(static_cast<std::size_t>(modalities));
    for (int m = 0; m < modalities; ++m) {
        const int gid = registry.fusion_block_id(m);
        Mat cos(p, p);
        cos.setConstant(kUndefinedCosine);
        for (int i = 0; i < p; ++i) {
            for (int j = 0; j < p; ++j) {
                if (!payloads[static_cast<std::size_t>(i)].has(gid) ||
                    !payloads[static_cast<std::size_t>(j)].has(gid))
                    continue;
                const Mat& a = payloads[static_cast<std::size_t>(i)].delta(gid);
                const Mat& b = payloads[static_cast<std::size_t>(j)].delta(gid);
                double na = a.norm(), nb = b.norm();
                if (na == 0.0 || nb == 0.0) continue;
                cos(i, j) = a.cwiseProduct(b).sum() / (na * nb);
            }
        }
        out.push_back(std::move(cos));
    }
    return out;
}

}  // namespace relief
