#pragma once

#include "relief/param_space.hpp"
#include "relief/payload.hpp"
#include "relief/rng.hpp"
#include "relief/scheduler.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <span>
#include <vector>

namespace relief {

/// Knobs of the synthetic multimodal classification task. noise_sigma is the
/// per-coordinate feature noise std; hetero_zeta the norm of each client's
/// distribution shift; rare_signal_weight[m] the fraction of class-
/// discriminative signal power carried by modality m (sums to 1).
struct TaskSpec {
    int modalities = 0;
    std::vector<int> dims;
    int classes = 2;
    int clients = 0;
    int samples_per_client = 0;
    double noise_sigma = 0.0;
    double hetero_zeta = 0.0;
    std::vector<double> rare_signal_weight;
    std::uint64_t seed = 0;

    void validate() const {
        if (modalities < 1) throw ConfigError("task.modalities", "must be >= 1");
        if (static_cast<int>(dims.size()) != modalities)
            throw ConfigError("task.dims", "need one entry per modality");
        if (classes < 2) throw ConfigError("task.classes", "must be >= 2");
        if (clients < 1) throw ConfigError("task.clients", "must be >= 1");
        if (samples_per_client < 1) throw ConfigError("task.samples_per_client", "must be >= 1");
        if (noise_sigma < 0.0) throw ConfigError("task.noise_sigma", "must be >= 0");
        if (hetero_zeta < 0.0) throw ConfigError("task.hetero_zeta", "must be >= 0");
        if (static_cast<int>(rare_signal_weight.size()) != modalities)
            throw ConfigError("task.rare_signal_weight", "need one entry per modality");
        double sum = 0.0;
        for (double w : rare_signal_weight) {
            if (w < 0.0) throw ConfigError("task.rare_signal_weight", "weights must be >= 0");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("task.rare_signal_weight", "weights must sum to 1");
    }
};

/// One client's local data. Absent-modality feature vectors are exactly zero.
struct ClientDataset {
    std::vector<std::vector<Vec>> features;  // [sample][modality]
    std::vector<int> labels;
    ModalitySet mods;

    int size() const { return static_cast<int>(labels.size()); }
};

// Class separation scale; noise_sigma is specified relative to this.
constexpr double kSignalScale = 2.0;

/// Class-conditional per-modality mean directions, shared by train and test
/// generation. Scaled so squared signal power per modality is proportional
/// to rare_signal_weight[m].
inline std::vector<std::vector<Vec>> class_means(const TaskSpec& spec) {
    auto rng = rng_stream(spec.seed, {streams::kTask});
    std::vector<std::vector<Vec>> mu(static_cast<std::size_t>(spec.classes));
    for (int c = 0; c < spec.classes; ++c) {
        mu[static_cast<std::size_t>(c)].resize(static_cast<std::size_t>(spec.modalities));
        for (int m = 0; m < spec.modalities; ++m) {
            Vec dir = unit_vec(rng, spec.dims[static_cast<std::size_t>(m)]);
            double scale = kSignalScale * std::sqrt(spec.rare_signal_weight[static_cast<std::size_t>(m)]);
            mu[static_cast<std::size_t>(c)][static_cast<std::size_t>(m)] = scale * dir;
        }
    }
    return mu;
}

namespace detail {

inline ClientDataset sample_dataset(const TaskSpec& spec, const std::vector<std::vector<Vec>>& mu,
                                    const ModalitySet& mods, int count, double offset_norm,
                                    std::mt19937_64& rng) {
    ClientDataset ds;
    ds.mods = mods;
    std::vector<Vec> offset(static_cast<std::size_t>(spec.modalities));
    for (int m = 0; m < spec.modalities; ++m)
        offset[static_cast<std::size_t>(m)] =
            offset_norm * unit_vec(rng, spec.dims[static_cast<std::size_t>(m)]);
    ds.features.resize(static_cast<std::size_t>(count));
    ds.labels.resize(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        int y = i % spec.classes;  // balanced by construction
        ds.labels[static_cast<std::size_t>(i)] = y;
        auto& row = ds.features[static_cast<std::size_t>(i)];
        row.resize(static_cast<std::size_t>(spec.modalities));
        for (int m = 0; m < spec.modalities; ++m) {
            Eigen::Index dim = spec.dims[static_cast<std::size_t>(m)];
            if (!mods.has(m)) {
                row[static_cast<std::size_t>(m)] = Vec::Zero(dim);
                continue;
            }
            Vec noise = gaussian_vec(rng, dim, spec.noise_sigma);
            row[static_cast<std::size_t>(m)] = mu[static_cast<std::size_t>(y)][static_cast<std::size_t>(m)] +
                                               offset[static_cast<std::size_t>(m)] + noise;
        }
    }
    return ds;
}

}  // namespace detail

/// Generates every client's dataset. Deterministic per (spec, seed); each
/// client draws from its own stream, so fleet composition never perturbs
/// another client's data.
inline std::vector<ClientDataset> generate(const TaskSpec& spec,
                                           const std::vector<ModalitySet>& assignment) {
    spec.validate();
    if (static_cast<int>(assignment.size()) != spec.clients)
        throw ConfigError("task.clients", "assignment size does not match client count");
    const auto mu = class_means(spec);
    std::vector<ClientDataset> out;
    out.reserve(assignment.size());
    for (int n = 0; n < spec.clients; ++n) {
        auto rng = rng_stream(spec.seed, {streams::kClientData, static_cast<std::uint64_t>(n)});
        out.push_back(detail::sample_dataset(spec, mu, assignment[static_cast<std::size_t>(n)],
                                             spec.samples_per_client, spec.hetero_zeta, rng));
    }
    return out;
}

/// Global (shift-free) holdout with all modalities present.
inline ClientDataset generate_testset(const TaskSpec& spec, int count) {
    const auto mu = class_means(spec);
    std::vector<int> all(static_cast<std::size_t>(spec.modalities));
    for (int m = 0; m < spec.modalities; ++m) all[static_cast<std::size_t>(m)] = m;
    auto rng = rng_stream(spec.seed, {streams::kTestData});
    return detail::sample_dataset(spec, mu, ModalitySet(all, spec.modalities), count, 0.0, rng);
}

/// Frozen base weights, drawn once per run seed and shared by all clients.
struct FrozenBase {
    Mat fusion_w0;                           // d_o x D
    std::vector<std::vector<Mat>> enc_w0;    // [modality][layer]
    std::vector<Mat> head_w0;                // [layer]
};

inline FrozenBase build_frozen_base(const GroupRegistry& registry, std::uint64_t seed) {
    auto rng = rng_stream(seed, {streams::kFrozenBase});
    FrozenBase base;
    int modalities = registry.modalities();
    base.enc_w0.resize(static_cast<std::size_t>(modalities));
    Eigen::Index fused_in = 0;
    for (int m = 0; m < modalities; ++m) fused_in += registry.at(registry.fusion_block_id(m)).cols;
    const GroupDesc& bdesc = registry.at(registry.shared_projection_id());
    base.fusion_w0 = gaussian_mat(rng, bdesc.rows, fused_in, 1.0 / std::sqrt(static_cast<double>(fused_in)));
    for (const GroupDesc& d : registry.entries()) {
        if (d.kind == GroupKind::EncoderLayer)
            base.enc_w0[static_cast<std::size_t>(d.modality)].push_back(
                gaussian_mat(rng, d.rows, d.cols, 1.0 / std::sqrt(static_cast<double>(d.cols))));
        else if (d.kind == GroupKind::HeadLayer)
            base.head_w0.push_back(gaussian_mat(rng, d.rows, d.cols, 1.0 / std::sqrt(static_cast<double>(d.cols))));
    }
    return base;
}

/// Low-rank init: A blocks Gaussian, B zero. The adapter contribution B*A
/// starts at exactly zero, but gradients flow into B through the nonzero A
/// factor; with both factors zero the product sits at a saddle and the whole
/// fusion adapter would stay frozen.
inline void init_adapter(GlobalModel& model, std::uint64_t seed) {
    auto rng = rng_stream(seed, {streams::kAdapterInit});
    for (int m = 0; m < model.registry.modalities(); ++m) {
        Mat& a = model.fusion.a_blocks[static_cast<std::size_t>(m)];
        a = gaussian_mat(rng, a.rows(), a.cols(), 1.0 / std::sqrt(static_cast<double>(a.cols())));
    }
}

/// A client's working model: trainable deltas plus the shared frozen base.
/// Effective fusion weight is W0 + B*[A_1|...|A_M]; encoder and head layers
/// are W0 + delta. No layer has a bias, so zero inputs propagate to exactly
/// zero activations and gradients.
struct LocalModel {
    GlobalModel params;
    const FrozenBase* base = nullptr;

    int groups() const { return params.registry.size(); }
};

namespace detail {

struct ForwardCache {
    std::vector<std::vector<Vec>> enc_acts;  // [modality][0..L_m], [0] is the input
    Vec fused_in;                            // concatenated encoder outputs
    Vec a_h;                                 // A * fused_in
    std::vector<Vec> head_acts;              // [0..L_H], [0] is the fusion output
    Vec logits;
};

inline ForwardCache forward_sample(const LocalModel& model, const std::vector<Vec>& x) {
    const GroupRegistry& reg = model.params.registry;
    const int modalities = reg.modalities();
    ForwardCache cache;
    cache.enc_acts.resize(static_cast<std::size_t>(modalities));
    Eigen::Index fused_dim = 0;
    for (int m = 0; m < modalities; ++m) {
        auto& acts = cache.enc_acts[static_cast<std::size_t>(m)];
        acts.push_back(x[static_cast<std::size_t>(m)]);
        const auto& layers = model.params.encoders[static_cast<std::size_t>(m)];
        for (std::size_t l = 0; l < layers.size(); ++l) {
            Vec pre = (model.base->enc_w0[static_cast<std::size_t>(m)][l] + layers[l]) * acts.back();
            acts.push_back(pre.array().tanh().matrix());
        }
        fused_dim += acts.back().size();
    }
    cache.fused_in.resize(fused_dim);
    Eigen::Index off = 0;
    for (int m = 0; m < modalities; ++m) {
        const Vec& h = cache.enc_acts[static_cast<std::size_t>(m)].back();
        cache.fused_in.segment(off, h.size()) = h;
        off += h.size();
    }
    cache.a_h = model.params.fusion.concat_a() * cache.fused_in;
    Vec fused = model.base->fusion_w0 * cache.fused_in + model.params.fusion.b_proj * cache.a_h;
    cache.head_acts.push_back(fused);
    const std::size_t head_layers = model.params.head.size();
    for (std::size_t l = 0; l < head_layers; ++l) {
        Vec pre = (model.base->head_w0[l] + model.params.head[l]) * cache.head_acts.back();
        if (l + 1 < head_layers)
            cache.head_acts.push_back(pre.array().tanh().matrix());
        else
            cache.head_acts.push_back(pre);
    }
    cache.logits = cache.head_acts.back();
    return cache;
}

// Stable mean cross-entropy and argmax correctness for one logits vector.
inline double cross_entropy(const Vec& logits, int label, bool& correct) {
    double mx = logits.maxCoeff();
    double lse = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) lse += std::exp(logits[i] - mx);
    lse = mx + std::log(lse);
    Eigen::Index arg = 0;
    logits.maxCoeff(&arg);
    correct = (static_cast<int>(arg) == label);
    return lse - logits[label];
}

}  // namespace detail

struct LossResult {
    double loss = 0.0;
    int correct = 0;
};

/// Mean cross-entropy and correct-prediction count over the batch.
inline LossResult forward_loss(const LocalModel& model, const ClientDataset& data,
                               std::span<const int> batch) {
    if (batch.empty()) throw ContractError("forward_loss: empty batch");
    LossResult res;
    for (int i : batch) {
        auto cache = detail::forward_sample(model, data.features[static_cast<std::size_t>(i)]);
        bool ok = false;
        res.loss += detail::cross_entropy(cache.logits, data.labels[static_cast<std::size_t>(i)], ok);
        res.correct += ok ? 1 : 0;
    }
    res.loss /= static_cast<double>(batch.size());
    if (!std::isfinite(res.loss)) throw NumericError("forward_loss: non-finite loss");
    return res;
}

/// Per-group mean gradients over the batch, with groups outside `allowed`
/// exactly zero. Throws ContractError when `allowed` is not a subset of the
/// device's accessible groups.
inline std::vector<Mat> masked_grad(const LocalModel& model, const ClientDataset& data,
                                    std::span<const int> batch, const std::vector<int>& allowed) {
    const GroupRegistry& reg = model.params.registry;
    {
        std::vector<int> acc = accessible_groups(reg, data.mods);
        for (int g : allowed)
            if (std::find(acc.begin(), acc.end(), g) == acc.end())
                throw ContractError("masked_grad: group " + std::to_string(g) +
                                    " is not accessible to this device");
    }
    if (batch.empty()) throw ContractError("masked_grad: empty batch");

    const int modalities = reg.modalities();
    std::vector<Mat> grads(static_cast<std::size_t>(reg.size()));
    for (int g = 0; g < reg.size(); ++g)
        grads[static_cast<std::size_t>(g)] = Mat::Zero(reg.at(g).rows, reg.at(g).cols);

    const Mat a_full = model.params.fusion.concat_a();
    const double inv_batch = 1.0 / static_cast<double>(batch.size());

    for (int i : batch) {
        auto cache = detail::forward_sample(model, data.features[static_cast<std::size_t>(i)]);
        int y = data.labels[static_cast<std::size_t>(i)];

        // d(mean CE)/d(logits) = (softmax - onehot)/batch
        Vec p = cache.logits;
        double mx = p.maxCoeff();
        p = (p.array() - mx).exp().matrix();
        p /= p.sum();
        p[y] -= 1.0;
        Vec delta = p * inv_batch;

        // head layers, last to first; tanh applies to all but the last
        const std::size_t head_layers = model.params.head.size();
        for (std::size_t l = head_layers; l-- > 0;) {
            Vec dpre = delta;
            if (l + 1 < head_layers) {
                const Vec& act = cache.head_acts[l + 1];
                dpre = delta.cwiseProduct((1.0 - act.array().square()).matrix());
            }
            int gid = reg.size() - static_cast<int>(head_layers - l);
            grads[static_cast<std::size_t>(gid)] += dpre * cache.head_acts[l].transpose();
            delta = (model.base->head_w0[l] + model.params.head[l]).transpose() * dpre;
        }

        // fusion: z = W0*h + B*(A*h)
        const Vec& dz = delta;
        grads[static_cast<std::size_t>(reg.shared_projection_id())] += dz * cache.a_h.transpose();
        Vec d_ah = model.params.fusion.b_proj.transpose() * dz;
        Vec dh = model.base->fusion_w0.transpose() * dz + a_full.transpose() * d_ah;

        Eigen::Index off = 0;
        for (int m = 0; m < modalities; ++m) {
            const Vec& h_m = cache.enc_acts[static_cast<std::size_t>(m)].back();
            grads[static_cast<std::size_t>(reg.fusion_block_id(m))] += d_ah * h_m.transpose();

            // encoder stack of modality m
            Vec d_enc = dh.segment(off, h_m.size());
            const auto& layers = model.params.encoders[static_cast<std::size_t>(m)];
            for (std::size_t l = layers.size(); l-- > 0;) {
                const Vec& act = cache.enc_acts[static_cast<std::size_t>(m)][l + 1];
                Vec dpre = d_enc.cwiseProduct((1.0 - act.array().square()).matrix());
                int gid = 0;
                {
                    // encoder group ids follow the fusion blocks and B
                    int idx = modalities + 1;
                    for (int mm = 0; mm < m; ++mm)
                        idx += static_cast<int>(model.params.encoders[static_cast<std::size_t>(mm)].size());
                    gid = idx + static_cast<int>(l);
                }
                grads[static_cast<std::size_t>(gid)] +=
                    dpre * cache.enc_acts[static_cast<std::size_t>(m)][l].transpose();
                d_enc = (model.base->enc_w0[static_cast<std::size_t>(m)][l] + layers[l]).transpose() * dpre;
            }
            off += h_m.size();
        }
    }

    for (int g = 0; g < reg.size(); ++g)
        if (std::find(allowed.begin(), allowed.end(), g) == allowed.end())
            grads[static_cast<std::size_t>(g)].setZero();
    return grads;
}

/// E epochs of minibatch SGD restricted to the plan's groups; returns the
/// payload of per-group deltas. Deterministic per rng state.
inline UpdatePayload local_train(LocalModel& model, const ClientDataset& data,
                                 const AllocationPlan& plan, int epochs, double lr, int batch_size,
                                 std::mt19937_64& rng) {
    if (data.size() == 0) throw ContractError("local_train: empty dataset");
    if (batch_size < 1) throw ContractError("local_train: batch size must be >= 1");

    std::vector<Mat> snapshot;
    snapshot.reserve(plan.groups.size());
    for (int g : plan.groups) snapshot.push_back(model.params.group(g));

    std::vector<int> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), 0);
    for (int e = 0; e < epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int start = 0; start < data.size(); start += batch_size) {
            int len = std::min(batch_size, data.size() - start);
            std::span<const int> batch(order.data() + start, static_cast<std::size_t>(len));
            std::vector<Mat> grads = masked_grad(model, data, batch, plan.groups);
            for (int g : plan.groups) model.params.group(g) -= lr * grads[static_cast<std::size_t>(g)];
        }
    }

    UpdatePayload payload;
    payload.client = plan.client;
    payload.mods = data.mods;
    payload.deltas.reserve(plan.groups.size());
    for (std::size_t i = 0; i < plan.groups.size(); ++i)
        payload.deltas.emplace_back(plan.groups[i], model.params.group(plan.groups[i]) - snapshot[i]);
    payload.bytes = serialize_payload(payload).size();
    return payload;
}

/// Debug dump: flat little-endian f64 stream plus a JSON sidecar with shapes.
inline void dump_dataset(const ClientDataset& ds, const std::string& bin_path,
                         const std::string& json_path) {
    std::vector<std::uint8_t> buf;
    for (const auto& row : ds.features)
        for (const Vec& v : row)
            for (Eigen::Index i = 0; i < v.size(); ++i) wire::put_f64(buf, v[i]);
    std::ofstream bin(bin_path, std::ios::binary);
    bin.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));

    nlohmann::ordered_json j;
    j["samples"] = ds.size();
    j["modalities"] = ds.mods.modality_count();
    std::vector<int> dims;
    if (!ds.features.empty())
        for (const Vec& v : ds.features.front()) dims.push_back(static_cast<int>(v.size()));
    j["dims"] = dims;
    std::vector<int> present(ds.mods.indices().begin(), ds.mods.indices().end());
    j["present_modalities"] = present;
    j["labels"] = ds.labels;
    std::ofstream js(json_path);
    js << j.dump(2) << "\n";
}

inline ClientDataset load_dataset(const std::string& bin_path, const std::string& json_path) {
    std::ifstream js(json_path);
    if (!js) throw ConfigError("dataset", "cannot open sidecar " + json_path);
    nlohmann::json j = nlohmann::json::parse(js);
    int samples = j.at("samples").get<int>();
    int modalities = j.at("modalities").get<int>();
    std::vector<int> dims = j.at("dims").get<std::vector<int>>();
    std::vector<int> present = j.at("present_modalities").get<std::vector<int>>();

    ClientDataset ds;
    ds.mods = ModalitySet(present, modalities);
    ds.labels = j.at("labels").get<std::vector<int>>();

    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw ConfigError("dataset", "cannot open binary " + bin_path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    std::size_t off = 0;
    auto next_f64 = [&]() {
        if (off + 8 > buf.size()) throw ProtocolError("dataset binary truncated");
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[off + static_cast<std::size_t>(i)]) << (8 * i);
        off += 8;
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    };
    ds.features.resize(static_cast<std::size_t>(samples));
    for (int s = 0; s < samples; ++s) {
        auto& row = ds.features[static_cast<std::size_t>(s)];
        row.resize(static_cast<std::size_t>(modalities));
        for (int m = 0; m < modalities; ++m) {
            Vec v(dims[static_cast<std::size_t>(m)]);
            for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = next_f64();
            row[static_cast<std::size_t>(m)] = v;
        }
    }
    return ds;
}

}  // namespace relief
