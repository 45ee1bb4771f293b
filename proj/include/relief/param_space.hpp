#pragma once

#include "relief/common.hpp"

#include <algorithm>
#include <cstdint>
#include <set>
#include <vector>

namespace relief {

/// A device's sensor suite: indices into {0..M-1}. Never empty.
class ModalitySet {
public:
    ModalitySet() = default;
    ModalitySet(std::initializer_list<int> mods, int modality_count)
        : ModalitySet(std::vector<int>(mods), modality_count) {}
    ModalitySet(const std::vector<int>& mods, int modality_count) : m_(modality_count) {
        if (mods.empty()) throw ConfigError("modalities", "modality set must be non-empty");
        for (int m : mods) {
            if (m < 0 || m >= modality_count)
                throw ConfigError("modalities", "modality index " + std::to_string(m) +
                                                    " out of range [0," + std::to_string(modality_count) + ")");
            mask_.insert(m);
        }
    }

    bool has(int m) const { return mask_.count(m) != 0; }
    int count() const { return static_cast<int>(mask_.size()); }
    int modality_count() const { return m_; }
    const std::set<int>& indices() const { return mask_; }

    std::uint32_t bitmask() const {
        std::uint32_t b = 0;
        for (int m : mask_) b |= (1u << m);
        return b;
    }

    bool operator==(const ModalitySet& o) const { return mask_ == o.mask_ && m_ == o.m_; }

private:
    std::set<int> mask_;
    int m_ = 0;
};

enum class GroupKind : std::uint8_t { FusionBlock, SharedProjection, EncoderLayer, HeadLayer };

struct GroupDesc {
    GroupKind kind;
    int modality = -1;  // FusionBlock / EncoderLayer
    int layer = -1;     // EncoderLayer / HeadLayer
    int rows = 0;
    int cols = 0;

    Eigen::Index elems() const { return static_cast<Eigen::Index>(rows) * cols; }
};

/// Ordered group directory. Index order: fusion blocks 0..M-1, shared
/// projection, encoder layers (modality-major, layer-minor), head layers.
/// G = M + 1 + sum(L_m) + L_H.
class GroupRegistry {
public:
    GroupRegistry() = default;
    GroupRegistry(int modalities, const std::vector<int>& dims, const std::vector<int>& layers,
                  int head_layers, int rank, int out_dim, int classes) {
        entries_.reserve(static_cast<std::size_t>(modalities) + 1);
        for (int m = 0; m < modalities; ++m)
            entries_.push_back({GroupKind::FusionBlock, m, -1, rank, dims[static_cast<std::size_t>(m)]});
        entries_.push_back({GroupKind::SharedProjection, -1, -1, out_dim, rank});
        for (int m = 0; m < modalities; ++m)
            for (int l = 0; l < layers[static_cast<std::size_t>(m)]; ++l)
                entries_.push_back({GroupKind::EncoderLayer, m, l, dims[static_cast<std::size_t>(m)],
                                    dims[static_cast<std::size_t>(m)]});
        for (int l = 0; l < head_layers; ++l) {
            int rows = (l == head_layers - 1) ? classes : out_dim;
            entries_.push_back({GroupKind::HeadLayer, -1, l, rows, out_dim});
        }
        modalities_ = modalities;
    }

    int size() const { return static_cast<int>(entries_.size()); }
    int modalities() const { return modalities_; }
    const GroupDesc& at(int gid) const { return entries_[static_cast<std::size_t>(gid)]; }
    const std::vector<GroupDesc>& entries() const { return entries_; }

    int shared_projection_id() const { return modalities_; }
    int fusion_block_id(int m) const { return m; }

    Eigen::Index total_elems() const {
        Eigen::Index n = 0;
        for (const auto& e : entries_) n += e.elems();
        return n;
    }

private:
    std::vector<GroupDesc> entries_;
    int modalities_ = 0;
};

/// The fusion layer's low-rank pair: shared projection B (d_o x rho) and M
/// modality-aligned column blocks A_m (rho x d_m), concatenating to rho x D.
struct BlockedAdapter {
    Mat b_proj;
    std::vector<Mat> a_blocks;

    Mat concat_a() const {
        Eigen::Index rho = a_blocks.empty() ? 0 : a_blocks.front().rows();
        Eigen::Index total = 0;
        for (const Mat& a : a_blocks) total += a.cols();
        Mat out(rho, total);
        Eigen::Index off = 0;
        for (const Mat& a : a_blocks) {
            out.middleCols(off, a.cols()) = a;
            off += a.cols();
        }
        return out;
    }
};

/// Trainable state: adapter deltas for every registry group. Frozen bases
/// live separately (synthetic_task); the registry indexes only what is
/// trained, uploaded, and aggregated.
struct GlobalModel {
    BlockedAdapter fusion;
    std::vector<std::vector<Mat>> encoders;  // [modality][layer]
    std::vector<Mat> head;                   // [layer]
    GroupRegistry registry;

    const Mat& group(int gid) const { return const_cast<GlobalModel*>(this)->group(gid); }

    Mat& group(int gid) {
        const GroupDesc& d = registry.at(gid);
        switch (d.kind) {
            case GroupKind::FusionBlock: return fusion.a_blocks[static_cast<std::size_t>(d.modality)];
            case GroupKind::SharedProjection: return fusion.b_proj;
            case GroupKind::EncoderLayer:
                return encoders[static_cast<std::size_t>(d.modality)][static_cast<std::size_t>(d.layer)];
            case GroupKind::HeadLayer: return head[static_cast<std::size_t>(d.layer)];
        }
        throw ContractError("unknown group kind");
    }
};

/// Builds a zero-initialized model with the group structure implied by the
/// dimensions. Deterministic; throws ConfigError on non-positive sizes.
inline GlobalModel build_registry(int modalities, const std::vector<int>& dims,
                                  const std::vector<int>& layers, int head_layers, int rank,
                                  int out_dim, int classes) {
    if (modalities < 1) throw ConfigError("modalities", "must be >= 1");
    if (static_cast<int>(dims.size()) != modalities) throw ConfigError("dims", "need one entry per modality");
    if (static_cast<int>(layers.size()) != modalities)
        throw ConfigError("encoder_layers", "need one entry per modality");
    for (int d : dims)
        if (d < 1) throw ConfigError("dims", "feature dims must be >= 1");
    for (int l : layers)
        if (l < 0) throw ConfigError("encoder_layers", "layer counts must be >= 0");
    if (head_layers < 0) throw ConfigError("head_layers", "must be >= 0");
    if (rank < 1) throw ConfigError("rank", "must be >= 1");
    if (out_dim < 1) throw ConfigError("out_dim", "must be >= 1");
    if (classes < 1) throw ConfigError("classes", "must be >= 1");
    if (head_layers == 0 && classes != out_dim)
        throw ConfigError("classes", "with no head layers the fusion output is the logits, so classes must equal out_dim");

    GlobalModel model;
    model.registry = GroupRegistry(modalities, dims, layers, head_layers, rank, out_dim, classes);
    model.fusion.b_proj = Mat::Zero(out_dim, rank);
    model.fusion.a_blocks.reserve(static_cast<std::size_t>(modalities));
    for (int m = 0; m < modalities; ++m)
        model.fusion.a_blocks.push_back(Mat::Zero(rank, dims[static_cast<std::size_t>(m)]));
    model.encoders.resize(static_cast<std::size_t>(modalities));
    for (int m = 0; m < modalities; ++m)
        for (int l = 0; l < layers[static_cast<std::size_t>(m)]; ++l)
            model.encoders[static_cast<std::size_t>(m)].push_back(
                Mat::Zero(dims[static_cast<std::size_t>(m)], dims[static_cast<std::size_t>(m)]));
    for (int l = 0; l < head_layers; ++l) {
        int rows = (l == head_layers - 1) ? classes : out_dim;
        model.head.push_back(Mat::Zero(rows, out_dim));
    }
    return model;
}

/// G_n: every group except fusion blocks and encoder layers of modalities
/// the device lacks. Shared projection and head layers are always included.
inline std::vector<int> accessible_groups(const GroupRegistry& registry, const ModalitySet& mods) {
    std::vector<int> out;
    for (int g = 0; g < registry.size(); ++g) {
        const GroupDesc& d = registry.at(g);
        bool ok = true;
        if (d.kind == GroupKind::FusionBlock || d.kind == GroupKind::EncoderLayer) ok = mods.has(d.modality);
        if (ok) out.push_back(g);
    }
    return out;
}

/// C_m: indices of devices possessing modality m. May be empty.
inline std::vector<int> cohort(const std::vector<ModalitySet>& devices, int m) {
    std::vector<int> out;
    for (int n = 0; n < static_cast<int>(devices.size()); ++n)
        if (devices[static_cast<std::size_t>(n)].has(m)) out.push_back(n);
    return out;
}

/// Row-major concatenation of all groups in registry order.
inline Vec flatten(const GlobalModel& model) {
    Vec out(model.registry.total_elems());
    Eigen::Index off = 0;
    for (int g = 0; g < model.registry.size(); ++g) {
        const Mat& m = model.group(g);
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) out[off++] = m(r, c);
    }
    return out;
}

inline void unflatten(const Vec& flat, GlobalModel& model) {
    if (flat.size() != model.registry.total_elems())
        throw ContractError("flat vector length does not match registry");
    Eigen::Index off = 0;
    for (int g = 0; g < model.registry.size(); ++g) {
        Mat& m = model.group(g);
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = flat[off++];
    }
}

}  // namespace relief
