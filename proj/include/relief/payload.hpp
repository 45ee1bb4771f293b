#pragma once

#include "relief/param_space.hpp"

#include <cstdint>
#include <cstring>
#include <utility>
#include <vector>

namespace relief {

/// One device's round upload: per-group deltas for the groups it trained,
/// plus its modality declaration. `bytes` is the actual serialized size.
struct UpdatePayload {
    int client = 0;
    ModalitySet mods;
    std::vector<std::pair<int, Mat>> deltas;  // sorted by group id
    std::uint64_t bytes = 0;

    bool has(int gid) const {
        for (const auto& [g, m] : deltas)
            if (g == gid) return true;
        return false;
    }
    const Mat& delta(int gid) const {
        for (const auto& [g, m] : deltas)
            if (g == gid) return m;
        throw ProtocolError("payload missing group " + std::to_string(gid));
    }
};

namespace wire {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
}

}  // namespace wire

/// Wire format: header {client u32, modality bitmask u32, group count u16},
/// then per group {group id u16, element count u32, row-major f64 LE}.
inline std::vector<std::uint8_t> serialize_payload(const UpdatePayload& p) {
    std::vector<std::uint8_t> out;
    wire::put_u32(out, static_cast<std::uint32_t>(p.client));
    wire::put_u32(out, p.mods.bitmask());
    wire::put_u16(out, static_cast<std::uint16_t>(p.deltas.size()));
    for (const auto& [gid, mat] : p.deltas) {
        wire::put_u16(out, static_cast<std::uint16_t>(gid));
        wire::put_u32(out, static_cast<std::uint32_t>(mat.size()));
        for (Eigen::Index r = 0; r < mat.rows(); ++r)
            for (Eigen::Index c = 0; c < mat.cols(); ++c) wire::put_f64(out, mat(r, c));
    }
    return out;
}

}  // namespace relief
