#pragma once

#include "relief/param_space.hpp"

#include <cstdint>
#include <vector>

namespace relief {

/// Compute, communication, and power profile of one device. tau_per_group
/// already includes the compute-class slowdown.
struct DeviceProfile {
    int id = 0;
    ModalitySet mods;
    double compute_slowdown = 1.0;
    double tau_per_group = 0.0;  // seconds per trained group
    double uplink_bps = 1e9;
    double power_active_w = 0.0;
    double power_comm_w = 0.0;  // defaults to 0.5 x active in config loading
    double power_idle_w = 0.0;  // defaults to 0.2 x active in config loading
};

struct RoundTiming {
    std::vector<double> compute_s;
    std::vector<double> comm_s;
    std::vector<double> idle_s;
    double round_wall_s = 0.0;
    int straggler = 0;
};

/// Synchronous-round timing: compute = |S_n| * tau_n, comm = bytes/uplink +
/// T_o, wall = max(compute + comm), idle = wall - own total. Ties on the
/// straggler go to the lowest device id.
inline RoundTiming round_timing(const std::vector<int>& plan_sizes,
                                const std::vector<DeviceProfile>& profiles,
                                const std::vector<std::uint64_t>& payload_bytes, double t_overhead) {
    if (plan_sizes.size() != profiles.size() || payload_bytes.size() != profiles.size())
        throw ContractError("round_timing: plans, profiles, and byte counts must align");
    RoundTiming t;
    const std::size_t n = profiles.size();
    t.compute_s.resize(n);
    t.comm_s.resize(n);
    t.idle_s.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        t.compute_s[i] = static_cast<double>(plan_sizes[i]) * profiles[i].tau_per_group;
        t.comm_s[i] = 8.0 * static_cast<double>(payload_bytes[i]) / profiles[i].uplink_bps + t_overhead;
        double total = t.compute_s[i] + t.comm_s[i];
        if (total > t.round_wall_s) {
            t.round_wall_s = total;
            t.straggler = profiles[i].id;
        }
    }
    for (std::size_t i = 0; i < n; ++i) t.idle_s[i] = t.round_wall_s - (t.compute_s[i] + t.comm_s[i]);
    return t;
}

/// E_n = P_active*compute + P_comm*comm + P_idle*idle per device.
inline std::vector<double> round_energy(const RoundTiming& timing,
                                        const std::vector<DeviceProfile>& profiles) {
    if (timing.compute_s.size() != profiles.size())
        throw ContractError("round_energy: timing and profiles must align");
    std::vector<double> joules(profiles.size());
    for (std::size_t i = 0; i < profiles.size(); ++i)
        joules[i] = profiles[i].power_active_w * timing.compute_s[i] +
                    profiles[i].power_comm_w * timing.comm_s[i] +
                    profiles[i].power_idle_w * timing.idle_s[i];
    return joules;
}

inline double fleet_energy(const std::vector<double>& per_device) {
    double total = 0.0;
    for (double j : per_device) total += j;
    return total;
}

}  // namespace relief
