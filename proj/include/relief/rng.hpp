#pragma once

#include "relief/common.hpp"

#include <cstdint>
#include <initializer_list>
#include <random>

namespace relief {

// splitmix64; used to derive independent substreams from (seed, tags...).
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Stream purposes; first tag of every derived stream.
namespace streams {
constexpr std::uint64_t kFrozenBase = 1;
constexpr std::uint64_t kTask = 2;
constexpr std::uint64_t kClientData = 3;
constexpr std::uint64_t kTestData = 4;
constexpr std::uint64_t kShuffle = 5;
constexpr std::uint64_t kRandomPlan = 6;
constexpr std::uint64_t kMonteCarlo = 7;
constexpr std::uint64_t kAdapterInit = 8;
}  // namespace streams

/// Deterministic substream keyed by a seed and an arbitrary tag list.
/// Streams with different tags are independent, so adding a client or a
/// round never perturbs another stream's draws.
inline std::mt19937_64 rng_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = splitmix64(seed);
    for (std::uint64_t t : tags) s = splitmix64(s ^ splitmix64(t));
    return std::mt19937_64(s);
}

inline Vec gaussian_vec(std::mt19937_64& rng, Eigen::Index dim, double stddev) {
    std::normal_distribution<double> n(0.0, stddev);
    Vec v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = n(rng);
    return v;
}

inline Mat gaussian_mat(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
    std::normal_distribution<double> n(0.0, stddev);
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = n(rng);
    return m;
}

/// Uniform direction on the unit sphere.
inline Vec unit_vec(std::mt19937_64& rng, Eigen::Index dim) {
    Vec v = gaussian_vec(rng, dim, 1.0);
    double n = v.norm();
    while (n == 0.0) {  // astronomically unlikely; redraw
        v = gaussian_vec(rng, dim, 1.0);
        n = v.norm();
    }
    return v / n;
}

/// Uniform draw from the closed ball of the given radius (zero mean,
/// E||x||^2 = radius^2 * d/(d+2)).
inline Vec ball_vec(std::mt19937_64& rng, Eigen::Index dim, double radius) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vec dir = unit_vec(rng, dim);
    double r = radius * std::pow(u(rng), 1.0 / static_cast<double>(dim));
    return dir * r;
}

}  // namespace relief
