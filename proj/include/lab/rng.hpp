#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

namespace lab {

using rng_t = std::mt19937_64;

// Counter-based stream derivation: (seed, stream, rep) -> independent
// generator. Adding repetitions never changes earlier streams.
inline rng_t make_rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t rep = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      static_cast<std::uint32_t>(rep), static_cast<std::uint32_t>(rep >> 32)};
    return rng_t(seq);
}

inline double randn(rng_t& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    return d(rng);
}

inline double randu(rng_t& rng) {
    std::uniform_real_distribution<double> d(0.0, 1.0);
    return d(rng);
}

// Fills column-major, so the draw order is fixed.
inline Eigen::MatrixXd randn_matrix(Eigen::Index rows, Eigen::Index cols, rng_t& rng, double sd = 1.0) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = sd * randn(rng);
    return m;
}

inline Eigen::VectorXd randn_vector(Eigen::Index n, rng_t& rng, double sd = 1.0) {
    return randn_matrix(n, 1, rng, sd).col(0);
}

}  // namespace lab
