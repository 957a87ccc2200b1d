#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "driftvq/core.hpp"

namespace driftvq::testing {

inline Matrix normal_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                            double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(rows, cols);
    for (double& v : m.flat()) v = normal(rng);
    return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.flat().size(); ++i) {
        worst = std::max(worst, std::abs(a.flat()[i] - b.flat()[i]));
    }
    return worst;
}

}  // namespace driftvq::testing
