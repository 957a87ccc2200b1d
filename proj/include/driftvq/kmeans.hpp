#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "driftvq/core.hpp"

namespace driftvq {

enum class InitStrategy { random_sample, kmeans_plus_plus };

struct SeededInit {
    InitStrategy strategy = InitStrategy::kmeans_plus_plus;
    std::uint64_t seed = 0;
};

// Either a seeded strategy or an explicit starting codebook.
using LloydInit = std::variant<SeededInit, Codebook>;

struct LloydOptions {
    std::size_t max_iter = 500;
    double tol = 1e-8;  // on max centroid displacement
};

struct LloydResult {
    Codebook codebook;
    std::size_t iterations = 0;
    double final_distortion = 0.0;
    bool converged = false;
    // distortion_history[0] is the starting codebook, [t] after t updates.
    std::vector<double> distortion_history;
};

// K distinct rows of `points`, or the explicit codebook after validation.
// K == N returns the dataset rows in order for every strategy.
Codebook init_codebook(const Matrix& points, std::size_t k, const LloydInit& init);

// Batch Lloyd iteration. Empty clusters are reseeded to the point with the
// largest quantization error under the partially updated codebook.
LloydResult lloyd(const Matrix& points, std::size_t k, const LloydInit& init,
                  const LloydOptions& options = {});

// True iff every nonempty Voronoi cell's mean lies within tol of its code.
bool is_fixed_point(const Matrix& points, const Codebook& codebook, double tol);

// Per-code mean of assigned points; empty cells keep their current code.
// Shared by Lloyd's M-step and the full-batch checks.
struct CellMeans {
    Matrix means;
    std::vector<std::size_t> counts;
};
CellMeans cell_means(const Matrix& points, const Codebook& codebook);

}  // namespace driftvq
