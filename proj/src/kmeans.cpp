#include "driftvq/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

namespace driftvq {

namespace {

bool same_row(std::span<const double> a, std::span<const double> b) {
    return std::equal(a.begin(), a.end(), b.begin());
}

bool contains_row(const Matrix& rows, std::size_t filled, std::span<const double> r) {
    for (std::size_t i = 0; i < filled; ++i) {
        if (same_row(rows.row(i), r)) return true;
    }
    return false;
}

void copy_row(std::span<const double> src, std::span<double> dst) {
    std::copy(src.begin(), src.end(), dst.begin());
}

Codebook random_sample(const Matrix& points, std::size_t k, std::uint64_t seed) {
    std::vector<std::size_t> order(points.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    Matrix codes(k, points.cols());
    std::size_t filled = 0;
    for (std::size_t idx : order) {
        if (filled == k) break;
        if (contains_row(codes, filled, points.row(idx))) continue;
        copy_row(points.row(idx), codes.row(filled++));
    }
    if (filled < k) {
        throw DegenerateInput("init_codebook: only " + std::to_string(filled) +
                              " distinct points for K=" + std::to_string(k));
    }
    return Codebook(std::move(codes));
}

Codebook kmeans_plus_plus(const Matrix& points, std::size_t k, std::uint64_t seed) {
    const std::size_t n = points.rows();
    std::mt19937_64 rng(seed);
    Matrix codes(k, points.cols());

    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    copy_row(points.row(first(rng)), codes.row(0));

    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points.row(i), codes.row(0));

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t c = 1; c < k; ++c) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        if (!(total > 0.0)) {
            throw DegenerateInput("init_codebook: fewer than K distinct points for k-means++");
        }
        const double target = unit(rng) * total;
        double running = 0.0;
        std::size_t chosen = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (d2[i] <= 0.0) continue;
            running += d2[i];
            chosen = i;
            if (running >= target) break;
        }
        copy_row(points.row(chosen), codes.row(c));
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], squared_distance(points.row(i), codes.row(c)));
        }
    }
    return Codebook(std::move(codes));
}

double max_displacement(const Matrix& a, const Matrix& b) {
    double worst = 0.0;
    for (std::size_t k = 0; k < a.rows(); ++k) {
        worst = std::max(worst, std::sqrt(squared_distance(a.row(k), b.row(k))));
    }
    return worst;
}

}  // namespace

Codebook init_codebook(const Matrix& points, std::size_t k, const LloydInit& init) {
    if (points.rows() < k) {
        throw InfeasibleError("init_codebook: N=" + std::to_string(points.rows()) + " < K=" +
                              std::to_string(k));
    }
    if (k == 0) throw InvalidInput("init_codebook: K must be >= 1");

    if (const auto* given = std::get_if<Codebook>(&init)) {
        if (given->size() != k || given->dim() != points.cols()) {
            throw ShapeError("init_codebook: explicit codebook shape does not match K x d");
        }
        return *given;
    }
    const auto& seeded = std::get<SeededInit>(init);
    if (k == points.rows()) {
        Codebook all(points);
        for (std::size_t i = 1; i < k; ++i) {
            if (contains_row(points, i, points.row(i))) {
                throw DegenerateInput("init_codebook: K == N but dataset has duplicate rows");
            }
        }
        return all;
    }
    switch (seeded.strategy) {
        case InitStrategy::random_sample:
            return random_sample(points, k, seeded.seed);
        case InitStrategy::kmeans_plus_plus:
            return kmeans_plus_plus(points, k, seeded.seed);
    }
    throw InvalidInput("init_codebook: unknown strategy");
}

CellMeans cell_means(const Matrix& points, const Codebook& codebook) {
    const Assignment a = assign_batch(points, codebook);
    CellMeans out{Matrix(codebook.size(), codebook.dim()),
                  std::vector<std::size_t>(codebook.size(), 0)};
    for (std::size_t i = 0; i < points.rows(); ++i) {
        const std::size_t w = a.winners[i];
        ++out.counts[w];
        auto acc = out.means.row(w);
        const auto p = points.row(i);
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += p[j];
    }
    for (std::size_t k = 0; k < codebook.size(); ++k) {
        auto m = out.means.row(k);
        if (out.counts[k] == 0) {
            copy_row(codebook.code(k), m);
            continue;
        }
        const double inv = 1.0 / static_cast<double>(out.counts[k]);
        for (double& v : m) v *= inv;
    }
    return out;
}

LloydResult lloyd(const Matrix& points, std::size_t k, const LloydInit& init,
                  const LloydOptions& options) {
    if (points.rows() < k) {
        throw InfeasibleError("lloyd: N=" + std::to_string(points.rows()) + " < K=" +
                              std::to_string(k));
    }
    if (!(options.tol > 0.0)) throw InvalidInput("lloyd: tol must be > 0");

    Codebook current = init_codebook(points, k, init);
    LloydResult result{current, 0, 0.0, false, {distortion(points, current)}};

    while (result.iterations < options.max_iter) {
        const Assignment a = assign_batch(points, current);
        CellMeans cm = cell_means(points, current);
        Matrix next = std::move(cm.means);

        // Reseed empty cells. Error of each point is measured against its own
        // cell's new mean; a reseeded point's error drops to zero.
        if (std::find(cm.counts.begin(), cm.counts.end(), 0u) != cm.counts.end()) {
            std::vector<double> err(points.rows());
            for (std::size_t i = 0; i < points.rows(); ++i) {
                err[i] = squared_distance(points.row(i), next.row(a.winners[i]));
            }
            for (std::size_t c = 0; c < k; ++c) {
                if (cm.counts[c] != 0) continue;
                const auto far = static_cast<std::size_t>(
                    std::max_element(err.begin(), err.end()) - err.begin());
                copy_row(points.row(far), next.row(c));
                err[far] = 0.0;
            }
        }

        const double moved = max_displacement(next, current.codes());
        current = Codebook(std::move(next));
        ++result.iterations;
        result.distortion_history.push_back(distortion(points, current));
        if (moved < options.tol) {
            result.converged = true;
            break;
        }
    }
    result.codebook = current;
    result.final_distortion = result.distortion_history.back();
    return result;
}

bool is_fixed_point(const Matrix& points, const Codebook& codebook, double tol) {
    const CellMeans cm = cell_means(points, codebook);
    for (std::size_t k = 0; k < codebook.size(); ++k) {
        if (cm.counts[k] == 0) continue;
        if (std::sqrt(squared_distance(cm.means.row(k), codebook.code(k))) > tol) return false;
    }
    return true;
}

}  // namespace driftvq
