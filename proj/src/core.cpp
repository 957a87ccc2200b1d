#include "driftvq/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace driftvq {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) {
            throw ShapeError("Matrix: ragged initializer");
        }
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double diff = a[j] - b[j];
        acc += diff * diff;
    }
    return acc;
}

Codebook::Codebook(Matrix codes) : codes_(std::move(codes)) {
    if (codes_.rows() == 0 || codes_.cols() == 0) {
        throw InvalidInput("Codebook: need K >= 1 and d >= 1");
    }
    validate();
}

void Codebook::validate() const {
    if (!codes_.all_finite()) {
        throw InvalidInput("Codebook: non-finite code entry");
    }
}

Nearest nearest_code(std::span<const double> x, const Codebook& codebook) {
    if (x.size() != codebook.dim()) {
        throw ShapeError("nearest_code: point has dimension " + std::to_string(x.size()) +
                         ", codebook has " + std::to_string(codebook.dim()));
    }
    for (double v : x) {
        if (!std::isfinite(v)) throw InvalidInput("nearest_code: non-finite input");
    }
    Nearest best{0, squared_distance(x, codebook.code(0))};
    for (std::size_t k = 1; k < codebook.size(); ++k) {
        const double dist = squared_distance(x, codebook.code(k));
        // strict < keeps the lowest index on ties
        if (dist < best.distance) best = {k, dist};
    }
    return best;
}

Assignment assign_batch(const Matrix& points, const Codebook& codebook) {
    if (points.cols() != codebook.dim()) {
        throw ShapeError("assign_batch: batch dimension " + std::to_string(points.cols()) +
                         " != codebook dimension " + std::to_string(codebook.dim()));
    }
    Assignment out;
    out.winners.reserve(points.rows());
    out.distances.reserve(points.rows());
    for (std::size_t i = 0; i < points.rows(); ++i) {
        const Nearest n = nearest_code(points.row(i), codebook);
        out.winners.push_back(n.index);
        out.distances.push_back(n.distance);
    }
    return out;
}

double distortion(const Matrix& points, const Codebook& codebook) {
    if (points.rows() == 0) throw InvalidInput("distortion: empty point set");
    const Assignment a = assign_batch(points, codebook);
    double acc = 0.0;
    for (double d : a.distances) acc += d;
    return acc / static_cast<double>(points.rows());
}

namespace {

std::size_t count_used(std::span<const std::size_t> window, std::size_t k) {
    if (window.empty()) throw InvalidInput("utilization: empty window");
    if (k == 0) throw InvalidInput("utilization: K must be >= 1");
    std::vector<char> seen(k, 0);
    for (std::size_t w : window) {
        if (w >= k) throw InvalidInput("utilization: code index out of range");
        seen[w] = 1;
    }
    return static_cast<std::size_t>(std::count(seen.begin(), seen.end(), 1));
}

}  // namespace

double utilization(std::span<const std::size_t> window, std::size_t k) {
    return static_cast<double>(count_used(window, k)) / static_cast<double>(k);
}

std::size_t dead_codes(std::span<const std::size_t> window, std::size_t k) {
    return k - count_used(window, k);
}

Metrics evaluate(const Matrix& points, const Codebook& codebook) {
    if (points.rows() == 0) throw InvalidInput("evaluate: empty point set");
    const Assignment a = assign_batch(points, codebook);
    Metrics m;
    for (double d : a.distances) m.distortion += d;
    m.distortion /= static_cast<double>(points.rows());
    m.utilization = utilization(a.winners, codebook.size());
    m.dead_codes = dead_codes(a.winners, codebook.size());
    return m;
}

}  // namespace driftvq
