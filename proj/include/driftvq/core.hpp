#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "driftvq/errors.hpp"

namespace driftvq {

// Dense row-major matrix of doubles. Rows are the unit of access almost
// everywhere (points, codes, tokens), so row() hands out spans.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return rows_ == 0 || cols_ == 0; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }

    bool all_finite() const;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

double squared_distance(std::span<const double> a, std::span<const double> b);

// K x d set of code vectors. Indices are stable for the life of the object;
// update rules mutate codes in place through mutable_code().
class Codebook {
public:
    explicit Codebook(Matrix codes);

    std::size_t size() const { return codes_.rows(); }
    std::size_t dim() const { return codes_.cols(); }

    std::span<const double> code(std::size_t k) const { return codes_.row(k); }
    std::span<double> mutable_code(std::size_t k) { return codes_.row(k); }
    const Matrix& codes() const { return codes_; }

    // Re-checks the finiteness invariant after in-place mutation.
    void validate() const;

    friend bool operator==(const Codebook&, const Codebook&) = default;

private:
    Matrix codes_;
};

struct Batch {
    Matrix points;                            // B x d
    std::vector<std::size_t> source_indices;  // dataset row of each point
};

struct Nearest {
    std::size_t index = 0;
    double distance = 0.0;  // squared Euclidean
};

struct Assignment {
    std::vector<std::size_t> winners;
    std::vector<double> distances;
};

struct Metrics {
    double distortion = 0.0;
    double utilization = 0.0;
    std::size_t dead_codes = 0;
};

// argmin_k |x - c_k|^2, lowest index on exact ties.
Nearest nearest_code(std::span<const double> x, const Codebook& codebook);

Assignment assign_batch(const Matrix& points, const Codebook& codebook);
inline Assignment assign_batch(const Batch& batch, const Codebook& codebook) {
    return assign_batch(batch.points, codebook);
}

// Empirical distortion: mean over points of min_k |x - c_k|^2.
double distortion(const Matrix& points, const Codebook& codebook);

// Fraction of the k codes that appear at least once in `window`.
double utilization(std::span<const std::size_t> window, std::size_t k);
std::size_t dead_codes(std::span<const std::size_t> window, std::size_t k);

// Distortion and usage of one full assignment pass over `points`.
Metrics evaluate(const Matrix& points, const Codebook& codebook);

}  // namespace driftvq
