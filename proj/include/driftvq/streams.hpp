#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftvq/core.hpp"

namespace driftvq {

// Parametric stand-ins for a drifting encoder E_state(x):
//   translation  E(x) = x + theta
//   scaling      E(x) = A x
//   split        E(x) = x + sign(x) * theta   (elementwise)
// Each is affine in its state, so first-order predictions are exact.
enum class DriftKind { translation, scaling, split };
enum class ScalingRegime { expansion, shrink };

std::string to_string(DriftKind kind);

struct StreamConfig {
    DriftKind kind = DriftKind::translation;
    std::size_t n = 1500;
    std::size_t dim = 2;
    double noise_scale = 1.0;
    // Empty means the kind's default: zero, or 0.5 per coordinate for split.
    std::vector<double> mean;
    double target_offset = 10.0;
    double rate = 0.1;
    ScalingRegime regime = ScalingRegime::expansion;
    // Fixed target map for scaling; drawn from the seed when absent.
    std::optional<Matrix> target_map;
    std::uint64_t seed = 0;
};

// sign with sign(0) = +1, used for data generation and drift application.
double drift_sign(double v);

class DriftProcess {
public:
    // Explicit construction; `target_map` is only meaningful for scaling.
    DriftProcess(DriftKind kind, Matrix base, Matrix targets, double rate,
                 Matrix target_map = {});

    // Gaussian base cloud and its targets per the kind's construction.
    static DriftProcess sample_base(const StreamConfig& config);

    DriftKind kind() const { return kind_; }
    std::size_t size() const { return base_.rows(); }
    std::size_t dim() const { return base_.cols(); }
    double rate() const { return rate_; }
    void set_rate(double r) { rate_ = r; }

    const Matrix& base() const { return base_; }
    const Matrix& targets() const { return targets_; }
    const Matrix& target_map() const { return target_map_; }
    const std::vector<double>& theta() const { return theta_; }
    const Matrix& a() const { return a_; }

    // theta (translation, split) or row-major A (scaling).
    std::vector<double> state() const;
    std::size_t state_dim() const;
    void set_state(std::span<const double> state);

    // E_state(x) for a base point x.
    std::vector<double> encode(std::span<const double> x) const;
    // The whole base set pushed through the current encoder.
    Matrix drifted_all() const;

    // Drifted rows for `indices` without touching the state.
    Batch next_batch(std::span<const std::size_t> indices) const;
    Matrix target_slice(std::span<const std::size_t> indices) const;

    // One drift update from a drifted batch and its targets.
    //   translation/split: theta += r * mean(Y_b - X_b)
    //   scaling:           A += r * (2/B) (Y_b - X_b A^T)^T X_b   (X_b = base rows)
    void drift_step(const Batch& drifted, const Matrix& targets);

    // dE/dstate at base point x: d x state_dim.
    Matrix exact_jacobian(std::span<const double> x) const;

    // J(x_j) J(x_i)^T, d x d.
    Matrix ntk(std::span<const double> x_j, std::span<const double> x_i) const;

private:
    void check_index(std::size_t i) const;

    DriftKind kind_;
    Matrix base_;
    Matrix targets_;
    Matrix target_map_;
    double rate_;
    std::vector<double> theta_;
    Matrix a_;
};

}  // namespace driftvq
