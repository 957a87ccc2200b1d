#include "driftvq/streams.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace driftvq {

std::string to_string(DriftKind kind) {
    switch (kind) {
        case DriftKind::translation: return "translation";
        case DriftKind::scaling: return "scaling";
        case DriftKind::split: return "split";
    }
    return "unknown";
}

double drift_sign(double v) { return v < 0.0 ? -1.0 : 1.0; }

namespace {

// Orthonormal d x d matrix from Gram-Schmidt on Gaussian columns.
Matrix random_orthogonal(std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix q(d, d);
    for (std::size_t c = 0; c < d; ++c) {
        for (;;) {
            std::vector<double> v(d);
            for (double& x : v) x = normal(rng);
            for (std::size_t p = 0; p < c; ++p) {
                double dot = 0.0;
                for (std::size_t r = 0; r < d; ++r) dot += v[r] * q(r, p);
                for (std::size_t r = 0; r < d; ++r) v[r] -= dot * q(r, p);
            }
            double norm = 0.0;
            for (double x : v) norm += x * x;
            norm = std::sqrt(norm);
            if (norm < 1e-8) continue;
            for (std::size_t r = 0; r < d; ++r) q(r, c) = v[r] / norm;
            break;
        }
    }
    return q;
}

// U diag(s) V^T with singular values drawn from the regime's band, so the
// spectral norm is max(s).
Matrix sample_target_map(std::size_t d, ScalingRegime regime, std::mt19937_64& rng) {
    const double lo = regime == ScalingRegime::expansion ? 1.5 : 0.3;
    const double hi = regime == ScalingRegime::expansion ? 2.5 : 0.7;
    std::uniform_real_distribution<double> band(lo, hi);
    const Matrix u = random_orthogonal(d, rng);
    const Matrix v = random_orthogonal(d, rng);
    std::vector<double> s(d);
    for (double& x : s) x = band(rng);
    Matrix m(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += u(i, k) * s[k] * v(j, k);
            m(i, j) = acc;
        }
    }
    return m;
}

}  // namespace

DriftProcess::DriftProcess(DriftKind kind, Matrix base, Matrix targets, double rate,
                           Matrix target_map)
    : kind_(kind),
      base_(std::move(base)),
      targets_(std::move(targets)),
      target_map_(std::move(target_map)),
      rate_(rate),
      theta_(base_.cols(), 0.0),
      a_(Matrix::identity(base_.cols())) {
    if (base_.rows() == 0 || base_.cols() == 0) {
        throw InvalidInput("DriftProcess: empty base set");
    }
    if (targets_.rows() != base_.rows() || targets_.cols() != base_.cols()) {
        throw ShapeError("DriftProcess: targets must match base shape");
    }
    if (!base_.all_finite() || !targets_.all_finite()) {
        throw InvalidInput("DriftProcess: non-finite data");
    }
}

DriftProcess DriftProcess::sample_base(const StreamConfig& config) {
    if (config.n == 0 || config.dim == 0) throw InvalidInput("sample_base: N and d must be >= 1");
    std::vector<double> mean = config.mean;
    if (mean.empty()) {
        mean.assign(config.dim, config.kind == DriftKind::split ? 0.5 : 0.0);
    }
    if (mean.size() != config.dim) throw ShapeError("sample_base: mean has wrong dimension");

    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix base(config.n, config.dim);
    for (std::size_t i = 0; i < config.n; ++i) {
        for (std::size_t j = 0; j < config.dim; ++j) {
            base(i, j) = mean[j] + config.noise_scale * normal(rng);
        }
    }

    Matrix targets(config.n, config.dim);
    Matrix map;
    switch (config.kind) {
        case DriftKind::translation:
            for (std::size_t i = 0; i < config.n; ++i) {
                for (std::size_t j = 0; j < config.dim; ++j) {
                    targets(i, j) = base(i, j) + config.target_offset;
                }
            }
            break;
        case DriftKind::split:
            for (std::size_t i = 0; i < config.n; ++i) {
                for (std::size_t j = 0; j < config.dim; ++j) {
                    targets(i, j) = base(i, j) + config.target_offset * drift_sign(base(i, j));
                }
            }
            break;
        case DriftKind::scaling:
            map = config.target_map ? *config.target_map
                                    : sample_target_map(config.dim, config.regime, rng);
            if (map.rows() != config.dim || map.cols() != config.dim) {
                throw ShapeError("sample_base: target map must be d x d");
            }
            // Y = X M^T
            for (std::size_t i = 0; i < config.n; ++i) {
                for (std::size_t r = 0; r < config.dim; ++r) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < config.dim; ++c) acc += map(r, c) * base(i, c);
                    targets(i, r) = acc;
                }
            }
            break;
    }
    return DriftProcess(config.kind, std::move(base), std::move(targets), config.rate,
                        std::move(map));
}

std::vector<double> DriftProcess::state() const {
    if (kind_ == DriftKind::scaling) {
        auto f = a_.flat();
        return {f.begin(), f.end()};
    }
    return theta_;
}

std::size_t DriftProcess::state_dim() const {
    return kind_ == DriftKind::scaling ? dim() * dim() : dim();
}

void DriftProcess::set_state(std::span<const double> state) {
    if (state.size() != state_dim()) throw ShapeError("set_state: wrong state dimension");
    if (kind_ == DriftKind::scaling) {
        std::copy(state.begin(), state.end(), a_.flat().begin());
    } else {
        theta_.assign(state.begin(), state.end());
    }
}

std::vector<double> DriftProcess::encode(std::span<const double> x) const {
    if (x.size() != dim()) throw ShapeError("encode: wrong point dimension");
    std::vector<double> out(dim());
    switch (kind_) {
        case DriftKind::translation:
            for (std::size_t j = 0; j < dim(); ++j) out[j] = x[j] + theta_[j];
            break;
        case DriftKind::split:
            for (std::size_t j = 0; j < dim(); ++j) out[j] = x[j] + drift_sign(x[j]) * theta_[j];
            break;
        case DriftKind::scaling:
            for (std::size_t r = 0; r < dim(); ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < dim(); ++c) acc += a_(r, c) * x[c];
                out[r] = acc;
            }
            break;
    }
    return out;
}

Matrix DriftProcess::drifted_all() const {
    Matrix out(size(), dim());
    for (std::size_t i = 0; i < size(); ++i) {
        const auto e = encode(base_.row(i));
        std::copy(e.begin(), e.end(), out.row(i).begin());
    }
    return out;
}

void DriftProcess::check_index(std::size_t i) const {
    if (i >= size()) {
        throw std::out_of_range("DriftProcess: index " + std::to_string(i) + " >= N=" +
                                std::to_string(size()));
    }
}

Batch DriftProcess::next_batch(std::span<const std::size_t> indices) const {
    Batch b{Matrix(indices.size(), dim()), {indices.begin(), indices.end()}};
    for (std::size_t r = 0; r < indices.size(); ++r) {
        check_index(indices[r]);
        const auto e = encode(base_.row(indices[r]));
        std::copy(e.begin(), e.end(), b.points.row(r).begin());
    }
    return b;
}

Matrix DriftProcess::target_slice(std::span<const std::size_t> indices) const {
    Matrix out(indices.size(), dim());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        check_index(indices[r]);
        const auto t = targets_.row(indices[r]);
        std::copy(t.begin(), t.end(), out.row(r).begin());
    }
    return out;
}

void DriftProcess::drift_step(const Batch& drifted, const Matrix& targets) {
    const std::size_t b = drifted.points.rows();
    if (b == 0) throw InvalidInput("drift_step: empty batch");
    if (targets.rows() != b || targets.cols() != dim() || drifted.points.cols() != dim()) {
        throw ShapeError("drift_step: batch/targets shape mismatch");
    }
    const double inv_b = 1.0 / static_cast<double>(b);

    if (kind_ != DriftKind::scaling) {
        std::vector<double> mean_residual(dim(), 0.0);
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < dim(); ++j) {
                mean_residual[j] += targets(i, j) - drifted.points(i, j);
            }
        }
        for (std::size_t j = 0; j < dim(); ++j) theta_[j] += rate_ * mean_residual[j] * inv_b;
        return;
    }

    if (drifted.source_indices.size() != b) {
        throw ShapeError("drift_step: scaling needs the batch's source indices");
    }
    // E = Y_b - X_b A^T, g_A = (2/B) E^T X_b
    Matrix grad(dim(), dim());
    for (std::size_t i = 0; i < b; ++i) {
        check_index(drifted.source_indices[i]);
        const auto x = base_.row(drifted.source_indices[i]);
        for (std::size_t r = 0; r < dim(); ++r) {
            const double e = targets(i, r) - drifted.points(i, r);
            for (std::size_t c = 0; c < dim(); ++c) grad(r, c) += e * x[c];
        }
    }
    for (std::size_t r = 0; r < dim(); ++r) {
        for (std::size_t c = 0; c < dim(); ++c) a_(r, c) += rate_ * 2.0 * inv_b * grad(r, c);
    }
}

Matrix DriftProcess::exact_jacobian(std::span<const double> x) const {
    if (x.size() != dim()) throw ShapeError("exact_jacobian: wrong point dimension");
    for (double v : x) {
        if (!std::isfinite(v)) throw InvalidInput("exact_jacobian: non-finite point");
    }
    switch (kind_) {
        case DriftKind::translation:
            return Matrix::identity(dim());
        case DriftKind::split: {
            Matrix j(dim(), dim());
            for (std::size_t r = 0; r < dim(); ++r) {
                if (x[r] == 0.0) {
                    throw DegenerateInput("exact_jacobian: split encoder has no derivative at a "
                                          "zero coordinate");
                }
                j(r, r) = x[r] < 0.0 ? -1.0 : 1.0;
            }
            return j;
        }
        case DriftKind::scaling: {
            // d(Ax)_r / dA_{r,c} = x_c; A flattened row-major.
            Matrix j(dim(), dim() * dim());
            for (std::size_t r = 0; r < dim(); ++r) {
                for (std::size_t c = 0; c < dim(); ++c) j(r, r * dim() + c) = x[c];
            }
            return j;
        }
    }
    throw InvalidInput("exact_jacobian: unknown drift kind");
}

Matrix DriftProcess::ntk(std::span<const double> x_j, std::span<const double> x_i) const {
    const Matrix jj = exact_jacobian(x_j);
    const Matrix ji = exact_jacobian(x_i);
    Matrix out(dim(), dim());
    for (std::size_t r = 0; r < dim(); ++r) {
        for (std::size_t c = 0; c < dim(); ++c) {
            double acc = 0.0;
            for (std::size_t s = 0; s < jj.cols(); ++s) acc += jj(r, s) * ji(c, s);
            out(r, c) = acc;
        }
    }
    return out;
}

}  // namespace driftvq
