#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "driftvq/core.hpp"

namespace driftvq {

// Learnable codebook map C' = P(C). Each code is a token:
//
//   H0 = C E_in + b_in                      embed, K x m
//   Q, Kt, V = H0 W_{q,k,v} + b_{q,k,v}
//   S  = Q Kt^T / sqrt(m)                   linear attention (no softmax)
//   D1 = (S V) W_o + b_o,    H1 = H0 + D1
//   U  = tanh(H1 W_1 + b_1)                 MLP, hidden width ratio * m
//   D2 = U W_2 + b_2
//   C' = C + (D1 + D2) E_out
//
// With W_o, b_o, W_2, b_2 all zero, D1 = D2 = 0 exactly and C' = C.
struct ProjectorConfig {
    std::size_t dim = 2;
    std::size_t d_model = 16;
    std::size_t mlp_ratio = 2;

    static ProjectorConfig toy(std::size_t dim) { return {dim, 16, 2}; }
    static ProjectorConfig large(std::size_t dim) { return {dim, 256, 2}; }
    std::size_t hidden() const { return d_model * mlp_ratio; }
};

enum class ProjectorTensor : std::size_t {
    embed_in, b_in,
    w_q, b_q, w_k, b_k, w_v, b_v,
    w_o, b_o,
    w_mlp_in, b_mlp_in, w_mlp_out, b_mlp_out,
    embed_out,
};
inline constexpr std::size_t kProjectorTensorCount = 15;

const char* tensor_name(ProjectorTensor t);
std::optional<ProjectorTensor> parse_tensor_name(std::string_view name);

// Parameters, also reused as the gradient container. Every mutable access
// stamps a fresh version id so tapes recorded earlier are detected as stale.
class ProjectorParams {
public:
    static ProjectorParams zeros(const ProjectorConfig& config);
    // Weights ~ N(0, scale^2 / fan_in), biases ~ N(0, 0.1^2 scale^2).
    // identity_init zeroes W_o, b_o, W_2, b_2 so that C' = C.
    static ProjectorParams random(const ProjectorConfig& config, std::uint64_t seed,
                                  bool identity_init, double scale = 1.0);

    const ProjectorConfig& config() const { return config_; }
    std::uint64_t version() const { return version_; }

    const Matrix& tensor(ProjectorTensor t) const { return tensors_[index(t)]; }
    Matrix& mutable_tensor(ProjectorTensor t);

    std::size_t parameter_count() const;
    bool all_finite() const;

    // this += scale * other
    void axpy(double scale, const ProjectorParams& other);

    friend bool operator==(const ProjectorParams& a, const ProjectorParams& b) {
        return a.config_.dim == b.config_.dim && a.config_.d_model == b.config_.d_model &&
               a.config_.mlp_ratio == b.config_.mlp_ratio && a.tensors_ == b.tensors_;
    }

private:
    explicit ProjectorParams(const ProjectorConfig& config);
    static std::size_t index(ProjectorTensor t) { return static_cast<std::size_t>(t); }
    void touch();

    ProjectorConfig config_;
    std::array<Matrix, kProjectorTensorCount> tensors_;
    std::uint64_t version_ = 0;
};

// Activations of one forward pass.
struct ProjectorTape {
    std::uint64_t params_version = 0;
    Matrix base;  // C
    Matrix h0, q, k, v, scores, attended, d1, h1, pre, u, d2;  // pre: MLP input before tanh
    Matrix output;  // C'
};

struct Projection {
    Codebook codebook;  // C'
    ProjectorTape tape;
};

Projection project(const ProjectorParams& params, const Codebook& base);

struct EmbeddingLoss {
    double loss = 0.0;
    std::vector<double> gradient;  // w.r.t. c'_winner
};
// |c' - e_x|^2 and its gradient 2 (c' - e_x).
EmbeddingLoss embedding_loss(std::span<const double> c_prime_winner,
                             std::span<const double> e_x);

// Reverse mode through the tape. `upstream` is dL/dC' (K x d). The base
// codebook is frozen and receives no gradient.
ProjectorParams backward(const ProjectorParams& params, const ProjectorTape& tape,
                         const Matrix& upstream);

struct TransVqStepReport {
    double loss_before = 0.0;
    double loss_after = 0.0;
    Matrix before;                        // C' before the step
    Matrix after;                         // C' after the step
    std::vector<double> displacement_norms;  // |delta c'_j| per row
};

// One plain gradient-descent step on the winner-row embedding loss.
TransVqStepReport train_step(ProjectorParams& params, const Codebook& base,
                             std::span<const double> e_x, std::size_t winner, double lr);

// Test hook: multiply one tensor's analytic gradient before comparison.
struct GradientFault {
    ProjectorTensor tensor = ProjectorTensor::w_q;
    double factor = 2.0;
};

struct GradientCheckResult {
    double max_relative_error = 0.0;
    ProjectorTensor worst_tensor = ProjectorTensor::embed_in;
    std::size_t worst_index = 0;
};

// Compares backward() against central differences of the probe loss
// L = <R, C'> with R ~ N(0, 1) drawn from probe_seed. The difference
// quotients are screened in long double and re-evaluated in quad precision
// where they disagree with the analytic value.
GradientCheckResult gradient_check(const ProjectorParams& params, const Codebook& base,
                                   double epsilon, std::uint64_t probe_seed = 0,
                                   std::optional<GradientFault> fault = std::nullopt);

// Text format, lossless at full double precision:
//   driftvq-projector 1
//   dim <d> d_model <m> mlp_ratio <r>
//   <tensor-name> <rows> <cols>
//   <values, one row per line>
void save_params(std::ostream& out, const ProjectorParams& params);
ProjectorParams load_params(std::istream& in);

}  // namespace driftvq
