#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftvq/core.hpp"
#include "driftvq/streams.hpp"

namespace driftvq {

// Codebook update rules. `ntk_exact` is the oracle that propagates the true
// encoder change; `transvq` is driven by the projector in transvq.hpp and is
// listed here so one tag names every rule a run can use.
enum class RuleKind {
    vanilla_sa,
    ema,
    nsvq_softmax,
    nsvq_rbf,
    delta_e_weighted,
    modified_ste,
    ntk_exact,
    transvq,
};

std::string to_string(RuleKind kind);
// Accepts the enum spelling or the dashed CLI spelling ("nsvq-softmax").
std::optional<RuleKind> parse_rule_kind(std::string_view name);

// Multiplicative per-epoch decay factors.
struct Schedules {
    double eta_decay = 0.9;
    double tau_decay = 0.5;
    double two_sigma_sq_decay = 0.9;
};

struct UpdateRule {
    RuleKind kind = RuleKind::ema;
    double eta = 0.1;            // step size ("lr" for the softmax rule)
    double alpha = 0.3;          // EMA mixing
    double tau = 1.0;            // softmax temperature
    double two_sigma_sq = 1.0;   // RBF bandwidth 2*sigma^2
    double lambda = 1.0;         // encoder step size in the delay-free correction
    double d_eff = 0.0;          // 2/d factor; 0 means "use the batch size"
    Schedules schedules;

    // Throws InvalidInput when a hyperparameter is out of its domain.
    void validate() const;
};

struct StepReport {
    std::optional<std::size_t> winner;
    Matrix displacement;          // K x d step applied to each code
    std::vector<double> weights;  // multiplier applied to each code's step
};

// Kernel weights, exposed for property testing.
double rbf_weight(double squared_distance, double two_sigma_sq);
// omega_k = exp(-|c_k - c_w|^2 / tau) / sum_j exp(-|c_j - c_w|^2 / tau), j over
// all codes (the winner contributes exp(0)); sums to 1.
std::vector<double> softmax_weights(const Codebook& codebook, std::size_t winner, double tau);

// c_w += eta (x - c_w); nothing else moves.
StepReport vanilla_sa_step(Codebook& codebook, std::span<const double> x, double eta);

// Each code with samples in the batch mixes toward their mean.
StepReport ema_batch_step(Codebook& codebook, const Matrix& batch, double alpha);

// Winner takes the full lr step; every other code moves lr * omega_k toward x.
StepReport nsvq_softmax_step(Codebook& codebook, std::span<const double> x, double lr,
                             double tau);

// Winner: eta (e_x - c_w). Non-winner j: eta exp(-|e_x - c_j|^2 / 2s^2) (e_x - c_j).
StepReport nsvq_rbf_step(Codebook& codebook, std::span<const double> e_x, double two_sigma_sq,
                         double eta);

// Winner: eta (x_i - c_w). Non-winner n: exp(-|c_n - x_i|^2 / 2s^2) e_step, where
// e_step is the caller's estimate of the encoder change at x_i.
StepReport delta_e_weighted_step(Codebook& codebook, std::span<const double> x_i,
                                 std::span<const double> e_step, double two_sigma_sq,
                                 double eta);

// Winner only: eta [ (2/d)(e_x - c_w) + (2 lambda / d) enc_grad ].
StepReport modified_ste_step(Codebook& codebook, std::span<const double> e_x,
                             std::span<const double> enc_grad, double eta, double lambda,
                             double d_eff);

// Winner: eta (x - c_w). Non-winner j: J(c_j) delta_state, with the code
// vector standing in for the encoder input.
StepReport ntk_exact_step(Codebook& codebook, const DriftProcess& process,
                          std::span<const double> x, std::span<const double> delta_state,
                          double eta);

// Moves every code by J(c_k) delta_state. Returns the K x d displacement.
Matrix ntk_transport(Codebook& codebook, const DriftProcess& process,
                     std::span<const double> delta_state);

// `base` with its schedules applied `epoch` times (epoch 0 is a no-op).
UpdateRule apply_schedules(const UpdateRule& base, std::size_t epoch);

}  // namespace driftvq
