#include "driftvq/updaters.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "driftvq/kmeans.hpp"

namespace driftvq {

std::string to_string(RuleKind kind) {
    switch (kind) {
        case RuleKind::vanilla_sa: return "vanilla_sa";
        case RuleKind::ema: return "ema";
        case RuleKind::nsvq_softmax: return "nsvq_softmax";
        case RuleKind::nsvq_rbf: return "nsvq_rbf";
        case RuleKind::delta_e_weighted: return "delta_e_weighted";
        case RuleKind::modified_ste: return "modified_ste";
        case RuleKind::ntk_exact: return "ntk_exact";
        case RuleKind::transvq: return "transvq";
    }
    return "unknown";
}

std::optional<RuleKind> parse_rule_kind(std::string_view name) {
    std::string key(name);
    std::replace(key.begin(), key.end(), '-', '_');
    if (key == "vanilla") return RuleKind::vanilla_sa;
    if (key == "delta_e") return RuleKind::delta_e_weighted;
    for (RuleKind k : {RuleKind::vanilla_sa, RuleKind::ema, RuleKind::nsvq_softmax,
                       RuleKind::nsvq_rbf, RuleKind::delta_e_weighted, RuleKind::modified_ste,
                       RuleKind::ntk_exact, RuleKind::transvq}) {
        if (key == to_string(k)) return k;
    }
    return std::nullopt;
}

void UpdateRule::validate() const {
    auto in_unit = [](double v) { return v > 0.0 && v <= 1.0; };
    if (!in_unit(eta)) throw InvalidInput("UpdateRule: eta must be in (0, 1]");
    if (!in_unit(alpha)) throw InvalidInput("UpdateRule: alpha must be in (0, 1]");
    if (!(tau > 0.0)) throw InvalidInput("UpdateRule: tau must be > 0");
    if (!(two_sigma_sq > 0.0)) throw InvalidInput("UpdateRule: two_sigma_sq must be > 0");
    if (!(lambda >= 0.0)) throw InvalidInput("UpdateRule: lambda must be >= 0");
    if (d_eff != 0.0 && !(d_eff >= 1.0)) throw InvalidInput("UpdateRule: d_eff must be >= 1");
    const Schedules& s = schedules;
    if (!(s.eta_decay > 0.0) || !(s.tau_decay > 0.0) || !(s.two_sigma_sq_decay > 0.0)) {
        throw InvalidInput("UpdateRule: schedule factors must be > 0");
    }
}

namespace {

StepReport make_report(const Codebook& cb) {
    return {std::nullopt, Matrix(cb.size(), cb.dim()), std::vector<double>(cb.size(), 0.0)};
}

void check_point(std::span<const double> x, const Codebook& cb, const char* who) {
    if (x.size() != cb.dim()) throw ShapeError(std::string(who) + ": dimension mismatch");
}

// code += scale * dir; the report keeps the applied step itself.
void move(Codebook& cb, StepReport& rep, std::size_t k, std::span<const double> dir,
          double scale) {
    auto c = cb.mutable_code(k);
    auto d = rep.displacement.row(k);
    for (std::size_t j = 0; j < c.size(); ++j) {
        d[j] = scale * dir[j];
        c[j] += d[j];
    }
}

std::vector<double> diff(std::span<const double> a, std::span<const double> b) {
    std::vector<double> out(a.size());
    for (std::size_t j = 0; j < a.size(); ++j) out[j] = a[j] - b[j];
    return out;
}

}  // namespace

double rbf_weight(double squared_distance, double two_sigma_sq) {
    if (!(two_sigma_sq > 0.0)) throw InvalidInput("rbf_weight: two_sigma_sq must be > 0");
    if (squared_distance < 0.0) throw InvalidInput("rbf_weight: negative distance");
    return std::exp(-squared_distance / two_sigma_sq);
}

std::vector<double> softmax_weights(const Codebook& codebook, std::size_t winner, double tau) {
    if (!(tau > 0.0)) throw InvalidInput("softmax_weights: tau must be > 0");
    if (winner >= codebook.size()) throw InvalidInput("softmax_weights: winner out of range");
    // The winner's logit is exp(0) = 1 and every other logit is <= 1, so the
    // normalizer lies in [1, K] and nothing overflows.
    std::vector<double> w(codebook.size());
    double z = 0.0;
    for (std::size_t k = 0; k < codebook.size(); ++k) {
        w[k] = std::exp(-squared_distance(codebook.code(k), codebook.code(winner)) / tau);
        z += w[k];
    }
    for (double& v : w) v /= z;
    return w;
}

StepReport vanilla_sa_step(Codebook& codebook, std::span<const double> x, double eta) {
    check_point(x, codebook, "vanilla_sa_step");
    StepReport rep = make_report(codebook);
    const Nearest n = nearest_code(x, codebook);
    rep.winner = n.index;
    rep.weights[n.index] = 1.0;
    move(codebook, rep, n.index, diff(x, codebook.code(n.index)), eta);
    return rep;
}

StepReport ema_batch_step(Codebook& codebook, const Matrix& batch, double alpha) {
    if (batch.rows() == 0) throw InvalidInput("ema_batch_step: empty batch");
    StepReport rep = make_report(codebook);
    const CellMeans cm = cell_means(batch, codebook);
    for (std::size_t k = 0; k < codebook.size(); ++k) {
        if (cm.counts[k] == 0) continue;
        rep.weights[k] = alpha;
        // (1 - a) c + a m  ==  c + a (m - c)
        move(codebook, rep, k, diff(cm.means.row(k), codebook.code(k)), alpha);
    }
    return rep;
}

StepReport nsvq_softmax_step(Codebook& codebook, std::span<const double> x, double lr,
                             double tau) {
    check_point(x, codebook, "nsvq_softmax_step");
    StepReport rep = make_report(codebook);
    const std::size_t w = nearest_code(x, codebook).index;
    rep.winner = w;
    const std::vector<double> omega = softmax_weights(codebook, w, tau);
    // All directions from the pre-update codebook.
    Matrix dirs(codebook.size(), codebook.dim());
    for (std::size_t k = 0; k < codebook.size(); ++k) {
        const auto d = diff(x, codebook.code(k));
        std::copy(d.begin(), d.end(), dirs.row(k).begin());
    }
    for (std::size_t k = 0; k < codebook.size(); ++k) {
        rep.weights[k] = k == w ? 1.0 : omega[k];
        move(codebook, rep, k, dirs.row(k), lr * rep.weights[k]);
    }
    return rep;
}

StepReport nsvq_rbf_step(Codebook& codebook, std::span<const double> e_x, double two_sigma_sq,
                         double eta) {
    check_point(e_x, codebook, "nsvq_rbf_step");
    StepReport rep = make_report(codebook);
    const std::size_t w = nearest_code(e_x, codebook).index;
    rep.winner = w;
    Matrix dirs(codebook.size(), codebook.dim());
    for (std::size_t k = 0; k < codebook.size(); ++k) {
        const auto d = diff(e_x, codebook.code(k));
        std::copy(d.begin(), d.end(), dirs.row(k).begin());
        rep.weights[k] =
            k == w ? 1.0 : rbf_weight(squared_distance(e_x, codebook.code(k)), two_sigma_sq);
    }
    for (std::size_t k = 0; k < codebook.size(); ++k) {
        move(codebook, rep, k, dirs.row(k), eta * rep.weights[k]);
    }
    return rep;
}

StepReport delta_e_weighted_step(Codebook& codebook, std::span<const double> x_i,
                                 std::span<const double> e_step, double two_sigma_sq,
                                 double eta) {
    check_point(x_i, codebook, "delta_e_weighted_step");
    check_point(e_step, codebook, "delta_e_weighted_step");
    StepReport rep = make_report(codebook);
    const std::size_t w = nearest_code(x_i, codebook).index;
    rep.winner = w;
    for (std::size_t k = 0; k < codebook.size(); ++k) {
        if (k == w) continue;
        rep.weights[k] = rbf_weight(squared_distance(codebook.code(k), x_i), two_sigma_sq);
    }
    rep.weights[w] = 1.0;
    for (std::size_t k = 0; k < codebook.size(); ++k) {
        if (k == w) continue;
        move(codebook, rep, k, e_step, rep.weights[k]);
    }
    move(codebook, rep, w, diff(x_i, codebook.code(w)), eta);
    return rep;
}

StepReport modified_ste_step(Codebook& codebook, std::span<const double> e_x,
                             std::span<const double> enc_grad, double eta, double lambda,
                             double d_eff) {
    check_point(e_x, codebook, "modified_ste_step");
    check_point(enc_grad, codebook, "modified_ste_step");
    if (!(d_eff >= 1.0)) throw InvalidInput("modified_ste_step: d_eff must be >= 1");
    StepReport rep = make_report(codebook);
    const std::size_t w = nearest_code(e_x, codebook).index;
    rep.winner = w;
    rep.weights[w] = 1.0;
    std::vector<double> dir(codebook.dim());
    const auto c = codebook.code(w);
    for (std::size_t j = 0; j < dir.size(); ++j) {
        dir[j] = (2.0 / d_eff) * (e_x[j] - c[j]) + (2.0 * lambda / d_eff) * enc_grad[j];
    }
    move(codebook, rep, w, dir, eta);
    return rep;
}

namespace {

std::vector<double> jacobian_apply(const DriftProcess& process, std::span<const double> at,
                                   std::span<const double> delta_state) {
    const Matrix j = process.exact_jacobian(at);
    std::vector<double> out(j.rows(), 0.0);
    for (std::size_t r = 0; r < j.rows(); ++r) {
        for (std::size_t s = 0; s < j.cols(); ++s) out[r] += j(r, s) * delta_state[s];
    }
    return out;
}

}  // namespace

StepReport ntk_exact_step(Codebook& codebook, const DriftProcess& process,
                          std::span<const double> x, std::span<const double> delta_state,
                          double eta) {
    check_point(x, codebook, "ntk_exact_step");
    if (process.dim() != codebook.dim() || delta_state.size() != process.state_dim()) {
        throw ShapeError("ntk_exact_step: process/state dimension mismatch");
    }
    StepReport rep = make_report(codebook);
    const std::size_t w = nearest_code(x, codebook).index;
    rep.winner = w;
    // Jacobians from the pre-update codebook.
    Matrix moves(codebook.size(), codebook.dim());
    for (std::size_t k = 0; k < codebook.size(); ++k) {
        if (k == w) continue;
        const auto m = jacobian_apply(process, codebook.code(k), delta_state);
        std::copy(m.begin(), m.end(), moves.row(k).begin());
        rep.weights[k] = 1.0;
    }
    rep.weights[w] = 1.0;
    for (std::size_t k = 0; k < codebook.size(); ++k) {
        if (k == w) continue;
        move(codebook, rep, k, moves.row(k), 1.0);
    }
    move(codebook, rep, w, diff(x, codebook.code(w)), eta);
    return rep;
}

Matrix ntk_transport(Codebook& codebook, const DriftProcess& process,
                     std::span<const double> delta_state) {
    if (process.dim() != codebook.dim() || delta_state.size() != process.state_dim()) {
        throw ShapeError("ntk_transport: process/state dimension mismatch");
    }
    StepReport rep = make_report(codebook);
    Matrix moves(codebook.size(), codebook.dim());
    for (std::size_t k = 0; k < codebook.size(); ++k) {
        const auto m = jacobian_apply(process, codebook.code(k), delta_state);
        std::copy(m.begin(), m.end(), moves.row(k).begin());
    }
    for (std::size_t k = 0; k < codebook.size(); ++k) move(codebook, rep, k, moves.row(k), 1.0);
    return rep.displacement;
}

UpdateRule apply_schedules(const UpdateRule& base, std::size_t epoch) {
    UpdateRule out = base;
    const auto e = static_cast<double>(epoch);
    // Long runs would underflow tau (halved each epoch) to 0; stay positive.
    auto decay = [e](double v, double factor) {
        return std::max(v * std::pow(factor, e), std::numeric_limits<double>::min());
    };
    out.eta = decay(base.eta, base.schedules.eta_decay);
    out.tau = decay(base.tau, base.schedules.tau_decay);
    out.two_sigma_sq = decay(base.two_sigma_sq, base.schedules.two_sigma_sq_decay);
    return out;
}

}  // namespace driftvq
