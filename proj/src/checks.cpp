#include "driftvq/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "driftvq/harness.hpp"
#include "driftvq/kmeans.hpp"
#include "driftvq/updaters.hpp"

namespace driftvq {

namespace {

struct Verdict {
    bool passed = false;
    std::string detail;
};

struct CheckEntry {
    std::string name;
    std::string summary;
    double budget;
    std::function<Verdict(const CheckOptions&)> body;
};

std::string num(double v) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
}

Matrix gaussian_points(std::size_t n, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(n, d);
    for (double& v : m.flat()) v = normal(rng);
    return m;
}

double max_row_norm(const Matrix& m) {
    double worst = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double acc = 0.0;
        for (double v : m.row(i)) acc += v * v;
        worst = std::max(worst, std::sqrt(acc));
    }
    return worst;
}

Verdict fixed_point(const CheckOptions&) {
    const Matrix x = gaussian_points(1500, 2, 0);
    const LloydResult fit = lloyd(x, 16, SeededInit{InitStrategy::kmeans_plus_plus, 0},
                                  LloydOptions{500, 1e-8});
    Codebook cb = fit.codebook;
    const StepReport step = ema_batch_step(cb, x, 1.0);
    const double moved = max_row_norm(step.displacement);
    return {fit.converged && moved < 1e-7,
            "converged=" + std::string(fit.converged ? "yes" : "no") + " after " +
                std::to_string(fit.iterations) + " iterations, max move " + num(moved)};
}

Verdict lyapunov(const CheckOptions&) {
    double worst_rise = -std::numeric_limits<double>::infinity();
    std::size_t bad = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Matrix x = gaussian_points(1500, 2, 1000 + seed);
        const InitStrategy s = seed % 2 ? InitStrategy::random_sample : InitStrategy::kmeans_plus_plus;
        const LloydResult fit = lloyd(x, 16, SeededInit{s, seed});
        const auto& h = fit.distortion_history;
        for (std::size_t i = 1; i < h.size(); ++i) {
            worst_rise = std::max(worst_rise, h[i] - h[i - 1]);
            if (h[i] > h[i - 1] + 1e-12) ++bad;
        }
    }
    return {bad == 0, "100 seeds, " + std::to_string(bad) + " increases, largest step change " +
                          num(worst_rise)};
}

Verdict ntk_exactness(const CheckOptions&) {
    ExperimentConfig cfg = demo_config("translation", RuleKind::ntk_exact, 0);
    cfg.init = CodebookInit::lloyd;
    const TraceLog log = run_experiment(cfg);
    double worst_err = 0.0;
    double worst_util = 1.0;
    DriftProcess p = log.process;
    for (const TraceRecord& r : log.records) {
        worst_err = std::max(worst_err, r.transport_error);
        p.set_state(r.state);
        // Full pass: every code must own part of the drifted cloud at every step.
        const Codebook cb(r.codebook);
        worst_util = std::min(worst_util, evaluate(p.drifted_all(), cb).utilization);
    }
    return {worst_err < 1e-9 && worst_util == 1.0,
            std::to_string(log.records.size() - 1) + " steps, max tracking error " +
                num(worst_err) + ", min utilization " + num(worst_util)};
}

Verdict dead_code(const CheckOptions&) {
    const TraceLog ema = run_experiment(demo_config("translation", RuleKind::ema, 0));
    const TraceLog ns = run_experiment(demo_config("translation", RuleKind::nsvq_softmax, 0));
    const TraceRecord& a = ema.final_record();
    const TraceRecord& b = ns.final_record();
    const bool ok = a.utilization < 1.0 && a.utilization == kGoldenEmaUtilization &&
                    b.utilization == 1.0 && b.distortion_target < a.distortion_target;
    return {ok, "ema utilization " + num(a.utilization) + " (golden " +
                    num(kGoldenEmaUtilization) + "), distortion " + num(a.distortion_target) +
                    "; nsvq-softmax utilization " + num(b.utilization) + ", distortion " +
                    num(b.distortion_target)};
}

Verdict gradcheck(const CheckOptions& options) {
    std::optional<GradientFault> fault;
    if (options.corrupt_gradient) fault = GradientFault{*options.corrupt_gradient, 2.0};
    double worst = 0.0;
    std::string where;
    std::uint64_t seed = 0;
    for (std::size_t k : {1, 4, 16}) {
        for (std::size_t d : {2, 3}) {
            for (std::size_t m : {8, 16}) {
                ++seed;
                const ProjectorParams params =
                    ProjectorParams::random(ProjectorConfig{d, m, 2}, seed, false);
                const Codebook base(gaussian_points(k, d, 500 + seed));
                const GradientCheckResult r = gradient_check(params, base, 1e-5, seed, fault);
                if (r.max_relative_error >= worst) {
                    worst = r.max_relative_error;
                    where = "K=" + std::to_string(k) + " d=" + std::to_string(d) +
                            " d_model=" + std::to_string(m) + " " + tensor_name(r.worst_tensor);
                }
            }
        }
    }
    return {worst <= 1e-5, "12 shapes, max relative error " + num(worst) + " at " + where};
}

Verdict propagation(const CheckOptions&) {
    double smallest = std::numeric_limits<double>::infinity();
    bool base_intact = true;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        ProjectorParams params = ProjectorParams::random(ProjectorConfig::toy(2), seed, false);
        const Codebook base(gaussian_points(16, 2, 700 + seed));
        const Matrix frozen = base.codes();
        const Matrix e = gaussian_points(1, 2, 900 + seed);
        const std::size_t winner = nearest_code(e.row(0), project(params, base).codebook).index;
        const TransVqStepReport r = train_step(params, base, e.row(0), winner, 0.05);
        for (double n : r.displacement_norms) smallest = std::min(smallest, n);
        base_intact = base_intact && base.codes() == frozen;
    }
    return {smallest > 1e-12 && base_intact,
            "20 seeds, K=16, smallest row displacement " + num(smallest) +
                (base_intact ? ", base unchanged" : ", base modified")};
}

Verdict identity_init(const CheckOptions&) {
    double worst = 0.0;
    std::uint64_t seed = 0;
    for (std::size_t k : {1, 4, 16}) {
        for (std::size_t d : {2, 3}) {
            for (std::size_t m : {8, 16, 256}) {
                ++seed;
                const ProjectorParams params =
                    ProjectorParams::random(ProjectorConfig{d, m, 2}, seed, true);
                const Codebook base(gaussian_points(k, d, 300 + seed));
                const Matrix out = project(params, base).codebook.codes();
                for (std::size_t i = 0; i < out.flat().size(); ++i) {
                    worst = std::max(worst, std::abs(out.flat()[i] - base.codes().flat()[i]));
                }
            }
        }
    }
    return {worst == 0.0, "18 shapes, max |C' - C| = " + num(worst)};
}

Verdict batch_size(const CheckOptions&) {
    const std::vector<std::size_t> sizes{1, 4, 16, 64};
    std::vector<double> rhos;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto rows = batch_size_sweep(demo_config("translation", RuleKind::ema, seed), sizes);
        std::vector<double> b, dist;
        for (const SweepRow& r : rows) {
            b.push_back(static_cast<double>(r.batch_size));
            dist.push_back(r.final_distortion);
        }
        rhos.push_back(spearman(b, dist));
    }
    std::sort(rhos.begin(), rhos.end());
    const double median = 0.5 * (rhos[4] + rhos[5]);
    return {median <= -0.8, "10 seeds, median Spearman(B, final distortion) " + num(median) +
                                ", range [" + num(rhos.front()) + ", " + num(rhos.back()) + "]"};
}

Verdict weight_kernels(const CheckOptions&) {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::size_t failures = 0;
    const std::size_t cases = 10000;
    for (std::size_t c = 0; c < cases; ++c) {
        bool ok = true;
        // RBF kernel. Distances are either exactly 0 or at least 1e-6 * 2s^2,
        // so exp(-d) is distinguishable from 1 in double precision.
        const double bw = std::exp(std::log(0.01) + unit(rng) * std::log(1e4));
        const double r1 = 1e-6 + unit(rng) * 40.0;
        const double r2 = r1 * (1.01 + unit(rng));
        const double w0 = rbf_weight(0.0, bw);
        const double w1 = rbf_weight(r1 * bw, bw);
        const double w2 = rbf_weight(r2 * bw, bw);
        ok = ok && w0 == 1.0 && w1 > 0.0 && w1 < 1.0 && w2 > 0.0 && w2 < w1;

        // Softmax kernel over a random codebook.
        const std::size_t k = 2 + c % 7;
        const std::size_t d = 1 + c % 3;
        Matrix codes(k, d);
        for (double& v : codes.flat()) v = normal(rng);
        const double tau = 0.5 + 4.5 * unit(rng);
        const std::size_t w = c % k;
        const Codebook cb(codes);
        const auto omega = softmax_weights(cb, w, tau);
        double sum = 0.0;
        for (double o : omega) {
            ok = ok && o > 0.0 && o <= 1.0;
            sum += o;
        }
        ok = ok && std::abs(sum - 1.0) < 1e-12;
        const std::size_t j = (w + 1 + c % (k - 1)) % k;
        Matrix farther = codes;
        for (std::size_t t = 0; t < d; ++t) {
            farther(j, t) = codes(w, t) + (1.5 + unit(rng)) * (codes(j, t) - codes(w, t));
        }
        const auto omega2 = softmax_weights(Codebook(farther), w, tau);
        ok = ok && omega2[j] < omega[j];

        // Weights reported by the RBF-weighted steps.
        std::vector<double> x(d), e_step(d);
        for (double& v : x) v = normal(rng);
        for (double& v : e_step) v = 0.1 * normal(rng);
        // Bandwidth floor keeps |c - x|^2 / 2s^2 well below exp underflow (~745).
        const double step_bw = 0.1 + 10.0 * unit(rng);
        Codebook a = cb, b = cb;
        const StepReport rs = nsvq_rbf_step(a, x, step_bw, 0.1);
        const StepReport ds = delta_e_weighted_step(b, x, e_step, step_bw, 0.1);
        for (std::size_t q = 0; q < k; ++q) {
            if (q == *rs.winner) continue;
            const double expect = rbf_weight(squared_distance(cb.code(q), x), step_bw);
            ok = ok && rs.weights[q] > 0.0 && rs.weights[q] <= 1.0 && rs.weights[q] == expect &&
                 ds.weights[q] == expect;
        }
        if (!ok) ++failures;
    }
    return {failures == 0,
            std::to_string(cases) + " cases, " + std::to_string(failures) + " failures"};
}

Verdict determinism(const CheckOptions&) {
    std::size_t mismatches = 0;
    for (const char* demo : {"translation", "expansion", "shrink", "split"}) {
        for (RuleKind rule : {RuleKind::ema, RuleKind::nsvq_softmax, RuleKind::transvq}) {
            std::ostringstream first, second;
            write_trace_csv(first, run_experiment(demo_config(demo, rule, 7)));
            write_trace_csv(second, run_experiment(demo_config(demo, rule, 7)));
            if (first.str() != second.str()) ++mismatches;
        }
    }
    std::ostringstream s1, s2;
    write_sweep_csv(s1, batch_size_sweep(demo_config("split", RuleKind::vanilla_sa, 3), {8, 64}));
    write_sweep_csv(s2, batch_size_sweep(demo_config("split", RuleKind::vanilla_sa, 3), {8, 64}));
    if (s1.str() != s2.str()) ++mismatches;
    return {mismatches == 0, "13 repeated runs, " + std::to_string(mismatches) + " differ"};
}

const std::vector<CheckEntry>& registry() {
    static const std::vector<CheckEntry> entries{
        {"fixed-point", "converged Lloyd codebook is a fixed point of the full-batch update", 1.0,
         fixed_point},
        {"lyapunov", "Lloyd distortion never increases (100 seeds)", 10.0, lyapunov},
        {"ntk-exactness", "exact NTK transport tracks translation drift with every code in use",
         5.0, ntk_exactness},
        {"dead-code", "EMA collapses on translation drift, NS-VQ softmax keeps every code", 30.0,
         dead_code},
        {"gradcheck", "projector gradients match central differences", 30.0, gradcheck},
        {"propagation", "a winner-only projector step moves every code", 5.0, propagation},
        {"identity-init", "zeroed output projections give C' = C exactly", 1.0, identity_init},
        {"batch-size", "larger batches give lower final distortion under drift", 120.0,
         batch_size},
        {"weight-kernels", "kernel weights lie in (0,1] and decay with distance", 0.0,
         weight_kernels},
        {"determinism", "same seed gives byte-identical CSV", 0.0, determinism},
    };
    return entries;
}

const CheckEntry& lookup(std::string_view name) {
    for (const CheckEntry& s : registry()) {
        if (s.name == name) return s;
    }
    throw InvalidInput("unknown check '" + std::string(name) + "'");
}

}  // namespace

const std::vector<std::string>& check_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const CheckEntry& s : registry()) out.push_back(s.name);
        return out;
    }();
    return names;
}

std::string check_summary(std::string_view name) { return lookup(name).summary; }

CheckResult run_check(std::string_view name, const CheckOptions& options) {
    const CheckEntry& entry = lookup(name);
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
        v = entry.body(options);
    } catch (const std::exception& e) {
        v = {false, std::string("threw: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CheckResult r{entry.name, v.passed, v.detail, secs, entry.budget};
    if (entry.budget > 0.0 && secs > entry.budget) {
        r.passed = false;
        r.detail += "; took " + num(secs) + " s, budget " + num(entry.budget) + " s";
    }
    return r;
}

}  // namespace driftvq
