#include "driftvq/harness.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <deque>
#include <numeric>
#include <ostream>
#include <random>

#include "driftvq/kmeans.hpp"
#include "driftvq/transvq.hpp"

namespace driftvq {

std::string to_string(CodebookInit init) {
    switch (init) {
        case CodebookInit::gaussian: return "gaussian";
        case CodebookInit::lloyd: return "lloyd";
        case CodebookInit::kmeans_plus_plus: return "kmeans++";
        case CodebookInit::random_sample: return "random-sample";
    }
    return "unknown";
}

std::string format_number(double v) {
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

void ExperimentConfig::validate() const {
    if (stream.n == 0 || stream.dim == 0) throw ConfigError("config: N and d must be >= 1");
    if (k == 0) throw ConfigError("config: K must be >= 1");
    if (batch_size == 0 || batch_size > stream.n) {
        throw ConfigError("config: batch size must be in [1, N]");
    }
    if (snapshot_count == 0) throw ConfigError("config: snapshot count must be >= 1");
    if (init != CodebookInit::gaussian && k > stream.n) {
        throw ConfigError("config: data-driven init needs N >= K");
    }
    try {
        rule.validate();
    } catch (const InvalidInput& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (rule.kind == RuleKind::transvq &&
        (transvq.d_model == 0 || transvq.mlp_ratio == 0 || !(transvq.lr >= 0.0))) {
        throw ConfigError("config: invalid transvq settings");
    }
}

std::string ExperimentConfig::process_label() const {
    if (stream.kind == DriftKind::scaling) {
        return stream.regime == ScalingRegime::expansion ? "expansion" : "shrink";
    }
    return to_string(stream.kind);
}

ExperimentConfig demo_config(std::string_view demo, RuleKind rule, std::uint64_t seed) {
    ExperimentConfig c;
    if (demo == "translation") {
        c.stream.kind = DriftKind::translation;
    } else if (demo == "expansion") {
        c.stream.kind = DriftKind::scaling;
        c.stream.regime = ScalingRegime::expansion;
    } else if (demo == "shrink") {
        c.stream.kind = DriftKind::scaling;
        c.stream.regime = ScalingRegime::shrink;
    } else if (demo == "split") {
        c.stream.kind = DriftKind::split;
    } else {
        throw ConfigError("unknown demo '" + std::string(demo) + "'");
    }
    c.seed = seed;
    c.rule.kind = rule;
    c.rule.eta = 0.1;
    c.rule.alpha = 0.3;
    // tau = 1 freezes everything but the winner once codes spread out; a
    // wide start lets the halving schedule sharpen it over the run.
    if (rule == RuleKind::nsvq_softmax) c.rule.tau = 50.0;
    return c;
}

const TraceRecord& TraceLog::at_step(std::size_t step) const {
    if (step >= records.size() || records[step].step != step) {
        throw InvalidInput("TraceLog: no record for step " + std::to_string(step));
    }
    return records[step];
}

std::string TraceLog::rule_label() const { return to_string(config.rule.kind); }

std::vector<std::size_t> snapshot_steps(std::size_t total_steps, std::size_t count) {
    std::vector<std::size_t> out;
    if (total_steps == 0) return out;
    for (std::size_t i = 1; i <= count; ++i) {
        out.push_back((i * total_steps + count - 1) / count);
    }
    return out;
}

namespace {

// splitmix64 finalizer; derives independent substream seeds from one run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

Codebook initial_codebook(const ExperimentConfig& cfg, const Matrix& data, std::uint64_t seed) {
    switch (cfg.init) {
        case CodebookInit::gaussian: {
            std::mt19937_64 rng(seed);
            std::normal_distribution<double> normal(0.0, 1.0);
            Matrix c(cfg.k, cfg.stream.dim);
            for (double& v : c.flat()) v = normal(rng);
            return Codebook(std::move(c));
        }
        case CodebookInit::lloyd:
            return lloyd(data, cfg.k, SeededInit{InitStrategy::kmeans_plus_plus, seed}).codebook;
        case CodebookInit::kmeans_plus_plus:
            return init_codebook(data, cfg.k, SeededInit{InitStrategy::kmeans_plus_plus, seed});
        case CodebookInit::random_sample:
            return init_codebook(data, cfg.k, SeededInit{InitStrategy::random_sample, seed});
    }
    throw ConfigError("config: unknown codebook init");
}

std::vector<double> subtract(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

// Sliding usage window over the last `capacity` batches.
class UsageWindow {
public:
    UsageWindow(std::size_t k, std::size_t capacity) : counts_(k, 0), capacity_(capacity) {}

    void push(const std::vector<std::size_t>& winners) {
        for (std::size_t w : winners) ++counts_[w];
        batches_.push_back(winners);
        if (batches_.size() > capacity_) {
            for (std::size_t w : batches_.front()) --counts_[w];
            batches_.pop_front();
        }
    }
    std::size_t used() const {
        return static_cast<std::size_t>(
            std::count_if(counts_.begin(), counts_.end(), [](std::size_t c) { return c > 0; }));
    }
    std::size_t k() const { return counts_.size(); }

private:
    std::vector<std::size_t> counts_;
    std::deque<std::vector<std::size_t>> batches_;
    std::size_t capacity_;
};

double gradient_norm(const ProjectorParams& g) {
    double acc = 0.0;
    for (std::size_t t = 0; t < kProjectorTensorCount; ++t) {
        for (double v : g.tensor(static_cast<ProjectorTensor>(t)).flat()) acc += v * v;
    }
    return std::sqrt(acc);
}

struct TransVqState {
    Codebook base;
    ProjectorParams params;
};

}  // namespace

TraceLog run_experiment(const ExperimentConfig& config) {
    config.validate();

    StreamConfig stream = config.stream;
    stream.seed = derive_seed(config.seed, 0);
    DriftProcess process = DriftProcess::sample_base(stream);

    TraceLog log{config, process, 0, {}, {}};
    const std::size_t n = process.size();
    const std::size_t b = config.batch_size;
    log.steps_per_epoch = (n + b - 1) / b;
    const std::size_t total = log.steps_per_epoch * config.epochs;
    log.snapshot_steps = snapshot_steps(total, config.snapshot_count);

    Codebook codebook = initial_codebook(config, process.drifted_all(), derive_seed(config.seed, 1));
    std::optional<TransVqState> tvq;
    if (config.rule.kind == RuleKind::transvq) {
        const ProjectorConfig pc{config.stream.dim, config.transvq.d_model,
                                 config.transvq.mlp_ratio};
        tvq.emplace(TransVqState{codebook, ProjectorParams::random(pc, derive_seed(config.seed, 3),
                                                                  true, config.transvq.init_scale)});
        codebook = project(tvq->params, tvq->base).codebook;
    }

    {
        TraceRecord init;
        init.state = process.state();
        init.codebook = codebook.codes();
        const Metrics m = evaluate(process.drifted_all(), codebook);
        init.distortion_current = m.distortion;
        init.distortion_target = distortion(process.targets(), codebook);
        init.utilization = m.utilization;
        init.dead_codes = m.dead_codes;
        log.records.push_back(std::move(init));
    }

    std::mt19937_64 order_rng(derive_seed(config.seed, 2));
    UsageWindow window(config.k, log.steps_per_epoch);
    UpdateRule rule = config.rule;
    std::vector<std::size_t> perm(n);
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), order_rng);

        for (std::size_t start = 0; start < n; start += b) {
            const std::size_t stop = std::min(n, start + b);
            const std::span<const std::size_t> idx(perm.data() + start, stop - start);
            const Batch batch = process.next_batch(idx);
            const Matrix targets = process.target_slice(idx);
            const Assignment assigned = assign_batch(batch, codebook);
            const double bsize = static_cast<double>(batch.points.rows());

            // Encoder update of this step; only depends on the batch.
            DriftProcess next = process;
            next.drift_step(batch, targets);

            TraceRecord rec;
            switch (rule.kind) {
                case RuleKind::vanilla_sa:
                    for (std::size_t i = 0; i < batch.points.rows(); ++i) {
                        vanilla_sa_step(codebook, batch.points.row(i), rule.eta);
                    }
                    break;
                case RuleKind::ema:
                    ema_batch_step(codebook, batch.points, rule.alpha);
                    break;
                case RuleKind::nsvq_softmax:
                    for (std::size_t i = 0; i < batch.points.rows(); ++i) {
                        nsvq_softmax_step(codebook, batch.points.row(i), rule.eta, rule.tau);
                    }
                    break;
                case RuleKind::nsvq_rbf:
                    for (std::size_t i = 0; i < batch.points.rows(); ++i) {
                        nsvq_rbf_step(codebook, batch.points.row(i), rule.two_sigma_sq, rule.eta);
                    }
                    break;
                case RuleKind::delta_e_weighted:
                    // Each sample carries a 1/B share of the batch's encoder change.
                    for (std::size_t i = 0; i < batch.points.rows(); ++i) {
                        const auto x0 = process.base().row(idx[i]);
                        std::vector<double> e_step = subtract(next.encode(x0), process.encode(x0));
                        for (double& v : e_step) v /= bsize;
                        delta_e_weighted_step(codebook, batch.points.row(i), e_step,
                                              rule.two_sigma_sq, rule.eta);
                    }
                    break;
                case RuleKind::modified_ste: {
                    // enc_grad per cell: r * mean(Y_b - X_b) over the cell's samples.
                    Matrix cell_grad(config.k, process.dim());
                    std::vector<std::size_t> counts(config.k, 0);
                    for (std::size_t i = 0; i < batch.points.rows(); ++i) {
                        const std::size_t w = assigned.winners[i];
                        ++counts[w];
                        for (std::size_t j = 0; j < process.dim(); ++j) {
                            cell_grad(w, j) += targets(i, j) - batch.points(i, j);
                        }
                    }
                    for (std::size_t c = 0; c < config.k; ++c) {
                        if (counts[c] == 0) continue;
                        for (double& v : cell_grad.row(c)) {
                            v *= process.rate() / static_cast<double>(counts[c]);
                        }
                    }
                    const double d_eff = rule.d_eff > 0.0 ? rule.d_eff : bsize;
                    for (std::size_t i = 0; i < batch.points.rows(); ++i) {
                        modified_ste_step(codebook, batch.points.row(i),
                                          cell_grad.row(assigned.winners[i]), rule.eta,
                                          rule.lambda, d_eff);
                    }
                    break;
                }
                case RuleKind::ntk_exact: {
                    for (std::size_t i = 0; i < batch.points.rows(); ++i) {
                        vanilla_sa_step(codebook, batch.points.row(i), rule.eta);
                    }
                    // The encoder step shifts every cell; transport all codes by it.
                    const Matrix before = codebook.codes();
                    const auto delta = subtract(next.state(), process.state());
                    const Matrix moved = ntk_transport(codebook, process, delta);
                    for (std::size_t c = 0; c < config.k; ++c) {
                        const auto truth = subtract(next.encode(before.row(c)),
                                                    process.encode(before.row(c)));
                        double err = 0.0;
                        for (std::size_t j = 0; j < truth.size(); ++j) {
                            err = std::max(err, std::abs(moved(c, j) - truth[j]));
                        }
                        rec.transport_error = std::max(rec.transport_error, err);
                    }
                    break;
                }
                case RuleKind::transvq: {
                    const Projection proj = project(tvq->params, tvq->base);
                    Matrix upstream(config.k, process.dim());
                    for (std::size_t i = 0; i < batch.points.rows(); ++i) {
                        const std::size_t w = assigned.winners[i];
                        const EmbeddingLoss l =
                            embedding_loss(proj.codebook.code(w), batch.points.row(i));
                        for (std::size_t j = 0; j < process.dim(); ++j) {
                            upstream(w, j) += l.gradient[j] / bsize;
                        }
                    }
                    const ProjectorParams grads = backward(tvq->params, proj.tape, upstream);
                    double scale = config.transvq.lr;
                    const double norm = gradient_norm(grads);
                    if (config.transvq.clip_norm > 0.0 && norm > config.transvq.clip_norm) {
                        scale *= config.transvq.clip_norm / norm;
                    }
                    tvq->params.axpy(-scale, grads);
                    codebook = project(tvq->params, tvq->base).codebook;
                    break;
                }
            }
            codebook.validate();
            process = std::move(next);

            ++step;
            window.push(assigned.winners);
            rec.step = step;
            rec.epoch = epoch + 1;
            rec.state = process.state();
            rec.codebook = codebook.codes();
            rec.batch_indices.assign(idx.begin(), idx.end());
            rec.winners = assigned.winners;
            rec.distortion_current = distortion(process.drifted_all(), codebook);
            rec.distortion_target = distortion(process.targets(), codebook);
            rec.dead_codes = config.k - window.used();
            rec.utilization = static_cast<double>(window.used()) / static_cast<double>(config.k);
            log.records.push_back(std::move(rec));
        }
        rule = apply_schedules(config.rule, epoch + 1);
    }
    return log;
}

std::vector<SweepRow> batch_size_sweep(const ExperimentConfig& base,
                                       const std::vector<std::size_t>& batch_sizes) {
    if (batch_sizes.empty()) throw InvalidInput("batch_size_sweep: no batch sizes");
    std::vector<SweepRow> rows;
    for (std::size_t bs : batch_sizes) {
        ExperimentConfig cfg = base;
        cfg.batch_size = bs;
        const TraceLog log = run_experiment(cfg);
        const TraceRecord& last = log.final_record();
        rows.push_back({bs, last.step, last.distortion_current, last.distortion_target,
                        last.utilization});
    }
    return rows;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw InvalidInput("spearman: need two equal-length series of length >= 2");
    }
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

ComparisonReport compare_rules(const ExperimentConfig& config,
                               const std::vector<UpdateRule>& rules) {
    if (rules.size() < 2) throw InvalidInput("compare_rules: need at least two rules");
    ComparisonReport report{config.process_label(), {}};
    for (const UpdateRule& r : rules) {
        ExperimentConfig cfg = config;
        cfg.rule = r;
        const TraceLog log = run_experiment(cfg);
        RuleSummary s;
        s.rule = to_string(r.kind);
        for (const TraceRecord& rec : log.records) {
            s.utilization.push_back(rec.utilization);
            s.distortion_current.push_back(rec.distortion_current);
            s.distortion_target.push_back(rec.distortion_target);
            s.max_transport_error = std::max(s.max_transport_error, rec.transport_error);
        }
        s.final_utilization = s.utilization.back();
        s.final_distortion_current = s.distortion_current.back();
        s.final_distortion_target = s.distortion_target.back();
        report.rules.push_back(std::move(s));
    }
    return report;
}

void write_trace_csv(std::ostream& out, const TraceLog& log) {
    out << "step,rule,process,B,theta_or_A,distortion_current,distortion_target,utilization,"
           "dead_codes\n";
    const std::string rule = log.rule_label();
    const std::string process = log.config.process_label();
    for (const TraceRecord& r : log.records) {
        out << r.step << ',' << rule << ',' << process << ',' << log.config.batch_size << ',';
        for (std::size_t i = 0; i < r.state.size(); ++i) {
            if (i) out << ';';
            out << format_number(r.state[i]);
        }
        out << ',' << format_number(r.distortion_current) << ','
            << format_number(r.distortion_target) << ',' << format_number(r.utilization) << ','
            << r.dead_codes << '\n';
    }
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << "B,steps,final_distortion,final_distortion_target,final_utilization\n";
    for (const SweepRow& r : rows) {
        out << r.batch_size << ',' << r.steps << ',' << format_number(r.final_distortion) << ','
            << format_number(r.final_distortion_target) << ','
            << format_number(r.final_utilization) << '\n';
    }
}

void write_comparison_csv(std::ostream& out, const ComparisonReport& report) {
    out << "rule,process,step,utilization,distortion_current,distortion_target\n";
    for (const RuleSummary& s : report.rules) {
        for (std::size_t i = 0; i < s.utilization.size(); ++i) {
            out << s.rule << ',' << report.process << ',' << i << ','
                << format_number(s.utilization[i]) << ','
                << format_number(s.distortion_current[i]) << ','
                << format_number(s.distortion_target[i]) << '\n';
        }
    }
}

}  // namespace driftvq
