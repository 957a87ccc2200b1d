#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "driftvq/core.hpp"
#include "driftvq/streams.hpp"
#include "driftvq/updaters.hpp"

namespace driftvq {

enum class CodebookInit { gaussian, lloyd, kmeans_plus_plus, random_sample };

std::string to_string(CodebookInit init);

struct TransVqRuleConfig {
    std::size_t d_model = 16;
    std::size_t mlp_ratio = 2;
    double lr = 0.2;
    double init_scale = 1.0;
    // Global gradient-norm clip per step; 0 disables.
    double clip_norm = 1.0;
};

struct ExperimentConfig {
    StreamConfig stream;  // stream.seed is replaced by a value derived from `seed`
    std::size_t k = 16;
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    UpdateRule rule;
    TransVqRuleConfig transvq;
    CodebookInit init = CodebookInit::gaussian;
    std::uint64_t seed = 0;
    std::size_t snapshot_count = 5;

    void validate() const;
    // "translation", "expansion", "shrink" or "split".
    std::string process_label() const;
};

// Toy-demo settings for one of "translation", "expansion", "shrink", "split"
// and a rule. Step sizes and temperatures are per-rule presets. Throws
// ConfigError on an unknown demo name.
ExperimentConfig demo_config(std::string_view demo, RuleKind rule, std::uint64_t seed = 0);

struct TraceRecord {
    std::size_t step = 0;   // 0 is the initial state
    std::size_t epoch = 0;  // epoch the step belongs to (1-based; 0 for the initial record)
    std::vector<double> state;
    Matrix codebook;
    std::vector<std::size_t> batch_indices;
    std::vector<std::size_t> winners;  // pre-update assignment of the batch
    double distortion_current = 0.0;   // vs the drifted data after the step
    double distortion_target = 0.0;    // vs the fixed targets
    double utilization = 0.0;
    std::size_t dead_codes = 0;
    // ntk_exact only: max over codes of |applied transport - true encoder change|.
    double transport_error = 0.0;

    friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

// Utilization of a step counts the codes hit by training assignments over
// the most recent epoch's worth of batches (fewer during the first epoch).
// The initial record uses one assignment pass over the drifted data.
struct TraceLog {
    ExperimentConfig config;
    DriftProcess process;  // initial process; set_state() replays any step
    std::size_t steps_per_epoch = 0;
    std::vector<TraceRecord> records;
    std::vector<std::size_t> snapshot_steps;

    const TraceRecord& at_step(std::size_t step) const;
    const TraceRecord& final_record() const { return records.back(); }
    std::string rule_label() const;
};

// ceil(i * total / count) for i = 1..count; empty when total == 0.
std::vector<std::size_t> snapshot_steps(std::size_t total_steps, std::size_t count);

TraceLog run_experiment(const ExperimentConfig& config);

struct SweepRow {
    std::size_t batch_size = 0;
    std::size_t steps = 0;
    double final_distortion = 0.0;  // vs the drifted data
    double final_distortion_target = 0.0;
    double final_utilization = 0.0;
};

// One run per batch size with the same seed and epoch count, so every run
// processes the same number of samples.
std::vector<SweepRow> batch_size_sweep(const ExperimentConfig& base,
                                       const std::vector<std::size_t>& batch_sizes);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct RuleSummary {
    std::string rule;
    std::vector<double> utilization;
    std::vector<double> distortion_current;
    std::vector<double> distortion_target;
    double final_utilization = 0.0;
    double final_distortion_current = 0.0;
    double final_distortion_target = 0.0;
    double max_transport_error = 0.0;
};

struct ComparisonReport {
    std::string process;
    std::vector<RuleSummary> rules;
};

ComparisonReport compare_rules(const ExperimentConfig& config,
                               const std::vector<UpdateRule>& rules);

// Columns: step,rule,process,B,theta_or_A,distortion_current,distortion_target,
// utilization,dead_codes. theta_or_A is the flattened state joined with ';'.
void write_trace_csv(std::ostream& out, const TraceLog& log);
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);
void write_comparison_csv(std::ostream& out, const ComparisonReport& report);

// Shortest round-trip decimal form; keeps CSV output byte-stable.
std::string format_number(double v);

}  // namespace driftvq
