#include "driftvq/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "driftvq/checks.hpp"
#include "driftvq/harness.hpp"
#include "driftvq/plot.hpp"

namespace driftvq {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kConfigVersion = 1;

// Thrown for bad user input that should exit with the usage code.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Flags {
    std::string demo;
    std::string rule;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    std::vector<std::size_t> batch_sizes;
    std::string out_dir;
    std::string config_path;
    int verbosity = 0;
    std::vector<std::string> only;
    std::string corrupt_gradient;
    bool list = false;
};

// Line/column and the offending line for a byte offset into `text`.
std::string locate(const std::string& text, std::size_t byte) {
    byte = std::min(byte, text.size());
    std::size_t line = 1, start = 0;
    for (std::size_t i = 0; i < byte; ++i) {
        if (text[i] == '\n') {
            ++line;
            start = i + 1;
        }
    }
    std::size_t stop = text.find('\n', start);
    if (stop == std::string::npos) stop = text.size();
    const std::size_t col = byte > start ? byte - start : 1;
    return "line " + std::to_string(line) + ", column " + std::to_string(col) + ": " +
           text.substr(start, stop - start);
}

json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw UsageError("config " + path + ": parse error at " + locate(text, e.byte) + "\n  " +
                         e.what());
    }
    if (!doc.is_object()) throw UsageError("config " + path + ": top level must be an object");
    if (!doc.contains("version")) throw UsageError("config " + path + ": missing \"version\"");
    if (doc["version"] != kConfigVersion) {
        throw UsageError("config " + path + ": unsupported version " + doc["version"].dump() +
                         " (expected " + std::to_string(kConfigVersion) + ")");
    }
    return doc;
}

template <typename T>
void take(const json& obj, const char* key, T& dst, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        dst = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw UsageError("config: bad value for \"" + where + key + "\": " + obj.at(key).dump());
    }
}

void reject_unknown(const json& obj, std::initializer_list<const char*> known,
                    const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
            throw UsageError("config: unknown key \"" + where + key + "\"");
        }
    }
}

RuleKind rule_from(const std::string& name) {
    const auto r = parse_rule_kind(name);
    if (!r) throw UsageError("unknown rule '" + name + "'");
    return *r;
}

CodebookInit init_from(const std::string& name) {
    for (CodebookInit i : {CodebookInit::gaussian, CodebookInit::lloyd,
                           CodebookInit::kmeans_plus_plus, CodebookInit::random_sample}) {
        if (to_string(i) == name) return i;
    }
    throw UsageError("unknown init '" + name + "'");
}

// Preset for (demo, rule), then config-file values, then flags.
ExperimentConfig resolve(const Flags& flags, const json& file, std::string& out_dir,
                         std::vector<std::size_t>* batch_sizes) {
    std::string demo = "translation";
    std::string rule = "ema";
    take(file, "demo", demo, "");
    take(file, "rule", rule, "");
    if (!flags.demo.empty()) demo = flags.demo;
    if (!flags.rule.empty()) rule = flags.rule;

    ExperimentConfig cfg;
    try {
        cfg = demo_config(demo, rule_from(rule));
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }

    reject_unknown(file,
                   {"version", "demo", "rule", "seed", "epochs", "batch_size", "batch_sizes", "k",
                    "init", "out", "snapshots", "rule_params", "transvq", "stream"},
                   "");
    take(file, "seed", cfg.seed, "");
    take(file, "epochs", cfg.epochs, "");
    take(file, "batch_size", cfg.batch_size, "");
    take(file, "k", cfg.k, "");
    take(file, "snapshots", cfg.snapshot_count, "");
    if (file.contains("init")) {
        std::string init;
        take(file, "init", init, "");
        cfg.init = init_from(init);
    }
    take(file, "out", out_dir, "");
    if (batch_sizes) take(file, "batch_sizes", *batch_sizes, "");
    if (file.contains("rule_params")) {
        const json& r = file["rule_params"];
        reject_unknown(r, {"eta", "alpha", "tau", "two_sigma_sq", "lambda", "d_eff"},
                       "rule_params.");
        take(r, "eta", cfg.rule.eta, "rule_params.");
        take(r, "alpha", cfg.rule.alpha, "rule_params.");
        take(r, "tau", cfg.rule.tau, "rule_params.");
        take(r, "two_sigma_sq", cfg.rule.two_sigma_sq, "rule_params.");
        take(r, "lambda", cfg.rule.lambda, "rule_params.");
        take(r, "d_eff", cfg.rule.d_eff, "rule_params.");
    }
    if (file.contains("transvq")) {
        const json& t = file["transvq"];
        reject_unknown(t, {"d_model", "mlp_ratio", "lr", "init_scale", "clip_norm"}, "transvq.");
        take(t, "d_model", cfg.transvq.d_model, "transvq.");
        take(t, "mlp_ratio", cfg.transvq.mlp_ratio, "transvq.");
        take(t, "lr", cfg.transvq.lr, "transvq.");
        take(t, "init_scale", cfg.transvq.init_scale, "transvq.");
        take(t, "clip_norm", cfg.transvq.clip_norm, "transvq.");
    }
    if (file.contains("stream")) {
        const json& s = file["stream"];
        reject_unknown(s, {"n", "noise_scale", "target_offset", "rate"}, "stream.");
        take(s, "n", cfg.stream.n, "stream.");
        take(s, "noise_scale", cfg.stream.noise_scale, "stream.");
        take(s, "target_offset", cfg.stream.target_offset, "stream.");
        take(s, "rate", cfg.stream.rate, "stream.");
    }

    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.epochs) cfg.epochs = *flags.epochs;
    if (flags.batch_size) cfg.batch_size = *flags.batch_size;
    if (!flags.out_dir.empty()) out_dir = flags.out_dir;
    if (batch_sizes && !flags.batch_sizes.empty()) *batch_sizes = flags.batch_sizes;

    if (out_dir.empty()) {
        const char* env = std::getenv(kOutDirEnv);
        out_dir = env && *env ? env : "driftvq-out";
    }
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

fs::path prepare_out(const std::string& dir) {
    const fs::path p(dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec || !fs::is_directory(p)) throw std::runtime_error("cannot create output directory " + dir);
    return p;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
    if (!f) throw std::runtime_error("cannot write " + path.string());
}

int cmd_demo(const Flags& flags, std::ostream& out) {
    const json file = flags.config_path.empty() ? json::object() : load_config(flags.config_path);
    std::string out_dir;
    const ExperimentConfig cfg = resolve(flags, file, out_dir, nullptr);
    const TraceLog log = run_experiment(cfg);
    const fs::path dir = prepare_out(out_dir);

    std::ostringstream csv;
    write_trace_csv(csv, log);
    write_file(dir / "trace.csv", csv.str());
    const PlotFrame frame = run_frame(log);
    for (std::size_t i = 0; i < log.snapshot_steps.size(); ++i) {
        std::ostringstream svg;
        write_snapshot_svg(svg, log, log.snapshot_steps[i], frame);
        write_file(dir / ("snap_" + std::to_string(i + 1) + ".svg"), svg.str());
    }

    if (flags.verbosity > 0) {
        for (std::size_t e = 0; e <= cfg.epochs; ++e) {
            const TraceRecord& r = log.records[e * log.steps_per_epoch];
            out << "epoch " << e << " step " << r.step << " distortion "
                << format_number(r.distortion_current) << " utilization "
                << format_number(r.utilization) << '\n';
        }
    }
    const TraceRecord& last = log.final_record();
    out << log.config.process_label() << " / " << log.rule_label() << ": " << last.step
        << " steps, final distortion " << format_number(last.distortion_current)
        << ", utilization " << format_number(last.utilization) << " (" << last.dead_codes
        << " dead)\n";
    out << "wrote " << (dir / "trace.csv").string() << " and " << log.snapshot_steps.size()
        << " snapshots\n";
    return kExitOk;
}

int cmd_sweep(const Flags& flags, std::ostream& out) {
    const json file = flags.config_path.empty() ? json::object() : load_config(flags.config_path);
    std::string out_dir;
    std::vector<std::size_t> sizes{1, 4, 16, 64};
    const ExperimentConfig cfg = resolve(flags, file, out_dir, &sizes);
    if (sizes.empty()) throw UsageError("sweep: no batch sizes");
    for (std::size_t b : sizes) {
        if (b == 0 || b > cfg.stream.n) {
            throw UsageError("sweep: batch size " + std::to_string(b) + " outside [1, N]");
        }
    }
    const auto rows = batch_size_sweep(cfg, sizes);
    const fs::path dir = prepare_out(out_dir);
    std::ostringstream csv;
    write_sweep_csv(csv, rows);
    write_file(dir / "sweep.csv", csv.str());

    for (const SweepRow& r : rows) {
        out << "B=" << r.batch_size << " steps " << r.steps << " final distortion "
            << format_number(r.final_distortion) << " utilization "
            << format_number(r.final_utilization) << '\n';
    }
    if (rows.size() >= 2) {
        std::vector<double> b, d;
        for (const SweepRow& r : rows) {
            b.push_back(static_cast<double>(r.batch_size));
            d.push_back(r.final_distortion);
        }
        const double rho = spearman(b, d);
        out << "spearman(B, final distortion) = " << format_number(rho)
            << (rho < 0.0 ? "  [negative: larger batches end with lower distortion]"
                          : "  [not negative]")
            << '\n';
    }
    out << "wrote " << (dir / "sweep.csv").string() << '\n';
    return kExitOk;
}

int cmd_check(const Flags& flags, std::ostream& out) {
    if (flags.list) {
        for (const std::string& n : check_names()) out << n << "  " << check_summary(n) << '\n';
        return kExitOk;
    }
    CheckOptions options;
    if (!flags.corrupt_gradient.empty()) {
        options.corrupt_gradient = parse_tensor_name(flags.corrupt_gradient);
        if (!options.corrupt_gradient) {
            throw UsageError("unknown tensor '" + flags.corrupt_gradient + "'");
        }
    }
    std::vector<std::string> names = flags.only.empty() ? check_names() : flags.only;
    for (const std::string& n : names) {
        const auto& all = check_names();
        if (std::find(all.begin(), all.end(), n) == all.end()) {
            throw UsageError("unknown check '" + n + "'");
        }
    }
    bool all_ok = true;
    for (const std::string& n : names) {
        const CheckResult r = run_check(n, options);
        all_ok = all_ok && r.passed;
        std::ostringstream secs;
        secs.precision(2);
        secs << std::fixed << r.seconds;
        out << (r.passed ? "PASS " : "FAIL ") << r.name << "  " << r.detail << "  (" << secs.str()
            << " s)\n";
    }
    return all_ok ? kExitOk : kExitFailure;
}

void add_run_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--rule", f.rule,
                    "ema, vanilla, nsvq-softmax, nsvq-rbf, delta-e, modified-ste, ntk-exact, transvq");
    cmd->add_option("--seed", f.seed, "run seed");
    cmd->add_option("--epochs", f.epochs, "passes over the data");
    cmd->add_option("--batch-size", f.batch_size, "samples per step");
    cmd->add_option("--out", f.out_dir, std::string("output directory (default $") + kOutDirEnv +
                                            " or ./driftvq-out)");
    cmd->add_option("--config", f.config_path, "JSON config file; flags override it")
        ->check(CLI::ExistingFile);
    // Both subcommands share Flags; a plain int flag target gets reset by the
    // subcommand that was not invoked, so count through a callback instead.
    cmd->add_flag_function(
        "-v,--verbose", [&f](std::int64_t n) { f.verbosity += static_cast<int>(n); },
        "per-epoch progress");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"driftvq: online codebook learning under drifting data"};
    app.name("driftvq");
    app.require_subcommand(1);
    Flags flags;

    CLI::App* demo = app.add_subcommand("demo", "run one toy drift experiment");
    demo->add_option("name", flags.demo, "translation, expansion, shrink or split")
        ->required()
        ->check(CLI::IsMember({"translation", "expansion", "shrink", "split"}));
    add_run_flags(demo, flags);

    CLI::App* sweep = app.add_subcommand("sweep", "batch-size sweep with a fixed sample budget");
    sweep->add_option("--demo", flags.demo, "drift process (default translation)")
        ->check(CLI::IsMember({"translation", "expansion", "shrink", "split"}));
    sweep->add_option("--batch-sizes", flags.batch_sizes, "comma separated (default 1,4,16,64)")
        ->delimiter(',');
    add_run_flags(sweep, flags);

    CLI::App* check = app.add_subcommand("check", "run the invariant suite");
    check->add_option("--only", flags.only, "run only the named checks")->delimiter(',');
    check->add_flag("--list", flags.list, "list check names");
    check->add_option("--corrupt-gradient", flags.corrupt_gradient,
                      "debug: double one tensor's analytic gradient in gradcheck");

    std::vector<const char*> argv{"driftvq"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        return kExitUsage;
    }

    try {
        if (demo->parsed()) return cmd_demo(flags, out);
        if (sweep->parsed()) return cmd_sweep(flags, out);
        return cmd_check(flags, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n\n" << app.get_subcommands().front()->help();
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

}  // namespace driftvq
