// fusereg command-line driver: equivalence suites, simulation, nowcasting, model selection, boosting.
#include "fusereg/equivalence.hpp"
#include "fusereg/hierarchy.hpp"
#include "fusereg/io.hpp"
#include "fusereg/kalman.hpp"
#include "fusereg/modelsel.hpp"
#include "fusereg/nowcast.hpp"
#include "fusereg/synthetic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#ifndef FUSEREG_VERSION
#define FUSEREG_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace fusereg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

/// Config or input problem; maps to the usage exit code.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Flags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    std::optional<double> tolerance;
    std::string methods;
};

// ---------------------------------------------------------------------------------------------
// Configuration

json default_config(const std::string& command) {
    if (command == "equivalence") {
        EquivalenceConfig c;
        return {{"seed", c.base_seed},       {"seeds", c.seeds}, {"steps", c.steps},
                {"nonlinear_steps", c.nonlinear_steps}, {"max_k", c.max_k}, {"max_d", c.max_d},
                {"tolerance", c.tolerance}, {"alphas", c.alphas}};
    }
    if (command == "simulate") {
        RandomSystemOptions r;
        return {{"seed", 1},
                {"system", "random"},
                {"k", 2},
                {"d", 3},
                {"steps", 100},
                {"spectral_radius", r.spectral_radius},
                {"q_scale", r.q_scale},
                {"r_scale", r.r_scale},
                {"kf_log", false}};
    }
    if (command == "nowcast") {
        NowcastConfig c;
        BenchmarkOptions b;
        return {{"seed", 1},
                {"trajectory", ""},
                {"hierarchy", ""},
                {"window", c.window},
                {"tune_horizon", c.tune_horizon},
                {"methods", "sf,sf-ridge,sf-lasso,ridge,lasso"},
                {"grid_size", c.grid_size},
                {"grid_min_ratio", c.grid_min_ratio},
                {"lambda_grid", json::array()},
                {"metric", "mae"},
                {"segment_length", c.segment_length},
                {"benchmark_steps", b.steps},
                {"missing_rate", b.missing_rate}};
    }
    if (command == "modelsel") {
        ModelselOptions m;
        return {{"seed", 1},
                {"burn_in", m.burn_in},
                {"steps", m.demo.steps},
                {"min_history", m.min_history},
                {"validation_points", m.validation_points},
                {"lambda_grid_size", m.lambda_grid_size},
                {"lambda_grid_min_ratio", m.lambda_grid_min_ratio}};
    }
    if (command == "boost") {
        BoostConfig b;
        return {{"seed", 1},          {"k", 2},
                {"d", 4},             {"steps", 100},
                {"eta", b.eta},       {"iterations", b.iterations},
                {"init", "zeros"},    {"ridge_lambda", b.ridge_lambda}};
    }
    throw UsageError("unknown command " + command);
}

/// Defaults, overlaid by the config file (or a manifest's config), overlaid by flags.
json effective_config(const std::string& command, const Flags& flags) {
    json cfg = default_config(command);
    if (!flags.config_path.empty()) {
        json file;
        try {
            file = json::parse(read_file(flags.config_path));
        } catch (const json::parse_error& e) {
            throw UsageError("config " + flags.config_path + ": " + e.what());
        } catch (const IoError& e) {
            throw UsageError(e.what());
        }
        if (!file.is_object()) throw UsageError("config must be a JSON object");
        if (file.contains("config") && file.contains("command")) {
            if (file["command"] != command)
                throw UsageError("manifest is for command " + file["command"].get<std::string>());
            file = file["config"];
        }
        for (const auto& [key, value] : file.items()) {
            if (!cfg.contains(key)) throw UsageError("unknown config key '" + key + "' for " + command);
            cfg[key] = value;
        }
    }
    if (flags.seed) cfg["seed"] = *flags.seed;
    if (flags.tolerance) {
        if (!cfg.contains("tolerance")) throw UsageError("--tolerance does not apply to " + command);
        cfg["tolerance"] = *flags.tolerance;
    }
    if (!flags.methods.empty()) {
        if (!cfg.contains("methods")) throw UsageError("--methods does not apply to " + command);
        cfg["methods"] = flags.methods;
    }
    return cfg;
}

template <typename T>
T get(const json& cfg, const std::string& key) {
    try {
        return cfg.at(key).get<T>();
    } catch (const json::exception&) {
        throw UsageError("config key '" + key + "' has the wrong type");
    }
}

Index get_count(const json& cfg, const std::string& key, Index minimum) {
    const auto v = get<long long>(cfg, key);
    if (v < minimum) throw UsageError("config key '" + key + "' must be >= " + std::to_string(minimum));
    return static_cast<Index>(v);
}

unsigned thread_cap() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("FUSEREG_THREADS")) {
        try {
            const long cap = std::stol(env);
            if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
        } catch (const std::exception&) {
            std::cerr << "warning: ignoring FUSEREG_THREADS=" << env << "\n";
        }
    }
    return n;
}

// ---------------------------------------------------------------------------------------------
// Output bookkeeping

/// Tracks files written in a run so a failed run leaves none of them behind.
class OutputSet {
public:
    explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {}

    void write(const std::string& name, const std::string& content) {
        write_file_atomic(dir_ / name, content);
        written_.push_back(name);
    }

    void discard() noexcept {
        for (const auto& name : written_) {
            std::error_code ec;
            fs::remove(dir_ / name, ec);
        }
        written_.clear();
    }

    const std::vector<std::string>& names() const { return written_; }
    const fs::path& dir() const { return dir_; }

private:
    fs::path dir_;
    std::vector<std::string> written_;
};

struct CommandResult {
    int exit_code = kExitOk;
};

// ---------------------------------------------------------------------------------------------
// Commands

CommandResult cmd_equivalence(const json& cfg, OutputSet& out) {
    EquivalenceConfig ec;
    ec.base_seed = get<std::uint64_t>(cfg, "seed");
    ec.seeds = static_cast<long>(get_count(cfg, "seeds", 0));
    ec.steps = get_count(cfg, "steps", 1);
    ec.nonlinear_steps = get_count(cfg, "nonlinear_steps", 1);
    ec.max_k = get_count(cfg, "max_k", 1);
    ec.max_d = get_count(cfg, "max_d", 1);
    ec.tolerance = get<double>(cfg, "tolerance");
    ec.alphas = get<std::vector<double>>(cfg, "alphas");
    ec.threads = thread_cap();
    if (!(ec.tolerance >= 0.0)) throw UsageError("tolerance must be non-negative");
    if (ec.max_d < ec.max_k) throw UsageError("max_d must be >= max_k");
    for (double a : ec.alphas)
        if (!(a > 0.0 && a <= 1.0)) throw UsageError("alphas must lie in (0, 1]");

    json report = {{"tolerance", ec.tolerance}, {"seeds", ec.seeds}, {"suites", json::array()}};
    bool all_passed = true;
    if (ec.seeds == 0) {
        std::cerr << "warning: seeds=0, no equivalence instances were run\n";
    } else {
        for (const auto& s : run_equivalence_suites(ec)) {
            const bool passed = s.passed(ec.tolerance);
            all_passed = all_passed && passed;
            json entry = {{"name", s.name},
                          {"instances", s.instances},
                          {"max_deviation", s.max_deviation},
                          {"failures", s.failures},
                          {"passed", passed}};
            if (s.failures) entry["first_error"] = s.first_error;
            report["suites"].push_back(entry);
            std::cout << (passed ? "PASS " : "FAIL ") << s.name << " max_deviation=" << format_double(s.max_deviation)
                      << "\n";
        }
    }
    report["passed"] = all_passed;
    out.write("equivalence_report.json", report.dump(2) + "\n");
    return {all_passed ? kExitOk : kExitFailure};
}

CommandResult cmd_simulate(const json& cfg, OutputSet& out) {
    const auto seed = get<std::uint64_t>(cfg, "seed");
    const auto system = get<std::string>(cfg, "system");
    Trajectoryd traj;
    if (system == "appendix-demo") {
        AppendixDemoOptions demo;
        demo.steps = get_count(cfg, "steps", 1);
        traj = simulate_appendix_demo(seed, demo);
        if (get<bool>(cfg, "kf_log")) {
            LinearSystem<double> sys{MatrixXd::Constant(1, 1, 0.5), appendix_demo_map(),
                                     MatrixXd::Constant(1, 1, demo.process_variance),
                                     demo.measurement_variance * MatrixXd::Identity(4, 4)};
            out.write("kf_log.csv", kf_log_csv(run_kf<double>(sys, VectorXd::Zero(1), 1e3 * MatrixXd::Identity(1, 1),
                                                               traj.measurements)));
        }
    } else if (system == "random") {
        const Index k = get_count(cfg, "k", 1);
        const Index d = get_count(cfg, "d", 1);
        if (d < k) throw UsageError("simulate: d must be >= k");
        RandomSystemOptions opts;
        opts.spectral_radius = get<double>(cfg, "spectral_radius");
        opts.q_scale = get<double>(cfg, "q_scale");
        opts.r_scale = get<double>(cfg, "r_scale");
        if (!(opts.q_scale > 0 && opts.r_scale > 0)) throw UsageError("simulate: q_scale and r_scale must be > 0");
        std::mt19937_64 rng(seed);
        const auto sys = random_linear_system<double>(rng, k, d, opts);
        traj = simulate_lds<double>(sys, VectorXd::Zero(k), get_count(cfg, "steps", 1), rng());
        if (get<bool>(cfg, "kf_log"))
            out.write("kf_log.csv", kf_log_csv(run_kf<double>(sys, VectorXd::Zero(k), 1e3 * MatrixXd::Identity(k, k),
                                                               traj.measurements)));
    } else {
        throw UsageError("simulate: system must be 'random' or 'appendix-demo'");
    }
    out.write("trajectory.csv", trajectory_to_csv(traj));
    return {};
}

CommandResult cmd_nowcast(const json& cfg, OutputSet& out) {
    NowcastConfig nc;
    nc.window = get_count(cfg, "window", 1);
    nc.tune_horizon = get_count(cfg, "tune_horizon", 1);
    nc.grid_size = static_cast<int>(get_count(cfg, "grid_size", 1));
    nc.grid_min_ratio = get<double>(cfg, "grid_min_ratio");
    nc.lambda_grid = get<std::vector<double>>(cfg, "lambda_grid");
    nc.segment_length = get_count(cfg, "segment_length", 0);
    const auto metric = get<std::string>(cfg, "metric");
    if (metric == "mae") nc.metric = TuningMetric::MAE;
    else if (metric == "mse") nc.metric = TuningMetric::MSE;
    else throw UsageError("metric must be 'mae' or 'mse'");
    try {
        nc.methods = parse_methods(get<std::string>(cfg, "methods"));
        nc.validate();
    } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
    }

    const auto hierarchy_path = get<std::string>(cfg, "hierarchy");
    const MatrixXd H = build_measurement_map(hierarchy_path.empty() ? five_state_hierarchy() : load_hierarchy(hierarchy_path));
    const auto trajectory_path = get<std::string>(cfg, "trajectory");
    Trajectoryd traj;
    if (trajectory_path.empty()) {
        BenchmarkOptions b;
        b.steps = get_count(cfg, "benchmark_steps", 1);
        b.missing_rate = get<double>(cfg, "missing_rate");
        if (!(b.missing_rate >= 0.0 && b.missing_rate < 1.0)) throw UsageError("missing_rate must lie in [0, 1)");
        traj = hierarchical_benchmark(get<std::uint64_t>(cfg, "seed"), b);
    } else {
        traj = ingest_csv(trajectory_path);
    }
    if (traj.d() != H.rows() || traj.k() != H.cols())
        throw UsageError("trajectory has k=" + std::to_string(traj.k()) + ", d=" + std::to_string(traj.d()) +
                         " but the hierarchy map is " + std::to_string(H.rows()) + " x " + std::to_string(H.cols()));

    const auto result = rolling_nowcast(traj, H, nc);
    out.write("predictions.csv", predictions_csv(result, traj.states));
    out.write("scores.json", scores_json(result.scores));
    out.write("lambdas.csv", lambda_log_csv(result));
    for (const auto& e : result.scores.entries)
        if (e.segment == "all")
            std::cout << to_string(e.method) << " mae=" << format_double(e.mae) << " mad=" << format_double(e.mad)
                      << " failures=" << e.failures << "\n";
    return {};
}

CommandResult cmd_modelsel(const json& cfg, OutputSet& out) {
    ModelselOptions opts;
    opts.burn_in = get_count(cfg, "burn_in", 1);
    opts.demo.steps = get_count(cfg, "steps", 1);
    opts.min_history = get_count(cfg, "min_history", 4);
    opts.validation_points = get_count(cfg, "validation_points", 1);
    opts.lambda_grid_size = static_cast<int>(get_count(cfg, "lambda_grid_size", 1));
    opts.lambda_grid_min_ratio = get<double>(cfg, "lambda_grid_min_ratio");
    if (!(opts.lambda_grid_min_ratio > 0.0 && opts.lambda_grid_min_ratio <= 1.0))
        throw UsageError("lambda_grid_min_ratio must lie in (0, 1]");
    if (opts.burn_in >= opts.demo.steps) throw UsageError("burn_in must be smaller than steps");
    if (opts.min_history + opts.validation_points + 2 > opts.burn_in)
        throw UsageError("burn_in must exceed min_history + validation_points + 1");

    const auto result = run_modelsel_experiment(get<std::uint64_t>(cfg, "seed"), opts);
    std::ostringstream csv;
    csv << "time,z_1,z_2,z_3,z_4";
    for (CandidateKind kind : kAllCandidates) csv << ',' << to_string(kind);
    csv << ",lambda,prediction,truth,converged\n";
    for (const auto& s : result.steps) {
        csv << s.time;
        for (Index i = 0; i < s.coefficients.size(); ++i) csv << ',' << format_double(s.coefficients(i));
        csv << ',' << format_double(s.lambda) << ',' << format_double(s.prediction) << ','
            << format_double(s.truth) << ',' << (s.converged ? 1 : 0) << '\n';
    }
    const auto& m = result.medians;
    json summary = {{"seed", result.seed},
                    {"steps", result.steps.size()},
                    {"median_coefficients",
                     {{"measurements", m.measurements},
                      {"linear-ar", m.linear},
                      {"quadratic-ar", m.quadratic},
                      {"spline", m.spline},
                      {"sine", m.sine},
                      {"cosine", m.cosine}}}};
    out.write("coefficients.csv", csv.str());
    out.write("summary.json", summary.dump(2) + "\n");
    std::cout << summary["median_coefficients"].dump() << "\n";
    return {};
}

CommandResult cmd_boost(const json& cfg, OutputSet& out) {
    BoostConfig bc;
    bc.eta = get<double>(cfg, "eta");
    bc.iterations = static_cast<long>(get_count(cfg, "iterations", 0));
    bc.ridge_lambda = get<double>(cfg, "ridge_lambda");
    const auto init = get<std::string>(cfg, "init");
    if (init == "zeros") bc.init = BoostConfig::Init::Zeros;
    else if (init == "linear-sf") bc.init = BoostConfig::Init::LinearSF;
    else throw UsageError("init must be 'zeros' or 'linear-sf'");
    if (!(bc.eta > 0.0)) throw UsageError("eta must be > 0");
    if (!(bc.ridge_lambda >= 0.0)) throw UsageError("ridge_lambda must be >= 0");

    const auto seed = get<std::uint64_t>(cfg, "seed");
    const Index k = get_count(cfg, "k", 1);
    const Index d = get_count(cfg, "d", 1);
    if (d < k) throw UsageError("boost: d must be >= k");
    std::mt19937_64 rng(seed);
    const auto sys = random_linear_system<double>(rng, k, d);
    const Trajectoryd traj = simulate_lds<double>(sys, VectorXd::Zero(k), get_count(cfg, "steps", 2), rng());
    const MatrixXd& H = sys.H;
    if (traj.steps() < 2) throw UsageError("boost: need at least two steps");
    // The measurements double as the boosting sources.
    const MatrixXd& U = traj.measurements;
    const Index t = traj.steps() - 1;
    const auto result = boost_assimilate(traj.states.topRows(t), U.topRows(t), H, bc, U.row(t).transpose());
    const VectorXd truth = traj.states.row(t).transpose();
    json report = {{"seed", seed},
                   {"eta", bc.eta},
                   {"iterations", bc.iterations},
                   {"init", init},
                   {"prediction", std::vector<double>(result.prediction.data(),
                                                      result.prediction.data() + result.prediction.size())},
                   {"truth", std::vector<double>(truth.data(), truth.data() + truth.size())},
                   {"train_loss", result.train_loss}};
    out.write("boost.json", report.dump(2) + "\n");
    std::cout << "final train_loss=" << format_double(result.train_loss.back()) << "\n";
    return {};
}

bool is_usage_error(const Error& e) {
    return dynamic_cast<const IoError*>(&e) || dynamic_cast<const SchemaError*>(&e) ||
           dynamic_cast<const ParseError*>(&e) || dynamic_cast<const InvalidArgument*>(&e) ||
           dynamic_cast<const InvalidSystem*>(&e) || dynamic_cast<const InvalidHierarchy*>(&e) ||
           dynamic_cast<const EmptyHierarchy*>(&e) || dynamic_cast<const NoSensors*>(&e) ||
           dynamic_cast<const WindowTooShort*>(&e) || dynamic_cast<const AlphaOutOfRange*>(&e);
}

int run(const std::string& command, const Flags& flags) {
    const auto started = std::chrono::steady_clock::now();
    OutputSet out(flags.out);
    try {
        const json cfg = effective_config(command, flags);
        std::error_code ec;
        fs::create_directories(flags.out, ec);
        if (ec || !fs::is_directory(flags.out)) throw UsageError("cannot create output directory " + flags.out);

        CommandResult result;
        if (command == "equivalence") result = cmd_equivalence(cfg, out);
        else if (command == "simulate") result = cmd_simulate(cfg, out);
        else if (command == "nowcast") result = cmd_nowcast(cfg, out);
        else if (command == "modelsel") result = cmd_modelsel(cfg, out);
        else result = cmd_boost(cfg, out);

        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        json manifest = {{"command", command},
                         {"version", FUSEREG_VERSION},
                         {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                               std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                               std::to_string(EIGEN_MINOR_VERSION)},
                         {"seed", cfg.at("seed")},
                         {"config", cfg},
                         {"outputs", out.names()},
                         {"exit_code", result.exit_code},
                         {"wall_time_seconds", wall}};
        out.write("manifest.json", manifest.dump(2) + "\n");
        return result.exit_code;
    } catch (const UsageError& e) {
        out.discard();
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        out.discard();
        std::cerr << "error: " << e.what() << "\n";
        return is_usage_error(e) ? kExitUsage : kExitFailure;
    } catch (const std::exception& e) {
        out.discard();
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fusereg: Kalman filtering, sensor fusion and constrained regression experiments"};
    app.set_version_flag("--version", FUSEREG_VERSION);
    app.require_subcommand(1);

    Flags flags;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"equivalence", "Run the KF/SF/regression equivalence suites"},
        {"simulate", "Simulate a linear dynamical system to trajectory.csv"},
        {"nowcast", "Rolling-window nowcast on a trajectory with a sensor hierarchy"},
        {"modelsel", "Process-model selection experiment with candidate sensors"},
        {"boost", "Boosting-style assimilation on a seeded linear instance"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", flags.config_path, "JSON config file (or a previous manifest.json)")
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", flags.seed, "64-bit seed; overrides the config");
        sub->add_option("--out", flags.out, "Output directory")->capture_default_str();
        if (name == "equivalence") sub->add_option("--tolerance", flags.tolerance, "Max allowed deviation");
        if (name == "nowcast") sub->add_option("--methods", flags.methods, "Comma list, e.g. sf,sf-ridge");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }
    for (auto* sub : app.get_subcommands()) return run(sub->get_name(), flags);
    return kExitUsage;
}
