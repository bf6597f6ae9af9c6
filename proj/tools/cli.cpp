#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lpe/ensembler.hpp"
#include "lpe/errors.hpp"
#include "lpe/landscape.hpp"
#include "lpe/metrics.hpp"
#include "lpe/nn.hpp"
#include "lpe/storage.hpp"

namespace lpe::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Bad flag values that CLI11 cannot see (e.g. a malformed --blobs spec).
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DataOptions {
    std::string csv;
    std::string blobs;
};

struct BlobSpec {
    std::size_t classes = 0;
    std::size_t dim = 0;
    std::size_t n_per_class = 0;
    double spread = 1.0;
    std::uint64_t seed = 0;
};

BlobSpec parse_blobs(const std::string& text) {
    BlobSpec spec;
    std::istringstream is(text);
    std::string item;
    bool have_k = false, have_d = false, have_n = false;
    while (std::getline(is, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw UsageError("--blobs entries must look like key=value, got '" + item + "'");
        const std::string key = item.substr(0, eq);
        const std::string value = item.substr(eq + 1);
        try {
            std::size_t used = 0;
            if (key == "K") {
                spec.classes = std::stoul(value, &used);
                have_k = true;
            } else if (key == "d") {
                spec.dim = std::stoul(value, &used);
                have_d = true;
            } else if (key == "n") {
                spec.n_per_class = std::stoul(value, &used);
                have_n = true;
            } else if (key == "spread") {
                spec.spread = std::stod(value, &used);
            } else if (key == "seed") {
                spec.seed = std::stoull(value, &used);
            } else {
                throw UsageError("unknown --blobs key '" + key + "' (expected K, d, n, spread, seed)");
            }
            if (used != value.size()) throw std::invalid_argument(value);
        } catch (const std::logic_error&) {
            throw UsageError("bad value for --blobs key '" + key + "': '" + value + "'");
        }
    }
    if (!have_k || !have_d || !have_n) throw UsageError("--blobs needs K, d and n (e.g. K=3,d=2,n=200)");
    return spec;
}

Dataset load_data(const DataOptions& opts) {
    if (!opts.csv.empty()) return load_dataset_csv(opts.csv);
    const BlobSpec b = parse_blobs(opts.blobs);
    return make_blobs(b.classes, b.dim, b.n_per_class, b.spread, b.seed);
}

void add_data_options(CLI::App* cmd, DataOptions& opts) {
    auto* data = cmd->add_option("--data", opts.csv, "CSV dataset (f0..f{d-1},label)");
    auto* blobs = cmd->add_option("--blobs", opts.blobs, "synthetic blobs, e.g. K=3,d=2,n=200[,spread=1][,seed=0]");
    data->excludes(blobs);
    blobs->excludes(data);
}

void require_data(const DataOptions& opts) {
    if (opts.csv.empty() && opts.blobs.empty()) throw UsageError("one of --data or --blobs is required");
}

json data_echo(const DataOptions& opts) {
    return opts.csv.empty() ? json{{"blobs", opts.blobs}} : json{{"data", opts.csv}};
}

std::vector<std::size_t> parse_list(const std::string& text, const std::string& flag) {
    std::vector<std::size_t> out;
    std::istringstream is(text);
    std::string item;
    while (std::getline(is, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoul(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw UsageError(flag + " expects comma-separated integers, got '" + text + "'");
        }
    }
    if (out.empty()) throw UsageError(flag + " is empty");
    return out;
}

json metrics_json(const EvalReport& r) {
    json m{{"nll", r.nll},
           {"err", r.err},
           {"ece", r.ece},
           {"avg_loss", r.avg_loss},
           {"ensemble_loss", r.ensemble_loss}};
    // A single model has no ambiguity; the field is left out rather than reported as 0.
    if (r.members > 1) m["ambiguity"] = r.ambiguity;
    return m;
}

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    std::int64_t elapsed_ms() const {
        return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

void emit(const json& report, const std::string& json_path, std::ostream& out) {
    const std::string text = report.dump(2) + "\n";
    if (!json_path.empty()) {
        std::ofstream f(json_path, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot write report " + json_path);
        f << text;
    }
    out << text;
}

std::string fixed(double v, int digits = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

void print_summary(const EvalReport& r, std::ostream& err) {
    err << "members=" << r.members << " nll=" << fixed(r.nll) << " err=" << fixed(r.err) << " ece=" << fixed(r.ece);
    if (r.members > 1) err << " amb=" << fixed(r.ambiguity);
    err << " bits=" << r.memory_bits << "\n";
}

// ---- train ---------------------------------------------------------------------------------

struct TrainOptions {
    DataOptions data;
    std::string layers;
    std::string activation = "relu";
    std::size_t epochs = 50;
    float lr = 0.1f;
    std::size_t batch = 32;
    std::uint64_t seed = 0;
    std::string out;
    std::string json_path;
};

int run_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
    require_data(o.data);
    const Stopwatch clock;
    const Dataset data = load_data(o.data);
    const ModelSpec spec = ModelSpec::mlp(parse_list(o.layers, "--layers"), parse_activation(o.activation));
    const TrainConfig cfg{o.lr, o.epochs, o.batch, o.seed};
    const Checkpoint ckpt = train_sgd(data, spec, cfg);
    save_checkpoint(o.out, ckpt);
    const EvalReport r = evaluate(MemberSet::single(ckpt), data);

    json config = data_echo(o.data);
    config.update({{"layers", o.layers},
                   {"activation", o.activation},
                   {"epochs", o.epochs},
                   {"lr", o.lr},
                   {"batch", o.batch},
                   {"out", o.out}});
    json report{{"command", "train"},
                {"config", config},
                {"seed", o.seed},
                {"metrics", {{"train_nll", r.nll}, {"train_err", r.err}, {"train_ece", r.ece}}},
                {"parameter_count", ckpt.parameter_count()},
                {"memory_bits", r.memory_bits},
                {"wall_time_ms", clock.elapsed_ms()},
                {"artifact_paths", {o.out}}};
    emit(report, o.json_path, out);
    err << "trained " << ckpt.parameter_count() << " parameters: train nll=" << fixed(r.nll)
        << " train err=" << fixed(r.err) << " -> " << o.out << "\n";
    return kOk;
}

// ---- ensemble ------------------------------------------------------------------------------

struct EnsembleOptions {
    std::string ckpt;
    std::string method = "bsr";
    std::optional<int> bits;
    std::size_t size = 1;
    std::optional<double> sigma2;
    std::optional<double> drop_p;
    std::uint64_t seed = 0;
    std::string out_dir;
    unsigned threads = 1;
    std::string json_path;
};

EnsembleSpec make_spec(const std::string& method, std::optional<int> bits, std::size_t size,
                       std::optional<double> sigma2, std::optional<double> drop_p, std::uint64_t seed) {
    EnsembleSpec spec{parse_method(method), size, bits, sigma2, drop_p, seed};
    if (spec.method == Method::rtn) spec.base_seed = 0;
    spec.validate();
    return spec;
}

int run_ensemble(const EnsembleOptions& o, std::ostream& out, std::ostream& err) {
    const Stopwatch clock;
    const EnsembleSpec spec = make_spec(o.method, o.bits, o.size, o.sigma2, o.drop_p, o.seed);
    const Checkpoint ckpt = load_checkpoint(o.ckpt);
    const MemberSet ms = generate_members(ckpt, spec, o.threads);
    const auto paths = save_member_set(o.out_dir, ms);

    json config{{"ckpt", o.ckpt}, {"method", std::string(to_string(spec.method))}, {"size", o.size}, {"out_dir", o.out_dir}};
    if (o.bits) config["bits"] = *o.bits;
    if (o.sigma2) config["sigma2"] = *o.sigma2;
    if (o.drop_p) config["drop_p"] = *o.drop_p;
    json seeds = json::array();
    for (const auto& m : ms.members) seeds.push_back(m.seed);
    json artifacts = json::array();
    for (const auto& p : paths) artifacts.push_back(p.string());
    json report{{"command", "ensemble"},
                {"config", config},
                {"seed", o.seed},
                {"member_seeds", seeds},
                {"memory_bits", memory_budget(ms)},
                {"wall_time_ms", clock.elapsed_ms()},
                {"artifact_paths", artifacts}};
    emit(report, o.json_path, out);
    err << "wrote " << ms.size() << " " << to_string(spec.method) << " members to " << o.out_dir << " ("
        << memory_budget(ms) << " bits)\n";
    return kOk;
}

// ---- eval ----------------------------------------------------------------------------------

struct EvalOptions {
    std::string members;
    std::string ckpt;
    DataOptions data;
    std::string json_path;
    std::size_t bins = kDefaultEceBins;
    std::string bits_list;
    std::string method = "bsr";
    std::size_t size = 10;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

json eval_report(const EvalReport& r, json config, std::optional<std::uint64_t> seed, const Stopwatch& clock,
                 const std::string& json_path) {
    json report{{"command", "eval"},
                {"config", std::move(config)},
                {"seed", seed ? json(*seed) : json(nullptr)},
                {"metrics", metrics_json(r)},
                {"per_member_nll", r.per_member_nll},
                {"memory_bits", r.memory_bits},
                {"wall_time_ms", clock.elapsed_ms()},
                {"artifact_paths", json_path.empty() ? json::array() : json::array({json_path})}};
    return report;
}

int run_eval(const EvalOptions& o, std::ostream& out, std::ostream& err) {
    require_data(o.data);
    if (o.members.empty() == o.ckpt.empty()) throw UsageError("exactly one of --members or --ckpt is required");
    if (!o.bits_list.empty() && o.ckpt.empty()) throw UsageError("--bits-list sweeps need --ckpt");
    const Stopwatch clock;
    const Dataset data = load_data(o.data);

    json config = data_echo(o.data);
    config["ece_bins"] = o.bins;

    if (!o.bits_list.empty()) {
        const Checkpoint ckpt = load_checkpoint(o.ckpt);
        json reports = json::array();
        for (std::size_t bits : parse_list(o.bits_list, "--bits-list")) {
            const Stopwatch step;
            const bool rtn = parse_method(o.method) == Method::rtn;
            const EnsembleSpec spec =
                make_spec(o.method, static_cast<int>(bits), rtn ? 1 : o.size, std::nullopt, std::nullopt, o.seed);
            const EvalReport r = evaluate(generate_members(ckpt, spec, o.threads), data, o.bins);
            json cfg = config;
            cfg.update({{"ckpt", o.ckpt}, {"method", std::string(to_string(spec.method))}, {"size", spec.size},
                        {"bits", bits}});
            json report = eval_report(r, cfg, o.seed, step, "");
            report["bits"] = bits;
            reports.push_back(std::move(report));
            err << "INT-" << bits << ": ";
            print_summary(r, err);
        }
        emit(reports, o.json_path, out);
        return kOk;
    }

    MemberSet ms = o.members.empty() ? MemberSet::single(load_checkpoint(o.ckpt)) : load_member_set(o.members);
    if (o.members.empty()) {
        config["ckpt"] = o.ckpt;
    } else {
        config["members"] = o.members;
    }
    const EvalReport r = evaluate(ms, data, o.bins);
    std::optional<std::uint64_t> seed;
    if (ms.spec && ms.spec->method != Method::rtn) seed = ms.spec->base_seed;
    emit(eval_report(r, config, seed, clock, o.json_path), o.json_path, out);
    print_summary(r, err);
    return kOk;
}

// ---- landscape -----------------------------------------------------------------------------

struct LandscapeOptions {
    std::string a, b, c;
    DataOptions data;
    std::size_t grid = kDefaultResolution;
    double margin = kDefaultMargin;
    std::string out;
    std::string json_path;
};

fs::path anchors_path(const fs::path& csv) {
    fs::path p = csv;
    p.replace_extension();
    p += ".anchors.csv";
    return p;
}

int run_landscape(const LandscapeOptions& o, std::ostream& out, std::ostream& err) {
    require_data(o.data);
    const Stopwatch clock;
    const Dataset data = load_data(o.data);
    const PlaneBasis basis = plane_basis(load_model(o.a), load_model(o.b), load_model(o.c));
    const LandscapeGrid grid = eval_grid(basis, data, o.grid, o.margin);
    const fs::path sidecar = anchors_path(o.out);
    write_grid_csv(o.out, grid);
    write_anchor_csv(sidecar, grid, {"a", "b", "c"});

    json anchors = json::array();
    const char* names[] = {"a", "b", "c"};
    for (std::size_t k = 0; k < 3; ++k) {
        anchors.push_back({{"name", names[k]},
                           {"alpha", grid.anchors[k].alpha},
                           {"beta", grid.anchors[k].beta},
                           {"nll", grid.anchor_cells[k].nll},
                           {"disagree_1", grid.anchor_cells[k].disagree_1},
                           {"disagree_2", grid.anchor_cells[k].disagree_2}});
    }
    json config = data_echo(o.data);
    config.update({{"a", o.a}, {"b", o.b}, {"c", o.c}, {"grid", o.grid}, {"margin", o.margin}, {"out", o.out}});
    json report{{"command", "landscape"},
                {"config", config},
                {"seed", nullptr},
                {"anchors", anchors},
                {"wall_time_ms", clock.elapsed_ms()},
                {"artifact_paths", {o.out, sidecar.string()}}};
    emit(report, o.json_path, out);
    err << "wrote " << o.grid * o.grid << " grid points to " << o.out << " and anchors to " << sidecar.string() << "\n";
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Low-precision ensembling from a single checkpoint", "lpe"};
    app.require_subcommand(1);

    TrainOptions train;
    auto* train_cmd = app.add_subcommand("train", "train a desk-scale MLP checkpoint with SGD");
    add_data_options(train_cmd, train.data);
    train_cmd->add_option("--layers", train.layers, "layer extents, e.g. 2,16,3")->required();
    train_cmd->add_option("--activation", train.activation, "relu or tanh")->capture_default_str();
    train_cmd->add_option("--epochs", train.epochs)->capture_default_str();
    train_cmd->add_option("--lr", train.lr)->capture_default_str();
    train_cmd->add_option("--batch", train.batch)->capture_default_str();
    train_cmd->add_option("--seed", train.seed)->capture_default_str();
    train_cmd->add_option("--out", train.out, "checkpoint path")->required();
    train_cmd->add_option("--json", train.json_path, "also write the report here");

    EnsembleOptions ens;
    auto* ens_cmd = app.add_subcommand("ensemble", "derive ensemble members from a checkpoint");
    ens_cmd->add_option("--ckpt", ens.ckpt)->required();
    ens_cmd->add_option("--method", ens.method, "bsr, rtn, gaussian or mcd")->capture_default_str();
    ens_cmd->add_option("--bits", ens.bits, "bit width for bsr/rtn");
    ens_cmd->add_option("--size", ens.size, "number of members")->capture_default_str();
    ens_cmd->add_option("--sigma2", ens.sigma2, "noise variance for gaussian");
    ens_cmd->add_option("--drop-p", ens.drop_p, "drop probability for mcd");
    ens_cmd->add_option("--seed", ens.seed)->capture_default_str();
    ens_cmd->add_option("--out-dir", ens.out_dir)->required();
    ens_cmd->add_option("--threads", ens.threads)->capture_default_str();
    ens_cmd->add_option("--json", ens.json_path, "also write the report here");

    EvalOptions ev;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint or member set");
    eval_cmd->add_option("--members", ev.members, "manifest.json written by `ensemble`");
    eval_cmd->add_option("--ckpt", ev.ckpt, "single checkpoint");
    add_data_options(eval_cmd, ev.data);
    eval_cmd->add_option("--json", ev.json_path, "also write the report here");
    eval_cmd->add_option("--bins", ev.bins, "ECE bins")->capture_default_str();
    eval_cmd->add_option("--bits-list", ev.bits_list, "sweep bit widths, e.g. 6,5,4 (with --ckpt)");
    eval_cmd->add_option("--method", ev.method, "sweep method (bsr or rtn)")->capture_default_str();
    eval_cmd->add_option("--size", ev.size, "sweep ensemble size")->capture_default_str();
    eval_cmd->add_option("--seed", ev.seed, "sweep seed")->capture_default_str();
    eval_cmd->add_option("--threads", ev.threads)->capture_default_str();

    LandscapeOptions land;
    auto* land_cmd = app.add_subcommand("landscape", "loss and disagreement surfaces on the plane of three models");
    land_cmd->add_option("--a", land.a, "origin model (checkpoint or member file)")->required();
    land_cmd->add_option("--b", land.b, "second model")->required();
    land_cmd->add_option("--c", land.c, "third model")->required();
    add_data_options(land_cmd, land.data);
    land_cmd->add_option("--grid", land.grid, "grid resolution per axis")->capture_default_str();
    land_cmd->add_option("--margin", land.margin, "padding as a fraction of the anchor box diagonal")
        ->capture_default_str();
    land_cmd->add_option("--out", land.out, "grid CSV path")->required();
    land_cmd->add_option("--json", land.json_path, "also write the report here");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return kUsageError;
    }

    try {
        if (train_cmd->parsed()) return run_train(train, out, err);
        if (ens_cmd->parsed()) return run_ensemble(ens, out, err);
        if (eval_cmd->parsed()) return run_eval(ev, out, err);
        if (land_cmd->parsed()) return run_landscape(land, out, err);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kUsageError;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kRuntimeError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kUsageError;
}

}  // namespace lpe::cli
