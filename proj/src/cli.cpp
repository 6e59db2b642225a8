#include "bamnet/cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "bamnet/data.hpp"
#include "bamnet/gradient_suite.hpp"
#include "bamnet/image.hpp"
#include "bamnet/report.hpp"
#include "bamnet/train.hpp"

namespace bamnet {

namespace fs = std::filesystem;

namespace {

// Failure attributable to inputs on disk rather than to the command line.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw InputError("cannot write " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

SplitRatios parse_ratios(const std::string& text) {
    std::vector<double> v;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw CLI::ValidationError("--ratios", "malformed ratio '" + part + "'");
        }
    }
    if (v.size() != 3) throw CLI::ValidationError("--ratios", "expected three comma-separated ratios");
    return {v[0], v[1], v[2]};
}

fs::path results_root(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv(kResultsEnv); env != nullptr && *env != '\0') return env;
    return "results";
}

ImageDataset split_images(const SplitManifest& m, Split split, const Model<float>& model, std::size_t cache_bytes) {
    const auto& in = model.spec().input_shape;
    if (in[0] != m.channels) {
        throw InputError(fmt::format("checkpoint expects {}-channel input but the manifest declares {} channels "
                                     "(architecture hash {:016x})",
                                     in[0], m.channels, architecture_hash(model.spec())));
    }
    if (in[1] != in[2]) throw InputError("checkpoint input is not square");
    return ImageDataset(m.root, m.entries_in(split), in[1], m.channels, cache_bytes);
}

struct PrepArgs {
    std::string root;
    std::uint64_t seed = 0;
    std::string ratios = "0.80,0.115,0.085";
    std::string fixed;
    std::string out = "split_manifest.json";
    std::size_t channels = 3;
    std::size_t workers = 0;
};

int run_prep(const PrepArgs& a, std::ostream& out) {
    const SplitRatios ratios = parse_ratios(a.ratios);
    if (a.channels != 1 && a.channels != 3) throw CLI::ValidationError("--channels", "must be 1 or 3");
    const fs::path root = fs::weakly_canonical(fs::absolute(a.root));
    const DatasetManifest scanned = scan_dataset(root);
    const PruneResult pruned = prune_corrupted(scanned, a.workers);
    FixedAssignments fixed;
    if (!a.fixed.empty()) fixed = load_fixed_assignments(a.fixed);
    SplitManifest m = split_dataset(pruned.accepted, ratios, a.seed, fixed);
    m.channels = a.channels;
    save_split_manifest(a.out, m);
    const auto c = m.counts();
    out << fmt::format("scanned {} images, rejected {}\n", scanned.entries.size(), pruned.rejected.size());
    for (const auto& r : pruned.rejected) out << fmt::format("  rejected {}: {}\n", r.path, r.reason);
    out << fmt::format("train {} / val {} / test {} -> {}\n", c[0], c[1], c[2], a.out);
    return kExitOk;
}

struct TrainArgs {
    std::string manifest;
    std::string config;
    std::string run_id;
    std::string results;
    bool quiet = false;
};

int run_train(const TrainArgs& a, std::ostream& out) {
    const TrainConfig cfg = a.config.empty() ? TrainConfig{} : train_config_from_json(read_json(a.config));
    const SplitManifest m = load_split_manifest(a.manifest);
    Model<float> model(build_model_spec(cfg.model, m.channels), cfg.seed);
    const std::string run_id = a.run_id.empty() ? fmt::format("{}-seed{}", model.spec().name, cfg.seed) : a.run_id;
    if (run_id.find_first_of("/\\") != std::string::npos || run_id == "." || run_id == "..") {
        throw CLI::ValidationError("--run-id", "must be a plain directory name");
    }
    const fs::path run_dir = results_root(a.results) / run_id;
    if (fs::exists(run_dir) && !fs::is_empty(run_dir)) {
        throw InputError("run directory " + run_dir.string() + " already exists");
    }
    const ImageDataset train_set(m.root, m.entries_in(Split::Train), cfg.model.image_extent, m.channels, cfg.cache_bytes);
    const ImageDataset val_set(m.root, m.entries_in(Split::Val), cfg.model.image_extent, m.channels, cfg.cache_bytes);

    fs::create_directories(run_dir);
    const nlohmann::json snapshot = {
        {"run_id", run_id},
        {"model", model.spec().name},
        {"manifest", fs::weakly_canonical(fs::absolute(a.manifest)).generic_string()},
        {"architecture_hash", fmt::format("{:016x}", architecture_hash(model.spec()))},
        {"parameters", model.parameter_count()},
        {"train", to_json(cfg)},
    };
    write_text(run_dir / "config.json", snapshot.dump(2) + "\n");
    out << fmt::format("run {}: {} parameters, {} train / {} val images\n", run_id, model.parameter_count(),
                       train_set.size(), val_set.size());

    const fs::path checkpoint = run_dir / "checkpoint";
    const auto result = train(model, train_set, val_set, cfg, checkpoint, [&](const EpochRecord& r) {
        if (a.quiet) return;
        out << fmt::format("epoch {:>3}/{} loss {:.4f} acc {:.4f} val_loss {:.4f} val_acc {:.4f} lr {:g} ({:.1f}s)\n",
                           r.epoch, cfg.epochs, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr, r.seconds)
            << std::flush;
    });
    fs::copy_file(CheckpointPaths{checkpoint}.log(), run_dir / "log.csv", fs::copy_options::overwrite_existing);
    out << fmt::format("best epoch {} (val_loss {:.4f}); checkpoint {}\n", result.best_epoch, result.best_val_loss,
                       checkpoint.string());
    return kExitOk;
}

struct EvalArgs {
    std::string checkpoint;
    std::string manifest;
    std::string split = "test";
    std::string out;
    std::size_t batch_size = 32;
};

int run_eval(const EvalArgs& a, std::ostream& out) {
    Split split{};
    try {
        split = split_from_string(a.split);
    } catch (const std::exception&) {
        throw CLI::ValidationError("--split", "must be train, val or test");
    }
    if (a.batch_size == 0) throw CLI::ValidationError("--batch-size", "must be positive");
    Model<float> model = load_checkpoint_model(a.checkpoint);
    const SplitManifest m = load_split_manifest(a.manifest);
    const ImageDataset set = split_images(m, split, model, 0);
    if (set.size() == 0) throw InputError("split '" + a.split + "' is empty");
    const ConfusionCounts counts = evaluate(model, set, a.batch_size);
    const nlohmann::json doc = metrics_document(model.spec().name, a.split, counts);
    const fs::path target =
        a.out.empty() ? (fs::absolute(a.checkpoint) / "").lexically_normal().parent_path().parent_path() / "metrics.json"
                      : fs::path(a.out);
    write_text(target, doc.dump(2) + "\n");
    const MetricsReport r = metrics_from_counts(counts);
    out << fmt::format("{} on {} ({} images): TP {} FP {} TN {} FN {}\n", model.spec().name, a.split, counts.total(),
                       counts.tp, counts.fp, counts.tn, counts.fn);
    out << fmt::format("accuracy {:.4f} f1 {:.4f} recall {:.4f} precision {:.4f} (micro) -> {}\n", r.accuracy, r.f1,
                       r.recall, r.precision, target.string());
    return kExitOk;
}

struct ReportArgs {
    std::string results;
    std::string out;
    std::string averaging = "micro";
};

int run_report(const ReportArgs& a, std::ostream& out) {
    Averaging averaging = Averaging::Micro;
    if (a.averaging == "per-class") averaging = Averaging::PerClass;
    else if (a.averaging == "macro") averaging = Averaging::Macro;
    else if (a.averaging != "micro") throw CLI::ValidationError("--averaging", "must be micro, macro or per-class");
    const fs::path root = results_root(a.results);
    const auto runs = collect_runs(root, averaging);
    if (runs.empty()) throw InputError("no evaluated runs under " + root.string());
    for (const auto& r : runs) {
        if (fs::exists(r.log)) write_curves(r.log, root / r.run_id);
    }
    const ComparisonTable t = emit_comparison(runs);
    const fs::path dest = a.out.empty() ? root : fs::path(a.out);
    write_text(dest / "comparison.txt", t.text);
    write_text(dest / "comparison.csv", t.csv);
    out << t.text;
    return kExitOk;
}

int run_gradcheck(std::uint64_t seed, std::ostream& out) {
    const auto entries = run_gradient_suite(seed);
    double worst_layer = 0.0;
    double worst_model = 0.0;
    bool ok = true;
    for (const auto& e : entries) {
        out << fmt::format("{:<40} {:.3e}  (< {:.0e})  {}\n", e.name, e.max_error, e.tolerance,
                           e.passed() ? "ok" : "FAILED");
        ok = ok && e.passed();
        if (e.name.starts_with("full model")) worst_model = std::max(worst_model, e.max_error);
        else worst_layer = std::max(worst_layer, e.max_error);
    }
    out << fmt::format("max relative error: layers {:.3e}, full model {:.3e}\n", worst_layer, worst_model);
    return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Bottleneck-attention Inception classifier for radiograph fracture detection", "bamnet"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    PrepArgs prep_args;
    auto* prep = app.add_subcommand("prep", "Scan, prune and split an image tree into a manifest");
    prep->add_option("root", prep_args.root, "Directory holding Fractured/ and Non_fractured/")->required();
    prep->add_option("--seed", prep_args.seed, "Shuffle seed");
    prep->add_option("--ratios", prep_args.ratios, "Train,val,test ratios");
    prep->add_option("--fixed-splits", prep_args.fixed, "JSON map of relative path to split");
    prep->add_option("--out", prep_args.out, "Manifest path")->capture_default_str();
    prep->add_option("--channels", prep_args.channels, "Model input channels (1 or 3)");
    prep->add_option("--workers", prep_args.workers, "Decode threads (0 = all cores)");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train a model on the train/val splits of a manifest");
    train_cmd->add_option("manifest", train_args.manifest, "Split manifest")->required();
    train_cmd->add_option("--config", train_args.config, "Training config JSON");
    train_cmd->add_option("--run-id", train_args.run_id, "Run directory name");
    train_cmd->add_option("--results", train_args.results,
                          std::string("Results directory (default $") + kResultsEnv + " or ./results)");
    train_cmd->add_flag("--quiet", train_args.quiet, "Suppress per-epoch progress");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
    eval->add_option("checkpoint", eval_args.checkpoint, "Checkpoint directory")->required();
    eval->add_option("manifest", eval_args.manifest, "Split manifest")->required();
    eval->add_option("--split", eval_args.split, "train, val or test")->capture_default_str();
    eval->add_option("--out", eval_args.out, "Metrics JSON path (default: next to the checkpoint)");
    eval->add_option("--batch-size", eval_args.batch_size, "Images per forward pass");

    ReportArgs report_args;
    auto* report = app.add_subcommand("report", "Write curves and the comparison table for a results directory");
    report->add_option("results", report_args.results,
                       std::string("Results directory (default $") + kResultsEnv + " or ./results)");
    report->add_option("--out", report_args.out, "Directory for comparison.txt/.csv");
    report->add_option("--averaging", report_args.averaging, "micro, macro or per-class")->capture_default_str();

    std::uint64_t gradcheck_seed = 7;
    auto* gradcheck = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
    gradcheck->add_option("--seed", gradcheck_seed, "Suite seed");

    try {
        app.parse(argc, argv);
        if (*prep) return run_prep(prep_args, out);
        if (*train_cmd) return run_train(train_args, out);
        if (*eval) return run_eval(eval_args, out);
        if (*report) return run_report(report_args, out);
        if (*gradcheck) return run_gradcheck(gradcheck_seed, out);
        return kExitUsage;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
}

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"bamnet"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace bamnet
