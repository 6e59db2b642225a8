// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit when
// any fails.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "bamnet/bam.hpp"
#include "bamnet/cli.hpp"
#include "bamnet/data.hpp"
#include "bamnet/gradient_suite.hpp"
#include "bamnet/ops.hpp"
#include "bamnet/report.hpp"
#include "bamnet/train.hpp"
#include "fixtures.hpp"
#include "test_util.hpp"

namespace {

using namespace bamnet;
namespace fs = std::filesystem;

struct Verdict {
    bool pass = true;
    std::string detail;
};

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// 1. Finite-difference gradient suite.
Verdict gradient_suite() {
    const double start = cpu_seconds();
    const auto entries = run_gradient_suite();
    const double cpu = cpu_seconds() - start;
    Verdict v;
    double worst_layer = 0.0, worst_model = 0.0;
    std::string failed;
    for (const auto& e : entries) {
        if (e.name.starts_with("full model")) worst_model = std::max(worst_model, e.max_error);
        else worst_layer = std::max(worst_layer, e.max_error);
        if (!e.passed()) {
            v.pass = false;
            failed += " " + e.name;
        }
        if (e.name.starts_with("full model") ? e.tolerance > 1e-3 : e.tolerance > 1e-4) {
            v.pass = false;
            failed += " (loose tolerance: " + e.name + ")";
        }
    }
    v.pass = v.pass && cpu < 120.0;
    v.detail = fmt::format("{} checks, layer max {:.2e} (<1e-4), model max {:.2e} (<1e-3), {:.1f}s CPU{}",
                           entries.size(), worst_layer, worst_model, cpu, failed.empty() ? "" : "; failed:" + failed);
    return v;
}

// 2. Fresh BAM is 1.5 F; the attention map stays inside (0, 1).
Verdict bam_identity() {
    Verdict v;
    Rng rng(21);
    double worst = 0.0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        BamParams<double> bam(32, 16, 4);
        bam.initialize(rng);
        const auto x = testing::random_tensor({2, 32, 7, 7}, 900 + trial, -100.0, 100.0);
        for (Mode mode : {Mode::Train, Mode::Eval}) {
            Tape<double> tape;
            const auto y = bam_refine(tape.leaf(x), bam, mode).value();
            for (std::size_t i = 0; i < x.numel(); ++i) worst = std::max(worst, std::abs(y[i] - 1.5 * x[i]));
        }
    }
    double lo = 1.0, hi = 0.0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        BamParams<double> bam(16, 4, 2);
        Rng init(300 + trial);
        bam.initialize(init);
        bam.for_each_parameter([&](const std::string&, Parameter<double>& p) {
            for (auto& e : p.value.data()) e = init.uniform(-1.0, 1.0);
        });
        const double range = std::pow(10.0, static_cast<double>(trial % 4));
        Tape<double> tape;
        const auto x = testing::random_tensor({3, 16, 6, 6}, 700 + trial, -range, range);
        const auto m = attention_map(tape.leaf(x), bam, Mode::Train).value();
        for (double e : m.data()) {
            lo = std::min(lo, e);
            hi = std::max(hi, e);
        }
    }
    v.pass = worst == 0.0 && lo > 0.0 && hi < 1.0;
    v.detail = fmt::format("max |refine - 1.5F| = {:.1e} over 20 inputs; map range [{:.4g}, {:.4g}] for |F| <= 1e3",
                           worst, lo, hi);
    return v;
}

// 3. im2col convolution against the direct loop.
Verdict conv_oracle() {
    Rng rng(33);
    double worst = 0.0;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.below(3), c = 1 + rng.below(5), o = 1 + rng.below(5);
        const std::size_t k = 1 + rng.below(4), stride = 1 + rng.below(3), dil = 1 + rng.below(4);
        const std::size_t pad = rng.below(4);
        const std::size_t span = dil * (k - 1) + 1;
        const std::size_t h = span + rng.below(9), w = span + rng.below(9);
        const auto x = testing::random_tensor({n, c, h, w}, 1000 + trial);
        const auto kern = testing::random_tensor({o, c, k, k}, 2000 + trial);
        const auto bias = testing::random_tensor({o}, 3000 + trial);
        const bool with_bias = trial % 2 == 0;
        Tape<double> tape;
        const auto y = conv2d(tape.leaf(x), tape.leaf(kern), with_bias ? OptVar<double>(tape.leaf(bias)) : std::nullopt,
                              {stride, pad, dil})
                           .value();
        const auto ref = testing::reference_conv2d(x, kern, with_bias ? &bias : nullptr, stride, pad, dil);
        if (y.shape() != ref.shape()) return {false, "shape mismatch in case " + std::to_string(trial)};
        worst = std::max(worst, testing::max_abs_diff(y, ref));
    }
    return {worst < 1e-6, fmt::format("100 cases, max |diff| = {:.2e} (< 1e-6)", worst)};
}

// 4. Split reproduction on a synthetic 4,083-entry manifest.
Verdict split_reproduction() {
    DatasetManifest m;
    m.root = "/data";
    for (std::size_t i = 0; i < 4083; ++i) {
        const bool frac = i < 717;
        m.entries.push_back({fmt::format("{}/img{:05}.jpg", frac ? "Fractured" : "Non_fractured", i),
                             frac ? ClassLabel::Fractured : ClassLabel::NonFractured, 100});
    }
    const SplitRatios ratios{0.80, 0.115, 0.085};
    const auto a = split_dataset(m, ratios, 42);
    const auto b = split_dataset(m, ratios, 42);
    const auto c = a.counts();
    std::set<std::string> seen;
    for (const auto& e : a.entries) seen.insert(e.path);
    const bool partition = a.entries.size() == 4083 && seen.size() == 4083;
    const bool same = a == b && to_json(a).dump() == to_json(b).dump();
    return {c == std::array<std::size_t, 3>{3266, 470, 347} && partition && same,
            fmt::format("counts {}/{}/{}, partition {}, same seed identical {}", c[0], c[1], c[2], partition, same)};
}

// 5. Metrics against a per-sample tally.
Verdict metrics_oracle() {
    Rng rng(55);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.below(1000);
        const double p_pos = rng.uniform();
        std::vector<ClassLabel> pred(n), actual(n);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < n; ++i) {
            pred[i] = rng.uniform() < p_pos ? ClassLabel::Fractured : ClassLabel::NonFractured;
            actual[i] = rng.uniform() < 0.25 ? ClassLabel::Fractured : ClassLabel::NonFractured;
            correct += pred[i] == actual[i];
        }
        const double acc = static_cast<double>(correct) / static_cast<double>(n);
        const auto counts = tally(pred, actual);
        const auto micro = metrics_from_counts(counts, Averaging::Micro);
        const auto per_class = metrics_from_counts(counts, Averaging::PerClass);
        if (counts.total() != n || micro.accuracy != acc || per_class.accuracy != acc || micro.precision != acc ||
            micro.recall != acc) {
            ++mismatches;
        }
    }
    return {mismatches == 0, fmt::format("100 random vectors, {} mismatches; micro P = R = accuracy", mismatches)};
}

// 6. Adam recurrence and the plateau schedule.
Verdict optimizer_conformance() {
    double worst = 0.0;
    {
        Tensor<double> w({1}, 0.0);
        const Tensor<double> g({1}, 1.0);
        AdamState st;
        adam_step<double>({&w}, {&g}, st, 1e-3, {});
        // m = 0.1, v = 0.001, both bias corrections give 1.
        worst = std::max(worst, std::abs(w[0] - (-1e-3 / (1.0 + 1e-8))));
    }
    double final_w = 0.0;
    {
        Tensor<double> w({1}, 0.0);
        AdamState st;
        double m = 0, v = 0, ref = 0;
        for (int t = 1; t <= 200; ++t) {
            const Tensor<double> g({1}, 2.0 * (w[0] - 3.0));
            adam_step<double>({&w}, {&g}, st, 0.1, {});
            const double gr = 2.0 * (ref - 3.0);
            m = 0.9 * m + 0.1 * gr;
            v = 0.999 * v + 0.001 * gr * gr;
            ref -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
            worst = std::max(worst, std::abs(w[0] - ref));
        }
        final_w = w[0];
    }
    const PlateauConfig cfg{0.1, 10, 1e-6};
    const auto lrs = plateau_schedule(std::vector<double>(40, 1.0), 1e-3, cfg);
    std::size_t first_drop = 0;
    bool monotone = true;
    for (std::size_t e = 0; e < lrs.size(); ++e) {
        if (first_drop == 0 && lrs[e] < 1e-3) first_drop = e + 1;
        if (e > 0 && lrs[e] > lrs[e - 1]) monotone = false;
    }
    Rng rng(66);
    std::vector<double> noisy;
    for (int i = 0; i < 500; ++i) noisy.push_back(rng.uniform());
    const auto noisy_lrs = plateau_schedule(noisy, 1e-3, {0.5, 2, 1e-6});
    for (std::size_t e = 1; e < noisy_lrs.size(); ++e) monotone = monotone && noisy_lrs[e] <= noisy_lrs[e - 1];
    const bool pass = worst < 1e-9 && std::abs(final_w - 3.0) < 0.05 && first_drop == 11 && monotone;
    return {pass, fmt::format("Adam max deviation {:.1e} (< 1e-9), w after 200 steps {:.4f}; lr first drops at epoch "
                              "{} (patience 10), non-increasing {}",
                              worst, final_w, first_drop, monotone)};
}

// 7. Training sanity on a generated two-class texture set.
Verdict training_sanity() {
    const double start = cpu_seconds();
    testing::TempDir dir("acceptance_train");
    testing::write_texture_tree(dir.path() / "train", 32, 64, 101);
    testing::write_texture_tree(dir.path() / "val", 8, 64, 202);
    const auto load = [&](const char* which) {
        const auto manifest = scan_dataset(dir.path() / which);
        std::vector<SplitEntry> entries;
        for (const auto& e : manifest.entries) entries.push_back({e.path, e.label, Split::Train});
        return ImageDataset(dir.path() / which, entries, 224, 3, std::size_t{1} << 30);
    };
    const auto train_set = load("train");
    const auto val_set = load("val");
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.seed = 7;
    cfg.model.width = 16;
    cfg.model.image_extent = 224;
    Model<float> model(build_model_spec(cfg.model, 3), cfg.seed);
    const fs::path ck = dir.path() / "checkpoint";
    const auto result = train(model, train_set, val_set, cfg, ck);
    std::size_t first_full = 0;
    for (const auto& e : result.log.epochs) {
        if (first_full == 0 && e.train_acc == 1.0) first_full = e.epoch;
    }
    const auto counts = evaluate(model, val_set);
    const double val_acc = metrics_from_counts(counts).accuracy;
    const std::string log = slurp(CheckpointPaths{ck}.log());
    const bool schema = log.starts_with("epoch,train_loss,train_acc,val_loss,val_acc,lr\n") &&
                        std::count(log.begin(), log.end(), '\n') == 31;
    const double cpu = cpu_seconds() - start;
    const bool pass = train_set.size() == 64 && val_set.size() == 16 && first_full != 0 && val_acc >= 0.9 &&
                      cpu < 600.0 && schema;
    return {pass, fmt::format("64/16 images at 224, width 16: train accuracy 1.0 first at epoch {}, best-checkpoint "
                              "val accuracy {:.4f} (>= 0.9), log schema {}, {:.0f}s CPU (< 600)",
                              first_full == 0 ? std::string("never") : std::to_string(first_full), val_acc, schema,
                              cpu)};
}

// 8. prep -> train -> eval twice with the same seeds.
Verdict pipeline_determinism() {
    testing::TempDir dir("acceptance_pipeline");
    testing::write_texture_tree(dir.path() / "data", 20, 64, 303);
    const nlohmann::json cfg = {{"epochs", 3}, {"batch_size", 8}, {"seed", 17}, {"model", {{"width", 8}, {"image_extent", 64}}}};
    std::ofstream(dir.path() / "config.json") << cfg.dump();
    std::vector<std::string> artifacts;
    for (int run = 0; run < 2; ++run) {
        const fs::path base = dir.path() / ("run" + std::to_string(run));
        const fs::path manifest = base / "manifest.json";
        fs::create_directories(base);
        std::ostringstream out, err;
        const auto call = [&](std::vector<std::string> args) { return cli_dispatch(args, out, err); };
        if (call({"prep", (dir.path() / "data").string(), "--seed", "9", "--out", manifest.string()}) != 0 ||
            call({"train", manifest.string(), "--config", (dir.path() / "config.json").string(), "--results",
                  (base / "results").string(), "--run-id", "r", "--quiet"}) != 0 ||
            call({"eval", (base / "results" / "r" / "checkpoint").string(), manifest.string()}) != 0) {
            return {false, "pipeline failed: " + err.str()};
        }
        const fs::path r = base / "results" / "r";
        std::string all;
        for (const fs::path& p : {manifest, r / "log.csv", r / "metrics.json", r / "checkpoint" / "model.json",
                                  r / "checkpoint" / "params.tnsr", r / "checkpoint" / "optimizer.tnsr"}) {
            all += slurp(p);
            all += '\x1f';
        }
        artifacts.push_back(std::move(all));
    }
    const bool same = artifacts[0] == artifacts[1];
    return {same, fmt::format("manifest, log, metrics and checkpoint files identical across runs: {} ({} bytes)", same,
                              artifacts[0].size())};
}

// 9. Comparison table row.
Verdict report_fidelity() {
    RunRecord r;
    r.model = "InceptionV3";
    r.metrics.accuracy = 0.9048;
    r.metrics.f1 = 0.9057;
    r.metrics.recall = 0.9057;
    r.metrics.precision = 0.9057;
    const auto table = emit_comparison({r});
    const std::string row = "InceptionV3 0.9048 0.9057 0.9057 0.9057\n";
    const bool ok = table.text.find("\n" + row) != std::string::npos;
    return {ok, "row \"" + row.substr(0, row.size() - 1) + "\" " + (ok ? "rendered" : "missing")};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"gradient suite", gradient_suite},
        {"BAM identity anchor", bam_identity},
        {"convolution oracle", conv_oracle},
        {"split reproduction", split_reproduction},
        {"metrics oracle", metrics_oracle},
        {"optimizer and scheduler", optimizer_conformance},
        {"training sanity", training_sanity},
        {"pipeline determinism", pipeline_determinism},
        {"report fidelity", report_fidelity},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failed += v.pass ? 0 : 1;
        std::cout << fmt::format("{} [{}] {}: {}\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail)
                  << std::flush;
    }
    std::cout << fmt::format("{}/{} criteria passed\n", criteria.size() - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
