#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bamnet/train.hpp"

namespace bamnet {

class ReportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Loss and accuracy series, one row per epoch, each with train and
/// validation columns.
struct CurveFiles {
    std::string loss;      // epoch,train_loss,val_loss
    std::string accuracy;  // epoch,train_acc,val_acc
};

/// Throws ReportError on an empty log.
CurveFiles emit_curves(const TrainLog& log);
/// Parses log.csv text first; a malformed row is rejected naming its line.
CurveFiles emit_curves(const std::string& log_csv);
/// Reads `log_csv` and writes loss.csv and accuracy.csv into `out_dir`.
void write_curves(const std::filesystem::path& log_csv, const std::filesystem::path& out_dir);

struct RunRecord {
    std::string run_id;
    std::string model;
    nlohmann::json config;
    MetricsReport metrics;
    std::filesystem::path log;
};

struct ComparisonTable {
    /// "Model TA TF1 TR TP" header, one space-separated row per run with
    /// four-decimal values, then a "best: <model>" line.
    std::string text;
    /// Model,TA,TF1,TR,TP,best with the same values and a 0/1 best flag.
    std::string csv;
};

/// Rows sorted by test accuracy, highest first (ties keep input order); the
/// first row is flagged best. Throws ReportError when `records` is empty.
ComparisonTable emit_comparison(const std::vector<RunRecord>& records);

struct ComparisonRow {
    std::string model;
    double ta = 0.0;
    double tf1 = 0.0;
    double tr = 0.0;
    double tp = 0.0;
    bool best = false;
};

/// Reads back the CSV form of emit_comparison.
std::vector<ComparisonRow> parse_comparison_csv(const std::string& csv);

/// Records of every results/<run-id>/ holding metrics.json, sorted by run id.
/// `averaging` picks which metrics block of metrics.json is reported.
std::vector<RunRecord> collect_runs(const std::filesystem::path& results_dir,
                                    Averaging averaging = Averaging::Micro);

/// metrics.json content for a run evaluated on `split`.
nlohmann::json metrics_document(const std::string& model, const std::string& split, const ConfusionCounts& counts);

}  // namespace bamnet
