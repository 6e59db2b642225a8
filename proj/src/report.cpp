#include "bamnet/report.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace bamnet {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ReportError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw ReportError("cannot write " + path.string());
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"' && cur.empty()) {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted) throw ReportError("table line " + std::to_string(line_no) + ": unterminated quote");
    fields.push_back(std::move(cur));
    return fields;
}

double parse_number(const std::string& s, std::size_t line_no) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ReportError("table line " + std::to_string(line_no) + ": malformed number '" + s + "'");
    }
    return v;
}

const char* metrics_key(Averaging a) {
    switch (a) {
        case Averaging::PerClass: return "per_class";
        case Averaging::Macro: return "macro";
        case Averaging::Micro: return "micro";
    }
    return "micro";
}

}  // namespace

CurveFiles emit_curves(const TrainLog& log) {
    if (log.epochs.empty()) throw ReportError("training log has no epochs");
    CurveFiles out{"epoch,train_loss,val_loss\n", "epoch,train_acc,val_acc\n"};
    for (const auto& e : log.epochs) {
        out.loss += fmt::format("{},{},{}\n", e.epoch, e.train_loss, e.val_loss);
        out.accuracy += fmt::format("{},{},{}\n", e.epoch, e.train_acc, e.val_acc);
    }
    return out;
}

CurveFiles emit_curves(const std::string& log_csv) {
    TrainLog log;
    try {
        log = TrainLog::from_csv(log_csv);
    } catch (const TrainError& e) {
        throw ReportError(e.what());
    }
    return emit_curves(log);
}

void write_curves(const fs::path& log_csv, const fs::path& out_dir) {
    const CurveFiles c = emit_curves(read_text(log_csv));
    fs::create_directories(out_dir);
    write_text(out_dir / "loss.csv", c.loss);
    write_text(out_dir / "accuracy.csv", c.accuracy);
}

ComparisonTable emit_comparison(const std::vector<RunRecord>& records) {
    if (records.empty()) throw ReportError("no runs to compare");
    std::vector<const RunRecord*> rows;
    for (const auto& r : records) rows.push_back(&r);
    std::stable_sort(rows.begin(), rows.end(),
                     [](const RunRecord* a, const RunRecord* b) { return a->metrics.accuracy > b->metrics.accuracy; });
    ComparisonTable t{"Model TA TF1 TR TP\n", "Model,TA,TF1,TR,TP,best\n"};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const MetricsReport& m = rows[i]->metrics;
        const std::string values = fmt::format("{:.4f} {:.4f} {:.4f} {:.4f}", m.accuracy, m.f1, m.recall, m.precision);
        t.text += rows[i]->model + " " + values + "\n";
        std::string csv_values = values;
        std::replace(csv_values.begin(), csv_values.end(), ' ', ',');
        t.csv += csv_field(rows[i]->model) + "," + csv_values + "," + (i == 0 ? "1" : "0") + "\n";
    }
    t.text += "best: " + rows.front()->model + "\n";
    return t;
}

std::vector<ComparisonRow> parse_comparison_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    std::size_t line_no = 0;
    std::vector<ComparisonRow> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1) {
            if (line != "Model,TA,TF1,TR,TP,best") throw ReportError("table line 1: unexpected header");
            continue;
        }
        if (line.empty()) continue;
        const auto f = split_csv_line(line, line_no);
        if (f.size() != 6) throw ReportError("table line " + std::to_string(line_no) + ": expected 6 fields");
        if (f[5] != "0" && f[5] != "1") throw ReportError("table line " + std::to_string(line_no) + ": bad best flag");
        rows.push_back({f[0], parse_number(f[1], line_no), parse_number(f[2], line_no), parse_number(f[3], line_no),
                        parse_number(f[4], line_no), f[5] == "1"});
    }
    return rows;
}

nlohmann::json metrics_document(const std::string& model, const std::string& split, const ConfusionCounts& counts) {
    return {
        {"model", model},
        {"split", split},
        {"samples", counts.total()},
        {"counts", to_json(counts)},
        {"averaging", to_string(Averaging::Micro)},
        {"micro", to_json(metrics_from_counts(counts, Averaging::Micro))},
        {"macro", to_json(metrics_from_counts(counts, Averaging::Macro))},
        {"per_class", to_json(metrics_from_counts(counts, Averaging::PerClass))},
    };
}

std::vector<RunRecord> collect_runs(const fs::path& results_dir, Averaging averaging) {
    if (!fs::is_directory(results_dir)) throw ReportError("results directory " + results_dir.string() + " not found");
    std::vector<fs::path> dirs;
    for (const auto& item : fs::directory_iterator(results_dir)) {
        if (item.is_directory() && fs::exists(item.path() / "metrics.json")) dirs.push_back(item.path());
    }
    std::sort(dirs.begin(), dirs.end());
    std::vector<RunRecord> out;
    for (const auto& dir : dirs) {
        try {
            const auto metrics = nlohmann::json::parse(read_text(dir / "metrics.json"));
            RunRecord r;
            r.run_id = dir.filename().string();
            r.model = metrics.at("model").get<std::string>();
            r.metrics = metrics_from_json(metrics.at(metrics_key(averaging)));
            if (fs::exists(dir / "config.json")) r.config = nlohmann::json::parse(read_text(dir / "config.json"));
            r.log = dir / "log.csv";
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw ReportError((dir / "metrics.json").string() + ": " + e.what());
        } catch (const std::invalid_argument& e) {
            throw ReportError((dir / "metrics.json").string() + ": " + e.what());
        }
    }
    return out;
}

}  // namespace bamnet
