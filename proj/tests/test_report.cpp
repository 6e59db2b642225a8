#include <gtest/gtest.h>

#include <cmath>

#include <fmt/format.h>

#include "bamnet/random.hpp"
#include "bamnet/report.hpp"

namespace bamnet {
namespace {

RunRecord record(std::string model, double ta, double tf1, double tr, double tp) {
    RunRecord r;
    r.model = std::move(model);
    r.metrics.accuracy = ta;
    r.metrics.f1 = tf1;
    r.metrics.recall = tr;
    r.metrics.precision = tp;
    return r;
}

TrainLog synthetic_log(std::size_t epochs) {
    TrainLog log;
    Rng rng(2);
    for (std::size_t e = 1; e <= epochs; ++e) {
        log.epochs.push_back({e, rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), 1e-3, 0.0});
    }
    return log;
}

TEST(Comparison, RendersTableRowExactly) {
    const auto t = emit_comparison({record("InceptionV3", 0.9048, 0.9057, 0.9057, 0.9057)});
    EXPECT_EQ(t.text, "Model TA TF1 TR TP\nInceptionV3 0.9048 0.9057 0.9057 0.9057\nbest: InceptionV3\n");
    EXPECT_EQ(t.csv, "Model,TA,TF1,TR,TP,best\nInceptionV3,0.9048,0.9057,0.9057,0.9057,1\n");
}

TEST(Comparison, SortsByAccuracyDescending) {
    const auto t = emit_comparison({record("A", 0.81, 0.8, 0.8, 0.8), record("B", 0.93, 0.9, 0.9, 0.9),
                                    record("C", 0.81, 0.7, 0.7, 0.7)});
    EXPECT_EQ(t.text,
              "Model TA TF1 TR TP\nB 0.9300 0.9000 0.9000 0.9000\nA 0.8100 0.8000 0.8000 0.8000\n"
              "C 0.8100 0.7000 0.7000 0.7000\nbest: B\n");
    const auto rows = parse_comparison_csv(t.csv);
    ASSERT_EQ(rows.size(), 3U);
    EXPECT_TRUE(rows[0].best);
    EXPECT_FALSE(rows[1].best);
    EXPECT_EQ(rows[1].model, "A");
    EXPECT_THROW(emit_comparison({}), ReportError);
}

TEST(Comparison, CsvRoundTripsAtFourDecimals) {
    Rng rng(4);
    std::vector<RunRecord> records;
    for (int i = 0; i < 50; ++i) {
        records.push_back(record(i % 7 == 0 ? "odd, \"quoted\" name" : fmt::format("model{}", i), rng.uniform(),
                                 rng.uniform(), rng.uniform(), rng.uniform()));
    }
    const auto rows = parse_comparison_csv(emit_comparison(records).csv);
    ASSERT_EQ(rows.size(), records.size());
    for (const auto& row : rows) {
        const auto it = std::find_if(records.begin(), records.end(), [&](const RunRecord& r) {
            return r.model == row.model && fmt::format("{:.4f}", r.metrics.accuracy) == fmt::format("{:.4f}", row.ta);
        });
        ASSERT_NE(it, records.end()) << row.model;
        EXPECT_EQ(fmt::format("{:.4f}", it->metrics.f1), fmt::format("{:.4f}", row.tf1));
        EXPECT_EQ(fmt::format("{:.4f}", it->metrics.recall), fmt::format("{:.4f}", row.tr));
        EXPECT_EQ(fmt::format("{:.4f}", it->metrics.precision), fmt::format("{:.4f}", row.tp));
    }
    for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_GE(rows[i - 1].ta, rows[i].ta);
}

TEST(Curves, OneRowPerEpoch) {
    const auto c = emit_curves(synthetic_log(100));
    EXPECT_EQ(std::count(c.loss.begin(), c.loss.end(), '\n'), 101);
    EXPECT_EQ(std::count(c.accuracy.begin(), c.accuracy.end(), '\n'), 101);
    EXPECT_EQ(c.loss.substr(0, c.loss.find('\n')), "epoch,train_loss,val_loss");
    EXPECT_EQ(c.accuracy.substr(0, c.accuracy.find('\n')), "epoch,train_acc,val_acc");

    const auto one = emit_curves(synthetic_log(1));
    EXPECT_EQ(std::count(one.loss.begin(), one.loss.end(), '\n'), 2);
    EXPECT_THROW(emit_curves(TrainLog{}), ReportError);
}

TEST(Curves, ReEmissionIsByteIdentical) {
    const std::string csv = synthetic_log(30).to_csv();
    const auto a = emit_curves(csv);
    const auto b = emit_curves(csv);
    EXPECT_EQ(a.loss, b.loss);
    EXPECT_EQ(a.accuracy, b.accuracy);
    // Values survive unchanged from the log.
    const auto log = TrainLog::from_csv(csv);
    EXPECT_NE(a.loss.find(fmt::format("\n7,{},{}\n", log.epochs[6].train_loss, log.epochs[6].val_loss)),
              std::string::npos);
}

TEST(Curves, MalformedRowNamesLine) {
    const std::string csv = std::string(TrainLog::kHeader) + "\n1,0.5,0.5,0.5,0.5,0.001\n2,0.5,0.5\n";
    try {
        emit_curves(csv);
        FAIL();
    } catch (const ReportError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
}

}  // namespace
}  // namespace bamnet
