#include "vcrb/pipeline.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace vcrb;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

// small planted-signal run: one instrument, one range, single tuning point
std::string mini_config_json(const std::string& out_dir) {
    std::ostringstream ss;
    ss << R"({
  "seed": 42,
  "out_dir": ")" << out_dir << R"(",
  "months_per_batch": 3,
  "instruments": [
    {"name": "SYN", "tick_size": 0.25, "source": "synthetic",
     "synthetic": {"n_ticks": 30000, "signal_delta": 0.2, "ts_step_ms": 1580000}}
  ],
  "ranges": [5],
  "label": {"expiry_ticks": 2000},
  "features": {"long_window": 40, "short_window": 10},
  "model": {"learning_rate": 0.1, "folds": 3, "run_rfecv": false},
  "tuning": {"iterations": [40], "max_depth": [3], "l2": [1.0], "has_time": [true]},
  "explain": {"enabled": true,
              "features": ["P0", "P8", "P12_0", "P12_m1", "P14", "MS0"],
              "params": {"iterations": 25, "max_depth": 3},
              "background_rows": 24, "explain_rows": 6, "n_boot": 60},
  "strategy": {"notional_ticks": 500.0},
  "sharpe": {"window_days": 60, "smooth_days": 20}
})";
    return ss.str();
}

RunConfig mini_config(const std::string& out_dir) {
    return parse_config_json(mini_config_json(out_dir), "test-config");
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Config, EvenRangeRejectedBeforeAnyWork) {
    std::string json = mini_config_json("/tmp/never_used");
    auto pos = json.find("\"ranges\": [5]");
    ASSERT_NE(pos, std::string::npos);
    json.replace(pos, std::string("\"ranges\": [5]").size(), "\"ranges\": [6]");
    EXPECT_THROW(parse_config_json(json, "test"), ConfigError);
}

TEST(Config, UnknownKeysRejected) {
    EXPECT_THROW(parse_config_json(R"({"seed": 1, "bogus": 2})", "test"), ConfigError);
    EXPECT_THROW(parse_config_json(
                     R"({"instruments": [{"name": "A", "source": "synthetic", "oops": 1}]})",
                     "test"),
                 ConfigError);
    EXPECT_THROW(parse_config_json(R"({"label": {"reversal": 15}})", "test"), ConfigError);
}

TEST(Config, RequiresInstruments) {
    EXPECT_THROW(parse_config_json(R"({"seed": 1})", "test"), ConfigError);
    EXPECT_THROW(parse_config_json(R"({"instruments": []})", "test"), ConfigError);
}

TEST(Config, FileSourceNeedsPath) {
    EXPECT_THROW(
        parse_config_json(R"({"instruments": [{"name": "A", "source": "file"}]})", "test"),
        ConfigError);
    EXPECT_THROW(
        parse_config_json(R"({"instruments": [{"name": "A", "source": "nope"}]})", "test"),
        ConfigError);
}

TEST(Config, UnknownExplainFeatureRejected) {
    std::string json = mini_config_json("/tmp/never_used2");
    auto pos = json.find("\"P0\"");
    json.replace(pos, 4, "\"ZZ\"");
    EXPECT_THROW(parse_config_json(json, "test"), ConfigError);
}

TEST(Pipeline, FullRunWritesAllStagesAndManifest) {
    std::string out = fresh_dir("vcrb_pipeline_full");
    StageRequest req;
    req.config = mini_config(out);
    run_pipeline(req);

    for (const std::string& stage : stage_names()) SCOPED_TRACE(stage);
    // manifest lists all 8 stages
    std::string manifest = slurp(out + "/manifest.json");
    for (const std::string& stage : stage_names())
        EXPECT_NE(manifest.find("\"" + stage + "\""), std::string::npos) << stage;

    EXPECT_TRUE(fs::exists(out + "/ticks/SYN.csv"));
    EXPECT_TRUE(fs::exists(out + "/events/SYN_vcrb_r5.tsv"));
    EXPECT_TRUE(fs::exists(out + "/labeled/SYN_vcrb_r5.tsv"));
    EXPECT_TRUE(fs::exists(out + "/features/SYN_vcrb_r5.tsv"));
    EXPECT_TRUE(fs::exists(out + "/metrics/SYN_vcrb_r5.tsv"));
    EXPECT_TRUE(fs::exists(out + "/predictions/SYN_vcrb_r5.tsv"));
    EXPECT_TRUE(fs::exists(out + "/explain/SYN_vcrb_r5_distances.tsv"));
    EXPECT_TRUE(fs::exists(out + "/backtest/SYN_vcrb_r5_trades.tsv"));
    EXPECT_TRUE(fs::exists(out + "/backtest/SYN_vcrb_r5_equity.tsv"));
    EXPECT_TRUE(fs::exists(out + "/stats/report.txt"));
    EXPECT_TRUE(fs::exists(out + "/stats/rq_tests.tsv"));
    EXPECT_FALSE(fs::exists(out + "/.lock"));  // released

    // walk-forward produced at least a few evaluation pairs
    std::string metrics = slurp(out + "/metrics/SYN_vcrb_r5.tsv");
    EXPECT_GT(std::count(metrics.begin(), metrics.end(), '\n'), 3);
}

TEST(Pipeline, RerunIsByteIdenticalAndCached) {
    std::string out_a = fresh_dir("vcrb_pipeline_a");
    std::string out_b = fresh_dir("vcrb_pipeline_b");
    StageRequest req_a;
    req_a.config = mini_config(out_a);
    run_pipeline(req_a);
    StageRequest req_b;
    req_b.config = mini_config(out_a);
    req_b.out_override = out_b;
    run_pipeline(req_b);

    for (const std::string& rel :
         {std::string("metrics/SYN_vcrb_r5.tsv"), std::string("stats/report.txt"),
          std::string("stats/rq_tests.tsv"), std::string("backtest/SYN_vcrb_r5_equity.tsv"),
          std::string("explain/SYN_vcrb_r5_distances.tsv")}) {
        EXPECT_EQ(slurp(out_a + "/" + rel), slurp(out_b + "/" + rel)) << rel;
    }
}

TEST(Pipeline, DeletedDownstreamArtifactIsReproducedBitIdentically) {
    std::string out = fresh_dir("vcrb_pipeline_resume");
    StageRequest req;
    req.config = mini_config(out);
    run_pipeline(req);
    std::string before = slurp(out + "/stats/report.txt");
    std::string metrics_before = slurp(out + "/metrics/SYN_vcrb_r5.tsv");

    fs::remove(out + "/stats/report.txt");
    fs::remove(out + "/stats/rq_tests.tsv");
    run_pipeline(req);  // earlier stages cached, stats reproduced
    EXPECT_EQ(slurp(out + "/stats/report.txt"), before);
    EXPECT_EQ(slurp(out + "/metrics/SYN_vcrb_r5.tsv"), metrics_before);
}

TEST(Pipeline, DryRunExtractWritesNothing) {
    std::string out = fresh_dir("vcrb_pipeline_dry");
    StageRequest req;
    req.config = mini_config(out);
    run_stage("ingest", req);
    StageRequest dry = req;
    dry.dry_run = true;
    run_stage("extract", dry);
    EXPECT_FALSE(fs::exists(out + "/events/SYN_vcrb_r5.tsv"));
}

TEST(Pipeline, MissingUpstreamArtifactNamedExplicitly) {
    std::string out = fresh_dir("vcrb_pipeline_missing");
    StageRequest req;
    req.config = mini_config(out);
    try {
        run_stage("train", req);
        FAIL() << "expected StageError";
    } catch (const StageError& e) {
        EXPECT_NE(std::string(e.what()).find("missing upstream artifact"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("features/SYN_vcrb_r5.tsv"), std::string::npos);
    }
}

TEST(Pipeline, LockFileGuardsRunDirectory) {
    std::string out = fresh_dir("vcrb_pipeline_lock");
    std::ofstream(out + "/.lock") << "held\n";
    StageRequest req;
    req.config = mini_config(out);
    EXPECT_THROW(run_pipeline(req), StageError);
    fs::remove(out + "/.lock");
}

TEST(Pipeline, StatsStageReproducesWilcoxonOnHandWrittenMetrics) {
    std::string out = fresh_dir("vcrb_pipeline_stats_fixture");
    std::string json = R"({
  "seed": 1,
  "out_dir": ")" + out + R"(",
  "instruments": [
    {"name": "SYN", "tick_size": 0.25, "source": "synthetic",
     "synthetic": {"n_ticks": 1000}}
  ],
  "ranges": [5],
  "explain": {"enabled": false}
})";
    StageRequest req;
    req.config = parse_config_json(json, "fixture");

    // hand-written walk-forward table: 13 batches, model above baseline in
    // every one -> the signed-rank statistic must be 13*14/2 = 91
    fs::create_directories(out + "/metrics");
    std::ofstream m(out + "/metrics/SYN_vcrb_r5.tsv");
    m << "train_batch\ttest_batch\tprecision\tpr_auc\troc_auc\tf1\tnull_precision\tn_test\t"
         "selected_features\tparams\n";
    for (int i = 0; i < 13; ++i)
        m << "b" << i << "\tb" << i + 1 << "\t" << 0.44 + 0.002 * i << "\t0.45\t0.57\t0.44\t"
          << 0.39 + 0.001 * i << "\t100\tP0\tdefault\n";
    m.close();

    run_stage("stats", req);
    std::string table = slurp(out + "/stats/rq_tests.tsv");
    ASSERT_NE(table.find("RQ1"), std::string::npos);
    EXPECT_NE(table.find("\t91\t"), std::string::npos) << table;
    std::string report = slurp(out + "/stats/report.txt");
    EXPECT_NE(report.find("reject H0"), std::string::npos);
}

TEST(Pipeline, SeedOverrideChangesManifestSeed) {
    std::string out = fresh_dir("vcrb_pipeline_seed");
    StageRequest req;
    req.config = mini_config(out);
    req.seed_override = 777;
    run_stage("ingest", req);
    std::string manifest = slurp(out + "/manifest.json");
    EXPECT_NE(manifest.find("777"), std::string::npos);
}
