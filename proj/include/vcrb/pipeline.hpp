#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vcrb/backtest.hpp"
#include "vcrb/explain.hpp"
#include "vcrb/features.hpp"
#include "vcrb/gbdt.hpp"
#include "vcrb/labeling.hpp"
#include "vcrb/market_data.hpp"
#include "vcrb/stats.hpp"

namespace vcrb {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class StageError : public std::runtime_error {
public:
    StageError(const std::string& stage, const std::string& what)
        : std::runtime_error("stage " + stage + ": " + what), stage_name(stage) {}
    std::string stage_name;
};

struct InstrumentConfig {
    std::string name;
    InstrumentSpec spec;
    std::string source;  // "synthetic" or "file"
    std::string path;    // for source == "file"
    SyntheticConfig synthetic;
};

struct ExplainConfig {
    bool enabled = true;
    std::vector<std::string> features;  // fixed RQ4 feature space
    GbdtParams params;
    int background_rows = 100;
    int explain_rows = 50;
    int n_boot = 500;
    int max_features = 15;
    int threads = 1;
};

struct SharpeConfig {
    double risk_free_annual = 0.05;
    int window_days = 252;
    int smooth_days = 90;
};

struct RunConfig {
    std::uint64_t seed = 42;
    std::string out_dir = "runs/out";
    int months_per_batch = 3;
    std::vector<InstrumentConfig> instruments;
    std::vector<int> ranges = {5, 7, 9, 11};
    bool price_levels_enabled = false;
    int pl_lookback_ticks = 500;
    int pl_rejection_ticks = 15;
    LabelConfig label;
    FeatureConfig features;
    GbdtParams base_params;
    int cv_folds = 3;
    bool run_rfecv = true;
    TuningSpec tuning;
    ExplainConfig explain;
    StrategyConfig strategy;
    SharpeConfig sharpe;
    std::string rq3_treatment;
    std::string rq3_control;

    void validate() const;
};

// Parses and validates the config file; unknown keys are rejected.
RunConfig load_config(const std::string& path);
RunConfig parse_config_json(const std::string& text, const std::string& origin);

const std::vector<std::string>& stage_names();  // the 8 pipeline stages

struct StageRequest {
    RunConfig config;
    std::optional<std::uint64_t> seed_override;
    std::optional<std::string> out_override;
    bool dry_run = false;  // extract: print counts, write nothing
};

// Runs one named stage (or all of them for run_pipeline), writing artifacts
// and updating the manifest. Missing upstream artifacts raise StageError
// naming the file.
void run_stage(const std::string& stage, StageRequest request);
void run_pipeline(StageRequest request);

// Content hash used in the manifest (FNV-1a 64, hex).
std::string file_hash(const std::string& path);
std::string text_hash(const std::string& text);

}  // namespace vcrb
