#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vcrb/stats.hpp"

namespace vcrb {

// Feature matrix with NaN encoding missing values, plus binary labels.
// Rows are chronological unless noted otherwise.
struct Dataset {
    std::vector<std::string> feature_names;
    Eigen::MatrixXd x;
    Eigen::VectorXi y;
    bool chronological = true;

    Eigen::Index rows() const { return x.rows(); }
    Eigen::Index cols() const { return x.cols(); }
    void validate() const;
    Dataset select_features(const std::vector<std::string>& names) const;
    Dataset slice_rows(Eigen::Index begin, Eigen::Index end) const;
};

struct GbdtParams {
    int iterations = 300;
    int max_depth = 3;
    double learning_rate = 0.1;
    double l2 = 1.0;
    bool has_time = true;
    std::uint64_t seed = 0;

    void validate() const;
    std::string describe() const;
};

struct TreeNode {
    bool is_leaf = true;
    int feature = -1;
    double threshold = 0.0;
    bool missing_left = true;
    int left = -1;
    int right = -1;
    double leaf_value = 0.0;
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    int route(const Eigen::RowVectorXd& row) const;  // leaf node index
    double value(const Eigen::RowVectorXd& row) const;
};

struct GbdtModel {
    double base_score = 0.0;
    double learning_rate = 0.1;
    std::vector<Tree> trees;
    std::vector<std::string> feature_names;
    std::int64_t training_rows = 0;
    std::vector<double> split_gain;  // total gain per feature over all splits

    double margin_row(const Eigen::RowVectorXd& row) const;
    Eigen::VectorXd margin(const Eigen::MatrixXd& x) const;
    Eigen::VectorXd proba(const Eigen::MatrixXd& x) const;
};

// Per-tree quadratic-objective accounting, used to audit that recorded
// split gains telescope to the tree's total score improvement.
struct TrainDiagnostics {
    struct TreeDiag {
        double root_score = 0.0;
        double leaf_score_sum = 0.0;
        double split_gain_sum = 0.0;
    };
    std::vector<TreeDiag> trees;
};

// Gradient boosting on logistic loss with exact greedy splits, Newton leaf
// values with l2 in the denominator, and learned default directions for
// missing values.
GbdtModel train(const Dataset& dataset, const GbdtParams& params,
                TrainDiagnostics* diagnostics = nullptr);

// Predictions for a dataset carrying at least the model's features
// (matched by name; extra columns ignored; unknown model features throw).
Eigen::VectorXd predict_margin(const GbdtModel& model, const Dataset& dataset);
Eigen::VectorXd predict_proba(const GbdtModel& model, const Dataset& dataset);

// Loss-reduction gain per feature, normalized to sum to one.
std::vector<double> feature_importance(const GbdtModel& model);

// Recursive feature elimination (step 1) scored by k-fold chronological
// expanding-window CV precision; ties resolved toward fewer features.
struct RfecvResult {
    std::vector<std::string> selected;
    std::vector<double> precision_trace;              // one entry per evaluated subset
    std::vector<std::vector<std::string>> subsets;    // aligned with the trace
};
RfecvResult rfecv(const Dataset& dataset, const GbdtParams& params, int folds = 3);

struct TuningSpec {
    std::vector<int> iterations = {100, 300, 500};
    std::vector<int> max_depth = {3, 5, 7};
    std::vector<double> l2 = {1.0, 3.0, 10.0};
    std::vector<bool> has_time = {true, false};

    void validate() const;
};

struct TuneRow {
    GbdtParams params;
    double mean_precision = 0.0;
};

struct TuneResult {
    GbdtParams best;
    std::vector<TuneRow> table;
};

TuneResult tune(const Dataset& dataset, const TuningSpec& spec, const GbdtParams& base,
                int folds = 3);

// Walk-forward evaluation: batch N trains (RFECV + grid tuning + final
// refit), batch N+1 tests. Batches without usable training data are
// skipped with a logged reason.
struct BatchDataset {
    std::string label;
    Dataset train;
    Dataset test;
};

struct WalkForwardOptions {
    bool run_rfecv = true;
    int folds = 3;
};

struct WalkForwardRecord {
    std::string train_label;
    std::string test_label;
    MetricsRecord metrics;
    std::vector<std::string> selected_features;
    GbdtParams best_params;
    Eigen::VectorXd test_probabilities;  // aligned with the test dataset rows
};

std::vector<WalkForwardRecord> walk_forward(const std::vector<BatchDataset>& batches,
                                            const TuningSpec& spec, const GbdtParams& base,
                                            const WalkForwardOptions& options = {});

// Documented interchange text format consumed by the explainability stage.
void save_model(const std::string& path, const GbdtModel& model);
GbdtModel load_model(const std::string& path);

// Mean CV precision of `params` on a chronologically ordered dataset.
double cv_precision(const Dataset& dataset, const GbdtParams& params, int folds);

}  // namespace vcrb
