#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace vcrb {

// Classification metrics for one (batch, configuration) evaluation.
// PR-AUC and ROC-AUC are NaN when the labels are single-class.
struct MetricsRecord {
    double precision = 0.0;
    double pr_auc = 0.0;
    double roc_auc = 0.0;
    double f1 = 0.0;
    double null_precision = 0.0;  // always-positive baseline = prevalence
    std::string batch_label;
};

MetricsRecord classification_metrics(const Eigen::VectorXi& labels,
                                     const Eigen::VectorXd& probabilities,
                                     double threshold = 0.5);

// Batch-aligned treatment/control measurements.
struct PairedSample {
    std::vector<std::string> batch_labels;
    Eigen::VectorXd treatment;
    Eigen::VectorXd control;

    Eigen::Index size() const { return treatment.size(); }
    void validate() const;
};

struct EffectSizeResult {
    double g_av = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    int n = 0;

    bool significant() const { return ci_low > 0.0 || ci_high < 0.0; }
};

// Hedge's g_av for paired data: mean difference over the average of the two
// group standard deviations, with the small-sample correction
// J = 1 - 3/(4(n-1) - 1). The CI is a seeded percentile bootstrap over
// pairs at the given confidence level.
EffectSizeResult hedges_g_av(const PairedSample& sample, double confidence = 0.95,
                             int n_resamples = 10000, std::uint64_t seed = 1);

enum class Alternative { greater, less };

struct WilcoxonResult {
    double w = 0.0;       // sum of positive ranks
    double p_value = 1.0;  // one-sided
    int n_effective = 0;   // pairs remaining after dropping zero differences
    bool exact = true;
};

// One-sided Wilcoxon signed-rank test with average ranks for ties; exact
// p by enumeration over sign assignments for n <= 25, normal approximation
// with continuity and tie corrections above.
WilcoxonResult wilcoxon_one_sided(const PairedSample& sample,
                                  Alternative alternative = Alternative::greater);

double bonferroni(double alpha, int m_tests);

// ---------------------------------------------------------------------------
// Research-question harness

// One cell of the experiment matrix: per-batch metrics for an
// (instrument, method) pair, where method is a VCRB range configuration or
// the price-level extractor.
struct MetricsCell {
    std::string instrument;
    std::string method;  // e.g. "vcrb_r7", "price_levels"
    std::vector<MetricsRecord> records;
};

// Per-batch interaction-relatedness measurements for RQ4.
struct InteractionCell {
    std::string instrument;
    std::string method;
    std::vector<std::string> batch_labels;
    Eigen::VectorXd actual_distance;
    Eigen::VectorXd null_distance;
};

struct ExperimentRecords {
    std::vector<MetricsCell> cells;
    std::vector<InteractionCell> interactions;
    std::string rq3_treatment_instrument;  // the more liquid instrument
    std::string rq3_control_instrument;
};

struct RqTest {
    std::string rq;
    std::string configuration;  // e.g. "ES vcrb_r7"
    std::string measurement;    // precision / pr_auc / footrule
    PairedSample sample;
    Alternative alternative = Alternative::greater;
    EffectSizeResult effect_raw;       // .95 CI
    EffectSizeResult effect_adjusted;  // CI widened to 1 - alpha/m
    WilcoxonResult test;
    double corrected_alpha = 0.05;
    bool reject = false;
};

struct RqReport {
    std::vector<RqTest> tests;
    std::vector<std::string> notes;  // skipped families etc.
};

// Assembles the paired samples per research question (model vs baseline
// precision; VCRB vs price-level PR-AUC; liquid vs illiquid instrument
// PR-AUC; actual vs bootstrapped Footrule distances with the reversed
// alternative) and applies Bonferroni within each family.
RqReport rq_harness(const ExperimentRecords& records, double alpha = 0.05,
                    std::uint64_t seed = 1);

// Shared numeric helpers.
double normal_cdf(double z);
double sample_sd(const Eigen::VectorXd& v);

}  // namespace vcrb
