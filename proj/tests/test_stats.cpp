#include "vcrb/stats.hpp"

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vcrb/random.hpp"

using namespace vcrb;

namespace {

PairedSample sample_of(std::vector<double> treatment, std::vector<double> control) {
    PairedSample s;
    s.treatment = Eigen::Map<Eigen::VectorXd>(treatment.data(),
                                              static_cast<Eigen::Index>(treatment.size()));
    s.control =
        Eigen::Map<Eigen::VectorXd>(control.data(), static_cast<Eigen::Index>(control.size()));
    return s;
}

}  // namespace

TEST(ClassificationMetrics, PerfectScoresAreAllOne) {
    Eigen::VectorXi y(6);
    y << 1, 1, 1, 0, 0, 0;
    Eigen::VectorXd p(6);
    p << 0.9, 0.8, 0.7, 0.2, 0.1, 0.3;
    MetricsRecord m = classification_metrics(y, p);
    EXPECT_DOUBLE_EQ(m.precision, 1.0);
    EXPECT_DOUBLE_EQ(m.f1, 1.0);
    EXPECT_DOUBLE_EQ(m.pr_auc, 1.0);
    EXPECT_DOUBLE_EQ(m.roc_auc, 1.0);
    EXPECT_DOUBLE_EQ(m.null_precision, 0.5);
}

TEST(ClassificationMetrics, ConstantScoresAreNoSkill) {
    Eigen::VectorXi y(10);
    Eigen::VectorXd p = Eigen::VectorXd::Constant(10, 0.7);
    for (int i = 0; i < 10; ++i) y[i] = i < 3 ? 1 : 0;
    MetricsRecord m = classification_metrics(y, p);
    EXPECT_DOUBLE_EQ(m.roc_auc, 0.5);
    EXPECT_DOUBLE_EQ(m.pr_auc, 0.3);  // prevalence
    EXPECT_DOUBLE_EQ(m.null_precision, 0.3);
}

TEST(ClassificationMetrics, SingleClassAucUndefined) {
    Eigen::VectorXi y = Eigen::VectorXi::Ones(5);
    Eigen::VectorXd p = Eigen::VectorXd::Constant(5, 0.6);
    MetricsRecord m = classification_metrics(y, p);
    EXPECT_TRUE(std::isnan(m.pr_auc));
    EXPECT_TRUE(std::isnan(m.roc_auc));
    EXPECT_DOUBLE_EQ(m.precision, 1.0);
    EXPECT_THROW(classification_metrics(Eigen::VectorXi(0), Eigen::VectorXd(0)),
                 std::invalid_argument);
}

TEST(ClassificationMetrics, MatchesBruteForceOraclesOnRandomFixtures) {
    Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        int n = 4 + static_cast<int>(rng.uniform(17));  // up to 20 samples
        std::vector<int> y(static_cast<std::size_t>(n));
        std::vector<double> p(static_cast<std::size_t>(n));
        bool pos = false, neg = false;
        for (int i = 0; i < n; ++i) {
            y[static_cast<std::size_t>(i)] = rng.bernoulli(0.4) ? 1 : 0;
            // coarse grid forces plenty of tied scores
            p[static_cast<std::size_t>(i)] = rng.uniform_int(0, 4) / 4.0;
            (y[static_cast<std::size_t>(i)] ? pos : neg) = true;
        }
        if (!pos || !neg) continue;
        Eigen::VectorXi ey = Eigen::Map<Eigen::VectorXi>(y.data(), n);
        Eigen::VectorXd ep = Eigen::Map<Eigen::VectorXd>(p.data(), n);
        MetricsRecord m = classification_metrics(ey, ep);
        EXPECT_NEAR(m.roc_auc, vcrb_test::pairwise_roc_auc(y, p), 1e-12) << trial;
        EXPECT_NEAR(m.pr_auc, vcrb_test::naive_average_precision(y, p), 1e-12) << trial;

        // threshold metrics against a naive recount
        std::int64_t tp = 0, fp = 0, fn = 0;
        for (int i = 0; i < n; ++i) {
            bool pred = p[static_cast<std::size_t>(i)] > 0.5;
            if (pred && y[static_cast<std::size_t>(i)]) ++tp;
            if (pred && !y[static_cast<std::size_t>(i)]) ++fp;
            if (!pred && y[static_cast<std::size_t>(i)]) ++fn;
        }
        double precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        double recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
        EXPECT_DOUBLE_EQ(m.precision, precision);
        EXPECT_DOUBLE_EQ(m.f1, f1);
        double prevalence = 0.0;
        for (int v : y) prevalence += v;
        EXPECT_DOUBLE_EQ(m.null_precision, prevalence / n);
    }
}

TEST(HedgesGAv, EqualGroupsHaveZeroEffect) {
    PairedSample s = sample_of({0.4, 0.5, 0.6, 0.45, 0.55}, {0.4, 0.5, 0.6, 0.45, 0.55});
    EffectSizeResult r = hedges_g_av(s);
    EXPECT_DOUBLE_EQ(r.g_av, 0.0);
    EXPECT_LE(r.ci_low, 0.0);
    EXPECT_GE(r.ci_high, 0.0);
    EXPECT_FALSE(r.significant());
}

TEST(HedgesGAv, ZeroPooledSdIsError) {
    PairedSample s = sample_of({1, 1, 1, 1, 1}, {0, 0, 0, 0, 0});
    EXPECT_THROW(hedges_g_av(s), std::invalid_argument);
}

TEST(HedgesGAv, CorrectionFactorAtThirteen) {
    // constant shift: d_av = mean(diff) / mean(sd), and J = 1 - 3/47
    Rng rng(4);
    const int n = 13;
    std::vector<double> control(n), treatment(n);
    for (int i = 0; i < n; ++i) {
        control[static_cast<std::size_t>(i)] = rng.normal(0.0, 1.0);
        treatment[static_cast<std::size_t>(i)] = control[static_cast<std::size_t>(i)] + 0.7;
    }
    PairedSample s = sample_of(treatment, control);
    EffectSizeResult r = hedges_g_av(s);
    Eigen::VectorXd c = s.control;
    double sd = sample_sd(c);
    double expected = (1.0 - 3.0 / 47.0) * 0.7 / sd;
    EXPECT_NEAR(r.g_av, expected, 1e-12);
    EXPECT_NEAR(1.0 - 3.0 / 47.0, 0.93617021276595744, 1e-15);
}

TEST(HedgesGAv, SignAndScaleInvariance) {
    Rng rng(6);
    std::vector<double> c(8), t(8);
    for (int i = 0; i < 8; ++i) {
        c[static_cast<std::size_t>(i)] = rng.normal(0.3, 0.05);
        t[static_cast<std::size_t>(i)] = c[static_cast<std::size_t>(i)] + rng.normal(0.02, 0.01);
    }
    PairedSample s = sample_of(t, c);
    EffectSizeResult r = hedges_g_av(s);
    double mean_diff = (s.treatment - s.control).mean();
    EXPECT_GT(r.g_av * mean_diff, 0.0);  // same sign

    PairedSample scaled = s;
    scaled.treatment *= 7.0;
    scaled.control *= 7.0;
    EffectSizeResult rs = hedges_g_av(scaled);
    EXPECT_NEAR(rs.g_av, r.g_av, 1e-12);
}

TEST(HedgesGAv, BootstrapCiIsDeterministicAndOrdered) {
    Rng rng(10);
    std::vector<double> c(10), t(10);
    for (int i = 0; i < 10; ++i) {
        c[static_cast<std::size_t>(i)] = rng.normal(0.4, 0.02);
        t[static_cast<std::size_t>(i)] = c[static_cast<std::size_t>(i)] + 0.03 + rng.normal(0, 0.01);
    }
    PairedSample s = sample_of(t, c);
    EffectSizeResult a = hedges_g_av(s, 0.95, 2000, 7);
    EffectSizeResult b = hedges_g_av(s, 0.95, 2000, 7);
    EXPECT_DOUBLE_EQ(a.ci_low, b.ci_low);
    EXPECT_DOUBLE_EQ(a.ci_high, b.ci_high);
    EXPECT_LE(a.ci_low, a.g_av);
    EXPECT_GE(a.ci_high, a.g_av);
    // adjusted (wider) interval contains the raw one
    EffectSizeResult adj = hedges_g_av(s, 1.0 - 0.05 / 8, 2000, 7);
    EXPECT_LE(adj.ci_low, a.ci_low);
    EXPECT_GE(adj.ci_high, a.ci_high);
}

TEST(Wilcoxon, ThirteenPositiveDifferencesMatchPaperStatistic) {
    std::vector<double> t(13), c(13);
    for (int i = 0; i < 13; ++i) {
        c[static_cast<std::size_t>(i)] = 0.1 * i;
        t[static_cast<std::size_t>(i)] = c[static_cast<std::size_t>(i)] + 0.01 * (i + 1);
    }
    WilcoxonResult r = wilcoxon_one_sided(sample_of(t, c));
    EXPECT_DOUBLE_EQ(r.w, 91.0);
    EXPECT_NEAR(r.p_value, 1.220703125e-4, 1e-12);
    EXPECT_TRUE(r.exact);
}

TEST(Wilcoxon, SinglePairPositive) {
    WilcoxonResult r = wilcoxon_one_sided(sample_of({1.0, 2.0}, {0.5, 2.0}));
    // the zero difference drops, leaving one positive pair
    EXPECT_EQ(r.n_effective, 1);
    EXPECT_DOUBLE_EQ(r.w, 1.0);
    EXPECT_DOUBLE_EQ(r.p_value, 0.5);
}

TEST(Wilcoxon, SymmetricPairGivesThreeQuarters) {
    WilcoxonResult r = wilcoxon_one_sided(sample_of({1.0, -1.0}, {0.0, 0.0}));
    // |d| ties average to rank 1.5 each; W = 1.5 and P(W* >= 1.5) = 3/4
    EXPECT_DOUBLE_EQ(r.w, 1.5);
    EXPECT_DOUBLE_EQ(r.p_value, 0.75);
}

TEST(Wilcoxon, AllZeroDifferencesError) {
    EXPECT_THROW(wilcoxon_one_sided(sample_of({1, 2}, {1, 2})), std::invalid_argument);
}

TEST(Wilcoxon, LessAlternativeFlipsDifferences) {
    std::vector<double> t = {1, 2, 3, 4, 5};
    std::vector<double> c = {2, 3, 4, 5, 6};
    WilcoxonResult less = wilcoxon_one_sided(sample_of(t, c), Alternative::less);
    EXPECT_DOUBLE_EQ(less.w, 15.0);  // all flipped differences positive
    EXPECT_NEAR(less.p_value, 1.0 / 32.0, 1e-12);
}

TEST(Wilcoxon, ExactMatchesNaiveEnumerationOnRandomFixtures) {
    Rng rng(2718);
    for (int trial = 0; trial < 100; ++trial) {
        int n = 1 + static_cast<int>(rng.uniform(10));
        std::vector<double> t(static_cast<std::size_t>(n)), c(static_cast<std::size_t>(n));
        std::vector<double> diffs;
        for (int i = 0; i < n; ++i) {
            c[static_cast<std::size_t>(i)] = rng.uniform_int(0, 10) / 10.0;
            // coarse grid produces ties and occasional zeros
            t[static_cast<std::size_t>(i)] =
                c[static_cast<std::size_t>(i)] + rng.uniform_int(-3, 3) / 10.0;
            diffs.push_back(t[static_cast<std::size_t>(i)] - c[static_cast<std::size_t>(i)]);
        }
        bool all_zero = true;
        for (double d : diffs) all_zero &= d == 0.0;
        if (all_zero) continue;
        WilcoxonResult r = wilcoxon_one_sided(sample_of(t, c));
        EXPECT_NEAR(r.p_value, vcrb_test::naive_wilcoxon_p(diffs), 1e-12) << "trial " << trial;
    }
}

TEST(Wilcoxon, NormalApproximationAboveCutoff) {
    Rng rng(33);
    std::vector<double> t(40), c(40);
    for (int i = 0; i < 40; ++i) {
        c[static_cast<std::size_t>(i)] = rng.normal(0, 1);
        t[static_cast<std::size_t>(i)] = c[static_cast<std::size_t>(i)] + rng.normal(0.5, 1);
    }
    WilcoxonResult r = wilcoxon_one_sided(sample_of(t, c));
    EXPECT_FALSE(r.exact);
    EXPECT_GT(r.p_value, 0.0);
    EXPECT_LE(r.p_value, 1.0);
}

TEST(Bonferroni, PaperValues) {
    EXPECT_DOUBLE_EQ(bonferroni(0.05, 8), 0.00625);
    EXPECT_DOUBLE_EQ(bonferroni(0.05, 4), 0.0125);
    EXPECT_DOUBLE_EQ(bonferroni(0.05, 1), 0.05);
    EXPECT_THROW(bonferroni(0.05, 0), std::invalid_argument);
}

namespace {

ExperimentRecords records_with_signal(double lift, int n_batches, std::uint64_t seed) {
    Rng rng(seed);
    ExperimentRecords rec;
    MetricsCell cell;
    cell.instrument = "SYN";
    cell.method = "vcrb_r5";
    for (int b = 0; b < n_batches; ++b) {
        MetricsRecord m;
        m.batch_label = "b" + std::to_string(b);
        m.null_precision = 0.4 + rng.normal(0.0, 0.005);
        m.precision = m.null_precision + lift + rng.normal(0.0, 0.005);
        m.pr_auc = 0.45 + rng.normal(0.0, 0.01);
        m.roc_auc = 0.55;
        m.f1 = 0.4;
        cell.records.push_back(m);
    }
    rec.cells.push_back(cell);
    return rec;
}

}  // namespace

TEST(RqHarness, DetectsPlantedPrecisionLift) {
    RqReport report = rq_harness(records_with_signal(0.08, 12, 3));
    ASSERT_EQ(report.tests.size(), 1u);
    const RqTest& t = report.tests[0];
    EXPECT_EQ(t.rq, "RQ1");
    EXPECT_GT(t.effect_raw.g_av, 0.0);
    EXPECT_TRUE(t.effect_adjusted.significant());
    EXPECT_LT(t.test.p_value, t.corrected_alpha);
    EXPECT_TRUE(t.reject);
}

TEST(RqHarness, NoLiftIsNotSignificant) {
    RqReport report = rq_harness(records_with_signal(0.0, 12, 5));
    ASSERT_EQ(report.tests.size(), 1u);
    EXPECT_FALSE(report.tests[0].reject);
}

TEST(RqHarness, Rq4UsesReversedAlternative) {
    ExperimentRecords rec;
    InteractionCell cell;
    cell.instrument = "SYN";
    cell.method = "vcrb_r5";
    Rng rng(9);
    const int n = 10;
    cell.actual_distance.resize(n);
    cell.null_distance.resize(n);
    for (int i = 0; i < n; ++i) {
        cell.batch_labels.push_back("b" + std::to_string(i));
        cell.null_distance[i] = 93280.0 + rng.normal(0.0, 5.0);
        cell.actual_distance[i] = 88000.0 + rng.normal(0.0, 3000.0);
    }
    rec.interactions.push_back(cell);
    RqReport report = rq_harness(rec);
    ASSERT_EQ(report.tests.size(), 1u);
    const RqTest& t = report.tests[0];
    EXPECT_EQ(t.rq, "RQ4");
    EXPECT_EQ(t.measurement, "footrule");
    EXPECT_TRUE(t.reject);  // actual distances are systematically smaller
    EXPECT_LT(t.effect_raw.g_av, 0.0);
}

TEST(RqHarness, IdenticalGroupsAreNonSignificant) {
    ExperimentRecords rec;
    MetricsCell cell;
    cell.instrument = "SYN";
    cell.method = "vcrb_r5";
    for (int b = 0; b < 8; ++b) {
        MetricsRecord m;
        m.batch_label = "b" + std::to_string(b);
        m.precision = 0.4 + 0.01 * b;
        m.null_precision = m.precision;  // identical groups
        cell.records.push_back(m);
    }
    rec.cells.push_back(cell);
    RqReport report = rq_harness(rec);
    ASSERT_EQ(report.tests.size(), 1u);
    EXPECT_FALSE(report.tests[0].reject);
    EXPECT_DOUBLE_EQ(report.tests[0].test.p_value, 1.0);
}

TEST(RqHarness, MismatchedBatchLabelsThrow) {
    ExperimentRecords rec = records_with_signal(0.05, 6, 1);
    MetricsCell pl = rec.cells[0];
    pl.method = "price_levels";
    pl.records[2].batch_label = "other";
    rec.cells.push_back(pl);
    EXPECT_THROW(rq_harness(rec), std::invalid_argument);
}

TEST(RqHarness, Rq2AndRq3AssembleWhenDataPresent) {
    ExperimentRecords rec = records_with_signal(0.05, 8, 2);
    MetricsCell pl = rec.cells[0];
    pl.method = "price_levels";
    for (auto& m : pl.records) m.pr_auc = 0.30;
    rec.cells.push_back(pl);

    MetricsCell other = rec.cells[0];
    other.instrument = "SYN2";
    for (auto& m : other.records) m.pr_auc = 0.40;
    rec.cells.push_back(other);
    rec.rq3_treatment_instrument = "SYN";
    rec.rq3_control_instrument = "SYN2";

    RqReport report = rq_harness(rec);
    bool saw_rq2 = false, saw_rq3 = false;
    for (const auto& t : report.tests) {
        if (t.rq == "RQ2") {
            saw_rq2 = true;
            EXPECT_GT(t.effect_raw.g_av, 0.0);  // vcrb 0.45 vs price levels 0.30
        }
        if (t.rq == "RQ3") saw_rq3 = true;
    }
    EXPECT_TRUE(saw_rq2);
    EXPECT_TRUE(saw_rq3);
}

TEST(NormalCdf, MatchesKnownValues) {
    EXPECT_NEAR(normal_cdf(0.0), 0.5, 1e-15);
    EXPECT_NEAR(normal_cdf(1.96), 0.9750021048517795, 1e-12);
    EXPECT_NEAR(normal_cdf(-1.96), 1.0 - 0.9750021048517795, 1e-12);
}
