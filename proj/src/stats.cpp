#include "vcrb/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "vcrb/random.hpp"

namespace vcrb {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double sample_sd(const Eigen::VectorXd& v) {
    const Eigen::Index n = v.size();
    if (n < 2) return 0.0;
    double mean = v.mean();
    double ss = (v.array() - mean).square().sum();
    return std::sqrt(ss / static_cast<double>(n - 1));
}

MetricsRecord classification_metrics(const Eigen::VectorXi& labels,
                                     const Eigen::VectorXd& probabilities, double threshold) {
    const Eigen::Index n = labels.size();
    if (n == 0) throw std::invalid_argument("classification_metrics: empty input");
    if (probabilities.size() != n)
        throw std::invalid_argument("labels/probabilities size mismatch");

    std::int64_t tp = 0, fp = 0, fn = 0, pos = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        bool actual = labels[i] != 0;
        bool predicted = probabilities[i] > threshold;
        pos += actual;
        tp += actual && predicted;
        fp += !actual && predicted;
        fn += actual && !predicted;
    }
    MetricsRecord m;
    m.null_precision = static_cast<double>(pos) / static_cast<double>(n);
    m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    double recall = pos > 0 ? static_cast<double>(tp) / static_cast<double>(pos) : 0.0;
    m.f1 = (m.precision + recall) > 0.0 ? 2.0 * m.precision * recall / (m.precision + recall)
                                        : 0.0;

    const std::int64_t neg = n - pos;
    if (pos == 0 || neg == 0) {
        m.pr_auc = std::numeric_limits<double>::quiet_NaN();
        m.roc_auc = std::numeric_limits<double>::quiet_NaN();
        return m;
    }

    // ROC-AUC via the rank statistic with average ranks for ties
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return probabilities[a] < probabilities[b];
    });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() &&
               probabilities[order[j + 1]] == probabilities[order[i]])
            ++j;
        double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]] != 0) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    m.roc_auc = (rank_sum_pos - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0) /
                (static_cast<double>(pos) * static_cast<double>(neg));

    // PR-AUC as average precision over descending score groups
    double ap = 0.0;
    double prev_recall = 0.0;
    std::int64_t cum_tp = 0, cum_fp = 0;
    std::size_t k = order.size();
    while (k > 0) {
        std::size_t j = k;  // group of tied scores [j, k)
        double score = probabilities[order[k - 1]];
        while (j > 0 && probabilities[order[j - 1]] == score) --j;
        for (std::size_t t = j; t < k; ++t) {
            if (labels[order[t]] != 0)
                ++cum_tp;
            else
                ++cum_fp;
        }
        double prec = static_cast<double>(cum_tp) / static_cast<double>(cum_tp + cum_fp);
        double recall = static_cast<double>(cum_tp) / static_cast<double>(pos);
        ap += (recall - prev_recall) * prec;
        prev_recall = recall;
        k = j;
    }
    m.pr_auc = ap;
    return m;
}

void PairedSample::validate() const {
    if (treatment.size() != control.size())
        throw std::invalid_argument("paired sample length mismatch");
    if (treatment.size() < 2) throw std::invalid_argument("paired sample needs >= 2 pairs");
    if (!batch_labels.empty() &&
        batch_labels.size() != static_cast<std::size_t>(treatment.size()))
        throw std::invalid_argument("batch label count mismatch");
}

namespace {

double g_av_point(const Eigen::VectorXd& t, const Eigen::VectorXd& c) {
    double sd_t = sample_sd(t);
    double sd_c = sample_sd(c);
    double denom = (sd_t + sd_c) / 2.0;
    if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
    double n = static_cast<double>(t.size());
    double j = 1.0 - 3.0 / (4.0 * (n - 1.0) - 1.0);
    return j * (t - c).mean() / denom;
}

double percentile(std::vector<double>& sorted_values, double q) {
    // linear interpolation between order statistics
    if (sorted_values.empty()) return std::numeric_limits<double>::quiet_NaN();
    double pos = q * static_cast<double>(sorted_values.size() - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = std::min(lo + 1, sorted_values.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return sorted_values[lo] * (1.0 - frac) + sorted_values[hi] * frac;
}

}  // namespace

EffectSizeResult hedges_g_av(const PairedSample& sample, double confidence, int n_resamples,
                             std::uint64_t seed) {
    sample.validate();
    const Eigen::Index n = sample.size();
    if (n < 3) throw std::invalid_argument("hedges_g_av requires n >= 3");

    double point = g_av_point(sample.treatment, sample.control);
    if (std::isnan(point)) throw std::invalid_argument("hedges_g_av: zero pooled sd");

    Rng rng(mix_seed(seed, 0x9a5));
    std::vector<double> boot;
    boot.reserve(static_cast<std::size_t>(n_resamples));
    Eigen::VectorXd t(n), c(n);
    for (int r = 0; r < n_resamples; ++r) {
        for (Eigen::Index i = 0; i < n; ++i) {
            auto k = static_cast<Eigen::Index>(rng.uniform(static_cast<std::uint64_t>(n)));
            t[i] = sample.treatment[k];
            c[i] = sample.control[k];
        }
        double g = g_av_point(t, c);
        if (!std::isnan(g)) boot.push_back(g);
    }
    if (boot.empty()) throw std::runtime_error("hedges_g_av: all bootstrap resamples degenerate");
    std::sort(boot.begin(), boot.end());

    EffectSizeResult res;
    res.g_av = point;
    res.n = static_cast<int>(n);
    double alpha = 1.0 - confidence;
    res.ci_low = percentile(boot, alpha / 2.0);
    res.ci_high = percentile(boot, 1.0 - alpha / 2.0);
    return res;
}

WilcoxonResult wilcoxon_one_sided(const PairedSample& sample, Alternative alternative) {
    if (sample.treatment.size() != sample.control.size())
        throw std::invalid_argument("paired sample length mismatch");

    std::vector<double> diffs;
    for (Eigen::Index i = 0; i < sample.treatment.size(); ++i) {
        double d = sample.treatment[i] - sample.control[i];
        if (alternative == Alternative::less) d = -d;
        if (d != 0.0) diffs.push_back(d);
    }
    const int n = static_cast<int>(diffs.size());
    if (n == 0) throw std::invalid_argument("wilcoxon: all differences are zero");

    // average ranks of |d|; doubled ranks are integers even with ties
    std::vector<int> order(diffs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return std::fabs(diffs[a]) < std::fabs(diffs[b]);
    });
    std::vector<std::int64_t> rank2(diffs.size());  // 2 * rank
    std::vector<std::size_t> tie_sizes;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() &&
               std::fabs(diffs[order[j + 1]]) == std::fabs(diffs[order[i]]))
            ++j;
        std::int64_t doubled = static_cast<std::int64_t>(i + 1 + j + 1);  // 2 * average rank
        for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = doubled;
        if (j > i) tie_sizes.push_back(j - i + 1);
        i = j + 1;
    }
    std::int64_t w2 = 0;
    for (std::size_t k = 0; k < diffs.size(); ++k)
        if (diffs[k] > 0.0) w2 += rank2[k];

    WilcoxonResult res;
    res.w = static_cast<double>(w2) / 2.0;
    res.n_effective = n;

    if (n <= 25) {
        // distribution of the doubled rank sum over all 2^n sign choices
        std::int64_t total2 = std::accumulate(rank2.begin(), rank2.end(), std::int64_t{0});
        std::vector<double> count(static_cast<std::size_t>(total2 + 1), 0.0);
        count[0] = 1.0;
        std::int64_t reach = 0;
        for (std::int64_t r : rank2) {
            reach += r;
            for (std::int64_t s = reach; s >= r; --s)
                count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - r)];
        }
        double ge = 0.0;
        for (std::int64_t s = w2; s <= total2; ++s) ge += count[static_cast<std::size_t>(s)];
        res.p_value = ge / std::pow(2.0, n);
        res.exact = true;
    } else {
        double nn = static_cast<double>(n);
        double mean = nn * (nn + 1.0) / 4.0;
        double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
        for (std::size_t t : tie_sizes) {
            double tt = static_cast<double>(t);
            var -= (tt * tt * tt - tt) / 48.0;
        }
        double z = (res.w - mean - 0.5) / std::sqrt(var);
        res.p_value = 1.0 - normal_cdf(z);
        res.exact = false;
    }
    res.p_value = std::min(1.0, std::max(res.p_value, 0.0));
    if (res.p_value == 0.0) res.p_value = std::nextafter(0.0, 1.0);
    return res;
}

double bonferroni(double alpha, int m_tests) {
    if (m_tests < 1) throw std::invalid_argument("bonferroni: m_tests must be >= 1");
    return alpha / static_cast<double>(m_tests);
}

namespace {

const MetricsCell* find_cell(const ExperimentRecords& records, const std::string& instrument,
                             const std::string& method) {
    for (const auto& c : records.cells)
        if (c.instrument == instrument && c.method == method) return &c;
    return nullptr;
}

PairedSample make_sample(const std::vector<std::string>& labels_t, const Eigen::VectorXd& t,
                         const std::vector<std::string>& labels_c, const Eigen::VectorXd& c) {
    if (labels_t != labels_c)
        throw std::invalid_argument("mismatched batch labels between paired groups");
    PairedSample s;
    s.batch_labels = labels_t;
    s.treatment = t;
    s.control = c;
    return s;
}

struct CellSeries {
    std::vector<std::string> labels;
    Eigen::VectorXd precision, pr_auc, null_precision;
};

CellSeries series_of(const MetricsCell& cell) {
    CellSeries s;
    const auto n = static_cast<Eigen::Index>(cell.records.size());
    s.precision.resize(n);
    s.pr_auc.resize(n);
    s.null_precision.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = cell.records[static_cast<std::size_t>(i)];
        s.labels.push_back(r.batch_label);
        s.precision[i] = r.precision;
        s.pr_auc[i] = r.pr_auc;
        s.null_precision[i] = r.null_precision;
    }
    return s;
}

}  // namespace

RqReport rq_harness(const ExperimentRecords& records, double alpha, std::uint64_t seed) {
    RqReport report;

    struct Planned {
        std::string rq, configuration, measurement;
        PairedSample sample;
        Alternative alt;
    };
    std::vector<std::vector<Planned>> families;

    // RQ1: model precision vs the always-positive baseline, per cell
    {
        std::vector<Planned> fam;
        for (const auto& cell : records.cells) {
            if (cell.method == "price_levels") continue;
            CellSeries s = series_of(cell);
            if (s.precision.size() < 3) continue;
            fam.push_back({"RQ1", cell.instrument + " " + cell.method, "precision",
                           make_sample(s.labels, s.precision, s.labels, s.null_precision),
                           Alternative::greater});
        }
        families.push_back(std::move(fam));
    }

    // RQ2: VCRB PR-AUC vs price-level PR-AUC, per instrument and range
    {
        std::vector<Planned> fam;
        for (const auto& cell : records.cells) {
            if (cell.method == "price_levels") continue;
            const MetricsCell* pl = find_cell(records, cell.instrument, "price_levels");
            if (!pl) continue;
            CellSeries sv = series_of(cell);
            CellSeries sp = series_of(*pl);
            if (sv.pr_auc.size() < 3) continue;
            fam.push_back({"RQ2", cell.instrument + " " + cell.method, "pr_auc",
                           make_sample(sv.labels, sv.pr_auc, sp.labels, sp.pr_auc),
                           Alternative::greater});
        }
        if (fam.empty())
            report.notes.push_back("RQ2 skipped: no price-level records");
        families.push_back(std::move(fam));
    }

    // RQ3: PR-AUC on the liquid vs the less liquid instrument, per range
    {
        std::vector<Planned> fam;
        if (!records.rq3_treatment_instrument.empty() && !records.rq3_control_instrument.empty()) {
            for (const auto& cell : records.cells) {
                if (cell.instrument != records.rq3_treatment_instrument ||
                    cell.method == "price_levels")
                    continue;
                const MetricsCell* ctl =
                    find_cell(records, records.rq3_control_instrument, cell.method);
                if (!ctl) continue;
                CellSeries st = series_of(cell);
                CellSeries sc = series_of(*ctl);
                if (st.pr_auc.size() < 3) continue;
                fam.push_back({"RQ3",
                               records.rq3_treatment_instrument + " vs " +
                                   records.rq3_control_instrument + " " + cell.method,
                               "pr_auc", make_sample(st.labels, st.pr_auc, sc.labels, sc.pr_auc),
                               Alternative::greater});
            }
        }
        if (fam.empty())
            report.notes.push_back("RQ3 skipped: requires two instruments");
        families.push_back(std::move(fam));
    }

    // RQ4: actual Footrule distances vs bootstrapped null, alternative
    // reversed (smaller distance = stronger relatedness)
    {
        std::vector<Planned> fam;
        for (const auto& cell : records.interactions) {
            if (cell.actual_distance.size() < 3) continue;
            fam.push_back({"RQ4", cell.instrument + " " + cell.method, "footrule",
                           make_sample(cell.batch_labels, cell.actual_distance, cell.batch_labels,
                                       cell.null_distance),
                           Alternative::less});
        }
        if (fam.empty())
            report.notes.push_back("RQ4 skipped: no interaction records");
        families.push_back(std::move(fam));
    }

    std::uint64_t test_counter = 0;
    for (auto& fam : families) {
        if (fam.empty()) continue;
        int m = static_cast<int>(fam.size());
        double corrected = bonferroni(alpha, m);
        for (auto& planned : fam) {
            RqTest t;
            t.rq = planned.rq;
            t.configuration = planned.configuration;
            t.measurement = planned.measurement;
            t.sample = planned.sample;
            t.alternative = planned.alt;
            t.corrected_alpha = corrected;
            // degenerate comparisons (identical groups) are reported as
            // non-significant rather than aborting the whole report
            try {
                t.effect_raw = hedges_g_av(planned.sample, 1.0 - alpha, 10000,
                                           mix_seed(seed, 2 * test_counter));
                t.effect_adjusted = hedges_g_av(planned.sample, 1.0 - corrected, 10000,
                                                mix_seed(seed, 2 * test_counter + 1));
            } catch (const std::exception& e) {
                t.effect_raw = EffectSizeResult{0.0, 0.0, 0.0,
                                                static_cast<int>(planned.sample.size())};
                t.effect_adjusted = t.effect_raw;
                report.notes.push_back(t.rq + " " + t.configuration +
                                       ": effect size degenerate (" + e.what() + ")");
            }
            try {
                t.test = wilcoxon_one_sided(planned.sample, planned.alt);
            } catch (const std::exception& e) {
                t.test = WilcoxonResult{0.0, 1.0, 0, true};
                report.notes.push_back(t.rq + " " + t.configuration + ": test degenerate (" +
                                       e.what() + ")");
            }
            t.reject = t.test.p_value < corrected;
            report.tests.push_back(std::move(t));
            ++test_counter;
        }
    }
    return report;
}

}  // namespace vcrb
