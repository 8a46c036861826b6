#include "vcrb/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "vcrb/random.hpp"

namespace vcrb {

void Dataset::validate() const {
    if (x.rows() != y.size()) throw std::invalid_argument("row count != label count");
    if (static_cast<Eigen::Index>(feature_names.size()) != x.cols())
        throw std::invalid_argument("feature name count != column count");
    for (std::size_t i = 0; i < feature_names.size(); ++i)
        for (std::size_t j = i + 1; j < feature_names.size(); ++j)
            if (feature_names[i] == feature_names[j])
                throw std::invalid_argument("duplicate feature name: " + feature_names[i]);
}

Dataset Dataset::select_features(const std::vector<std::string>& names) const {
    Dataset out;
    out.feature_names = names;
    out.y = y;
    out.chronological = chronological;
    out.x.resize(x.rows(), static_cast<Eigen::Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j) {
        auto it = std::find(feature_names.begin(), feature_names.end(), names[j]);
        if (it == feature_names.end())
            throw std::invalid_argument("unknown feature name: " + names[j]);
        out.x.col(static_cast<Eigen::Index>(j)) =
            x.col(static_cast<Eigen::Index>(it - feature_names.begin()));
    }
    return out;
}

Dataset Dataset::slice_rows(Eigen::Index begin, Eigen::Index end) const {
    Dataset out;
    out.feature_names = feature_names;
    out.chronological = chronological;
    out.x = x.middleRows(begin, end - begin);
    out.y = y.segment(begin, end - begin);
    return out;
}

void GbdtParams::validate() const {
    if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
    if (max_depth < 1) throw std::invalid_argument("max_depth must be >= 1");
    if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be > 0");
    if (l2 < 0.0) throw std::invalid_argument("l2 must be >= 0");
}

std::string GbdtParams::describe() const {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "iterations=%d depth=%d lr=%g l2=%g has_time=%d", iterations,
                  max_depth, learning_rate, l2, has_time ? 1 : 0);
    return buf;
}

int Tree::route(const Eigen::RowVectorXd& row) const {
    int node = 0;
    while (!nodes[static_cast<std::size_t>(node)].is_leaf) {
        const TreeNode& nd = nodes[static_cast<std::size_t>(node)];
        double v = row[nd.feature];
        bool left = std::isnan(v) ? nd.missing_left : v < nd.threshold;
        node = left ? nd.left : nd.right;
    }
    return node;
}

double Tree::value(const Eigen::RowVectorXd& row) const {
    return nodes[static_cast<std::size_t>(route(row))].leaf_value;
}

double GbdtModel::margin_row(const Eigen::RowVectorXd& row) const {
    double sum = 0.0;
    for (const Tree& t : trees) sum += t.value(row);
    return base_score + learning_rate * sum;
}

Eigen::VectorXd GbdtModel::margin(const Eigen::MatrixXd& xm) const {
    Eigen::VectorXd out(xm.rows());
    for (Eigen::Index i = 0; i < xm.rows(); ++i) out[i] = margin_row(xm.row(i));
    return out;
}

Eigen::VectorXd GbdtModel::proba(const Eigen::MatrixXd& xm) const {
    Eigen::VectorXd m = margin(xm);
    return (1.0 / (1.0 + (-m.array()).exp())).matrix();
}

namespace {

struct SplitChoice {
    bool found = false;
    int feature = -1;
    double threshold = 0.0;
    bool missing_left = true;
    double gain = 0.0;
};

struct NodeStats {
    double g = 0.0;
    double h = 0.0;
};

double score(double g, double h, double l2) { return 0.5 * g * g / (h + l2); }

// Feature columns presorted once per training set; split search then walks
// each column a single time per tree level for all open nodes at once.
struct ColumnIndex {
    std::vector<std::vector<std::pair<double, int>>> sorted;  // (value, row) per feature
    std::vector<std::vector<int>> missing;                    // rows with NaN per feature

    explicit ColumnIndex(const Eigen::MatrixXd& x) {
        const auto m = x.cols();
        sorted.resize(static_cast<std::size_t>(m));
        missing.resize(static_cast<std::size_t>(m));
        for (Eigen::Index f = 0; f < m; ++f) {
            auto& col = sorted[static_cast<std::size_t>(f)];
            col.reserve(static_cast<std::size_t>(x.rows()));
            for (Eigen::Index r = 0; r < x.rows(); ++r) {
                double v = x(r, f);
                if (std::isnan(v))
                    missing[static_cast<std::size_t>(f)].push_back(static_cast<int>(r));
                else
                    col.emplace_back(v, static_cast<int>(r));
            }
            std::sort(col.begin(), col.end());
        }
    }
};

// Level-order exact greedy builder.
struct TreeBuilder {
    const Eigen::MatrixXd& x;
    const ColumnIndex& columns;
    const Eigen::VectorXd& grad;
    const Eigen::VectorXd& hess;
    double l2;
    int max_depth;
    Tree tree;
    std::vector<double>& gain_by_feature;
    TrainDiagnostics::TreeDiag diag;

    void finalize_leaf(int node, const NodeStats& total) {
        tree.nodes[static_cast<std::size_t>(node)].is_leaf = true;
        tree.nodes[static_cast<std::size_t>(node)].leaf_value = -total.g / (total.h + l2);
        diag.leaf_score_sum += score(total.g, total.h, l2);
    }

    void build() {
        const Eigen::Index n = x.rows();
        NodeStats root;
        for (Eigen::Index r = 0; r < n; ++r) {
            root.g += grad[r];
            root.h += hess[r];
        }
        diag.root_score = score(root.g, root.h, l2);

        tree.nodes.emplace_back();
        std::vector<int> node_of_row(static_cast<std::size_t>(n), 0);  // -1 once settled
        std::vector<int> active_nodes{0};
        std::vector<NodeStats> active_stats{root};
        std::vector<std::int64_t> active_counts{n};

        for (int depth = 0; depth < max_depth && !active_nodes.empty(); ++depth) {
            const std::size_t n_active = active_nodes.size();
            std::vector<int> local_of_node(tree.nodes.size(), -1);
            for (std::size_t k = 0; k < n_active; ++k)
                local_of_node[static_cast<std::size_t>(active_nodes[k])] = static_cast<int>(k);

            std::vector<SplitChoice> best(n_active);
            std::vector<double> parent_score(n_active);
            for (std::size_t k = 0; k < n_active; ++k)
                parent_score[k] = score(active_stats[k].g, active_stats[k].h, l2);

            std::vector<NodeStats> miss(n_active), left(n_active);
            std::vector<std::int64_t> cnt(n_active);
            std::vector<double> last_value(n_active);
            for (Eigen::Index f = 0; f < x.cols(); ++f) {
                std::fill(miss.begin(), miss.end(), NodeStats{});
                std::fill(left.begin(), left.end(), NodeStats{});
                std::fill(cnt.begin(), cnt.end(), 0);
                for (int r : columns.missing[static_cast<std::size_t>(f)]) {
                    int node = node_of_row[static_cast<std::size_t>(r)];
                    if (node < 0) continue;
                    int k = local_of_node[static_cast<std::size_t>(node)];
                    if (k < 0) continue;
                    miss[static_cast<std::size_t>(k)].g += grad[r];
                    miss[static_cast<std::size_t>(k)].h += hess[r];
                }
                for (const auto& [value, row] : columns.sorted[static_cast<std::size_t>(f)]) {
                    int node = node_of_row[static_cast<std::size_t>(row)];
                    if (node < 0) continue;
                    int k_int = local_of_node[static_cast<std::size_t>(node)];
                    if (k_int < 0) continue;
                    auto k = static_cast<std::size_t>(k_int);
                    if (cnt[k] > 0 && value > last_value[k]) {
                        // value boundary inside this node: evaluate the split
                        double threshold = last_value[k] + (value - last_value[k]) / 2.0;
                        NodeStats right{active_stats[k].g - miss[k].g - left[k].g,
                                        active_stats[k].h - miss[k].h - left[k].h};
                        for (bool miss_left : {true, false}) {
                            double gl = left[k].g + (miss_left ? miss[k].g : 0.0);
                            double hl = left[k].h + (miss_left ? miss[k].h : 0.0);
                            double gr = right.g + (miss_left ? 0.0 : miss[k].g);
                            double hr = right.h + (miss_left ? 0.0 : miss[k].h);
                            double gain =
                                score(gl, hl, l2) + score(gr, hr, l2) - parent_score[k];
                            if (gain > best[k].gain + 1e-12) {
                                best[k].found = true;
                                best[k].feature = static_cast<int>(f);
                                best[k].threshold = threshold;
                                best[k].missing_left = miss_left;
                                best[k].gain = gain;
                            }
                        }
                    }
                    left[k].g += grad[row];
                    left[k].h += hess[row];
                    ++cnt[k];
                    last_value[k] = value;
                }
            }

            // apply the chosen splits; unsplittable nodes become leaves
            std::vector<int> next_nodes;
            std::vector<std::int64_t> child_count(2 * n_active, 0);
            for (std::size_t k = 0; k < n_active; ++k) {
                int node = active_nodes[k];
                if (!best[k].found || best[k].gain <= 1e-12 || active_counts[k] < 2) {
                    finalize_leaf(node, active_stats[k]);
                    continue;
                }
                gain_by_feature[static_cast<std::size_t>(best[k].feature)] += best[k].gain;
                diag.split_gain_sum += best[k].gain;
                int left_id = static_cast<int>(tree.nodes.size());
                tree.nodes.emplace_back();
                int right_id = static_cast<int>(tree.nodes.size());
                tree.nodes.emplace_back();
                TreeNode& nd = tree.nodes[static_cast<std::size_t>(node)];
                nd.is_leaf = false;
                nd.feature = best[k].feature;
                nd.threshold = best[k].threshold;
                nd.missing_left = best[k].missing_left;
                nd.left = left_id;
                nd.right = right_id;
                next_nodes.push_back(left_id);
                next_nodes.push_back(right_id);
            }

            // route rows to children (row-index order keeps the child stats
            // accumulation deterministic)
            std::vector<NodeStats> next_stats(next_nodes.size());
            std::vector<std::int64_t> next_counts(next_nodes.size(), 0);
            std::vector<int> next_local(tree.nodes.size(), -1);
            for (std::size_t k = 0; k < next_nodes.size(); ++k)
                next_local[static_cast<std::size_t>(next_nodes[k])] = static_cast<int>(k);
            for (Eigen::Index r = 0; r < n; ++r) {
                int node = node_of_row[static_cast<std::size_t>(r)];
                if (node < 0) continue;
                const TreeNode& nd = tree.nodes[static_cast<std::size_t>(node)];
                if (nd.is_leaf) {
                    node_of_row[static_cast<std::size_t>(r)] = -1;
                    continue;
                }
                if (nd.left < 0) continue;  // still open at the next level
                double v = x(r, nd.feature);
                bool go_left = std::isnan(v) ? nd.missing_left : v < nd.threshold;
                int child = go_left ? nd.left : nd.right;
                node_of_row[static_cast<std::size_t>(r)] = child;
                int k = next_local[static_cast<std::size_t>(child)];
                next_stats[static_cast<std::size_t>(k)].g += grad[r];
                next_stats[static_cast<std::size_t>(k)].h += hess[r];
                ++next_counts[static_cast<std::size_t>(k)];
            }
            active_nodes = std::move(next_nodes);
            active_stats = std::move(next_stats);
            active_counts = std::move(next_counts);
        }
        for (std::size_t k = 0; k < active_nodes.size(); ++k)
            finalize_leaf(active_nodes[k], active_stats[k]);
    }
};

double precision_at(const Eigen::VectorXi& labels, const Eigen::VectorXd& proba,
                    bool* degenerate = nullptr) {
    std::int64_t tp = 0, fp = 0;
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
        if (proba[i] > 0.5) {
            if (labels[i] != 0)
                ++tp;
            else
                ++fp;
        }
    }
    if (tp + fp == 0) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

bool two_classes(const Eigen::VectorXi& y) {
    bool pos = false, neg = false;
    for (Eigen::Index i = 0; i < y.size(); ++i) (y[i] != 0 ? pos : neg) = true;
    return pos && neg;
}

}  // namespace

GbdtModel train(const Dataset& dataset, const GbdtParams& params, TrainDiagnostics* diagnostics) {
    dataset.validate();
    params.validate();
    const Eigen::Index n = dataset.rows();
    if (n < 2) throw std::invalid_argument("train: need >= 2 rows");
    if (dataset.cols() < 1) throw std::invalid_argument("train: empty feature set");
    if (!two_classes(dataset.y)) throw std::invalid_argument("train: single-class data");

    // has_time keeps chronological row order; otherwise rows are shuffled
    // once with the run seed
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    if (!params.has_time) {
        Rng rng(mix_seed(params.seed, 0x5481));
        for (std::size_t i = perm.size(); i > 1; --i)
            std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.uniform(i))]);
    }
    Eigen::MatrixXd x(n, dataset.cols());
    Eigen::VectorXi y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        x.row(i) = dataset.x.row(perm[static_cast<std::size_t>(i)]);
        y[i] = dataset.y[perm[static_cast<std::size_t>(i)]];
    }

    GbdtModel model;
    model.feature_names = dataset.feature_names;
    model.learning_rate = params.learning_rate;
    model.training_rows = n;
    model.split_gain.assign(dataset.feature_names.size(), 0.0);

    double prevalence = y.cast<double>().mean();
    prevalence = std::min(1.0 - 1e-6, std::max(1e-6, prevalence));
    model.base_score = std::log(prevalence / (1.0 - prevalence));

    Eigen::VectorXd margin = Eigen::VectorXd::Constant(n, model.base_score);
    Eigen::VectorXd grad(n), hess(n);
    ColumnIndex columns(x);

    for (int iter = 0; iter < params.iterations; ++iter) {
        for (Eigen::Index i = 0; i < n; ++i) {
            double p = 1.0 / (1.0 + std::exp(-margin[i]));
            grad[i] = p - static_cast<double>(y[i]);
            hess[i] = std::max(p * (1.0 - p), 1e-16);
        }
        TreeBuilder builder{x, columns, grad, hess, params.l2, params.max_depth,
                            {}, model.split_gain, {}};
        builder.build();
        if (diagnostics) diagnostics->trees.push_back(builder.diag);
        for (Eigen::Index i = 0; i < n; ++i)
            margin[i] += params.learning_rate * builder.tree.value(x.row(i));
        model.trees.push_back(std::move(builder.tree));
    }
    return model;
}

namespace {

Eigen::MatrixXd align_columns(const GbdtModel& model, const Dataset& dataset) {
    Eigen::MatrixXd out(dataset.rows(), static_cast<Eigen::Index>(model.feature_names.size()));
    for (std::size_t j = 0; j < model.feature_names.size(); ++j) {
        auto it = std::find(dataset.feature_names.begin(), dataset.feature_names.end(),
                            model.feature_names[j]);
        if (it == dataset.feature_names.end())
            throw std::invalid_argument("unknown feature name: " + model.feature_names[j]);
        out.col(static_cast<Eigen::Index>(j)) =
            dataset.x.col(static_cast<Eigen::Index>(it - dataset.feature_names.begin()));
    }
    return out;
}

}  // namespace

Eigen::VectorXd predict_margin(const GbdtModel& model, const Dataset& dataset) {
    return model.margin(align_columns(model, dataset));
}

Eigen::VectorXd predict_proba(const GbdtModel& model, const Dataset& dataset) {
    return model.proba(align_columns(model, dataset));
}

std::vector<double> feature_importance(const GbdtModel& model) {
    std::vector<double> imp = model.split_gain;
    double total = std::accumulate(imp.begin(), imp.end(), 0.0);
    if (total > 0.0)
        for (double& v : imp) v /= total;
    return imp;
}

double cv_precision(const Dataset& dataset, const GbdtParams& params, int folds) {
    if (folds < 1) throw std::invalid_argument("folds must be >= 1");
    const Eigen::Index n = dataset.rows();
    double sum = 0.0;
    for (int k = 0; k < folds; ++k) {
        Eigen::Index train_end = n * (k + 1) / (folds + 1);
        Eigen::Index val_end = n * (k + 2) / (folds + 1);
        double fold_precision = 0.0;
        Dataset tr = dataset.slice_rows(0, train_end);
        Dataset va = dataset.slice_rows(train_end, val_end);
        if (tr.rows() >= 2 && va.rows() >= 1 && two_classes(tr.y)) {
            GbdtModel model = train(tr, params);
            bool degenerate = false;
            fold_precision = precision_at(va.y, predict_proba(model, va), &degenerate);
            if (degenerate)
                std::cerr << "warning: fold " << k + 1 << " has no predicted positives;"
                          << " precision scored 0\n";
        } else {
            std::cerr << "warning: fold " << k + 1 << " degenerate; precision scored 0\n";
        }
        sum += fold_precision;
    }
    return sum / static_cast<double>(folds);
}

RfecvResult rfecv(const Dataset& dataset, const GbdtParams& params, int folds) {
    dataset.validate();
    if (dataset.cols() < 1) throw std::invalid_argument("rfecv: empty feature set");

    RfecvResult res;
    std::vector<std::string> current = dataset.feature_names;
    while (true) {
        Dataset sub = dataset.select_features(current);
        res.subsets.push_back(current);
        res.precision_trace.push_back(cv_precision(sub, params, folds));
        if (current.size() == 1) break;
        std::vector<double> imp = feature_importance(train(sub, params));
        std::size_t drop = 0;
        for (std::size_t j = 1; j < imp.size(); ++j)
            if (imp[j] <= imp[drop]) drop = j;  // tie drops the later feature
        current.erase(current.begin() + static_cast<std::ptrdiff_t>(drop));
    }

    std::size_t best = 0;
    for (std::size_t i = 1; i < res.precision_trace.size(); ++i) {
        // >= prefers later entries, which have fewer features
        if (res.precision_trace[i] >= res.precision_trace[best]) best = i;
    }
    res.selected = res.subsets[best];
    return res;
}

void TuningSpec::validate() const {
    if (iterations.empty() || max_depth.empty() || l2.empty() || has_time.empty())
        throw std::invalid_argument("tuning grids must be non-empty");
}

TuneResult tune(const Dataset& dataset, const TuningSpec& spec, const GbdtParams& base,
                int folds) {
    spec.validate();
    TuneResult res;
    for (int iters : spec.iterations)
        for (int depth : spec.max_depth)
            for (double l2 : spec.l2)
                for (bool ht : spec.has_time) {
                    GbdtParams p = base;
                    p.iterations = iters;
                    p.max_depth = depth;
                    p.l2 = l2;
                    p.has_time = ht;
                    res.table.push_back({p, cv_precision(dataset, p, folds)});
                }
    // best by mean precision; ties keep the earliest grid point
    std::size_t best = 0;
    for (std::size_t i = 1; i < res.table.size(); ++i)
        if (res.table[i].mean_precision > res.table[best].mean_precision) best = i;
    res.best = res.table[best].params;
    return res;
}

std::vector<WalkForwardRecord> walk_forward(const std::vector<BatchDataset>& batches,
                                            const TuningSpec& spec, const GbdtParams& base,
                                            const WalkForwardOptions& options) {
    if (batches.size() < 2) throw std::invalid_argument("walk_forward: need >= 2 batches");
    std::vector<WalkForwardRecord> records;
    for (std::size_t n = 0; n + 1 < batches.size(); ++n) {
        const BatchDataset& tr = batches[n];
        const BatchDataset& te = batches[n + 1];
        if (tr.train.rows() < 2 || !two_classes(tr.train.y)) {
            std::cerr << "walk_forward: skipping pair (" << tr.label << " -> " << te.label
                      << "): training batch lacks both classes\n";
            continue;
        }
        if (te.test.rows() < 1) {
            std::cerr << "walk_forward: skipping pair (" << tr.label << " -> " << te.label
                      << "): test batch has no labelled events\n";
            continue;
        }

        std::vector<std::string> selected = tr.train.feature_names;
        if (options.run_rfecv && tr.train.cols() > 1)
            selected = rfecv(tr.train, base, options.folds).selected;
        Dataset train_sel = tr.train.select_features(selected);

        TuneResult tuned = tune(train_sel, spec, base, options.folds);
        GbdtModel model = train(train_sel, tuned.best);

        WalkForwardRecord rec;
        rec.train_label = tr.label;
        rec.test_label = te.label;
        rec.selected_features = selected;
        rec.best_params = tuned.best;
        rec.test_probabilities = predict_proba(model, te.test);
        rec.metrics = classification_metrics(te.test.y, rec.test_probabilities);
        rec.metrics.batch_label = te.label;
        records.push_back(std::move(rec));
    }
    return records;
}

void save_model(const std::string& path, const GbdtModel& model) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    char buf[64];
    auto g17 = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    out << "vcrb-gbdt 1\n";
    out << "base_score " << g17(model.base_score) << "\n";
    out << "learning_rate " << g17(model.learning_rate) << "\n";
    out << "training_rows " << model.training_rows << "\n";
    out << "features " << model.feature_names.size();
    for (const auto& nm : model.feature_names) out << ' ' << nm;
    out << "\n";
    out << "gains";
    for (double g : model.split_gain) out << ' ' << g17(g);
    out << "\n";
    out << "trees " << model.trees.size() << "\n";
    for (const Tree& t : model.trees) {
        out << "tree " << t.nodes.size() << "\n";
        for (const TreeNode& nd : t.nodes) {
            if (nd.is_leaf)
                out << "leaf " << g17(nd.leaf_value) << "\n";
            else
                out << "split " << nd.feature << ' ' << g17(nd.threshold) << ' '
                    << (nd.missing_left ? 'L' : 'R') << ' ' << nd.left << ' ' << nd.right << "\n";
        }
    }
}

GbdtModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    auto expect = [&](const std::string& tag) {
        std::string word;
        in >> word;
        if (word != tag) throw std::runtime_error("bad model file " + path + ": expected " + tag);
    };
    GbdtModel model;
    std::string magic;
    int version;
    in >> magic >> version;
    if (magic != "vcrb-gbdt" || version != 1)
        throw std::runtime_error("bad model file header in " + path);
    expect("base_score");
    in >> model.base_score;
    expect("learning_rate");
    in >> model.learning_rate;
    expect("training_rows");
    in >> model.training_rows;
    expect("features");
    std::size_t n_features;
    in >> n_features;
    model.feature_names.resize(n_features);
    for (auto& nm : model.feature_names) in >> nm;
    expect("gains");
    model.split_gain.resize(n_features);
    for (auto& g : model.split_gain) in >> g;
    expect("trees");
    std::size_t n_trees;
    in >> n_trees;
    model.trees.resize(n_trees);
    for (Tree& t : model.trees) {
        expect("tree");
        std::size_t n_nodes;
        in >> n_nodes;
        t.nodes.resize(n_nodes);
        for (TreeNode& nd : t.nodes) {
            std::string kind;
            in >> kind;
            if (kind == "leaf") {
                nd.is_leaf = true;
                in >> nd.leaf_value;
            } else if (kind == "split") {
                nd.is_leaf = false;
                char miss;
                in >> nd.feature >> nd.threshold >> miss >> nd.left >> nd.right;
                nd.missing_left = miss == 'L';
            } else {
                throw std::runtime_error("bad node kind in " + path);
            }
        }
    }
    if (!in) throw std::runtime_error("truncated model file " + path);
    return model;
}

}  // namespace vcrb
