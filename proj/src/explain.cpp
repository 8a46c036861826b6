#include "vcrb/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <numeric>
#include <stdexcept>

#include "vcrb/pattern_extraction.hpp"
#include "vcrb/random.hpp"

namespace vcrb {

namespace {

void walk_tree(const Tree& tree, int node, std::vector<PathCondition>& stack,
               double learning_rate, std::vector<DecisionPath>& out,
               std::vector<int>& leaf_to_path) {
    const TreeNode& nd = tree.nodes[static_cast<std::size_t>(node)];
    if (nd.is_leaf) {
        DecisionPath p;
        p.conditions = stack;
        p.contribution = nd.leaf_value * learning_rate;
        for (const PathCondition& c : p.conditions) p.feature_set.push_back(c.feature);
        std::sort(p.feature_set.begin(), p.feature_set.end());
        p.feature_set.erase(std::unique(p.feature_set.begin(), p.feature_set.end()),
                            p.feature_set.end());
        leaf_to_path[static_cast<std::size_t>(node)] = static_cast<int>(out.size());
        out.push_back(std::move(p));
        return;
    }
    stack.push_back({nd.feature, nd.threshold, true});
    walk_tree(tree, nd.left, stack, learning_rate, out, leaf_to_path);
    stack.back().go_left = false;
    walk_tree(tree, nd.right, stack, learning_rate, out, leaf_to_path);
    stack.pop_back();
}

}  // namespace

std::vector<DecisionPath> extract_paths(const GbdtModel& model,
                                        const Eigen::MatrixXd& train_rows) {
    if (model.trees.empty()) throw std::invalid_argument("extract_paths: model has no trees");
    if (train_rows.rows() < 1)
        throw std::invalid_argument("extract_paths: need training rows for support");
    std::vector<DecisionPath> paths;
    for (const Tree& tree : model.trees) {
        std::vector<PathCondition> stack;
        std::vector<int> leaf_to_path(tree.nodes.size(), -1);
        std::size_t first = paths.size();
        walk_tree(tree, 0, stack, model.learning_rate, paths, leaf_to_path);
        std::vector<std::int64_t> hits(paths.size() - first, 0);
        for (Eigen::Index r = 0; r < train_rows.rows(); ++r) {
            int leaf = tree.route(train_rows.row(r));
            ++hits[static_cast<std::size_t>(leaf_to_path[static_cast<std::size_t>(leaf)]) - first];
        }
        for (std::size_t k = 0; k < hits.size(); ++k)
            paths[first + k].support =
                static_cast<double>(hits[k]) / static_cast<double>(train_rows.rows());
    }
    return paths;
}

namespace {

InteractionMatrix accumulate_interactions(const std::vector<DecisionPath>& paths,
                                          const std::vector<std::string>& names,
                                          int only_order) {
    const auto m = static_cast<Eigen::Index>(names.size());
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(m, m);
    Eigen::MatrixXd count = Eigen::MatrixXd::Zero(m, m);
    for (const DecisionPath& p : paths) {
        const auto k = p.feature_set.size();
        if (only_order > 0 && k != static_cast<std::size_t>(only_order)) continue;
        double term = p.contribution * p.support;
        if (k == 1) {
            int f = p.feature_set[0];
            sum(f, f) += term;
            count(f, f) += 1.0;
        } else if (k >= 2) {
            for (std::size_t a = 0; a < k; ++a)
                for (std::size_t b = a + 1; b < k; ++b) {
                    int fa = p.feature_set[a];
                    int fb = p.feature_set[b];
                    sum(fa, fb) += term;
                    count(fa, fb) += 1.0;
                }
        }
    }
    InteractionMatrix out;
    out.feature_names = names;
    out.values = Eigen::MatrixXd::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = i; j < m; ++j) {
            double v = count(i, j) > 0.0 ? sum(i, j) / count(i, j) : 0.0;
            out.values(i, j) = v;
            out.values(j, i) = v;
        }
    return out;
}

}  // namespace

InteractionMatrix interaction_matrix(const std::vector<DecisionPath>& paths,
                                     const std::vector<std::string>& feature_names) {
    if (paths.empty()) throw std::invalid_argument("interaction_matrix: no paths");
    // pairs use every path containing both features; the diagonal uses
    // single-feature paths only
    InteractionMatrix out = accumulate_interactions(paths, feature_names, 0);
    return out;
}

InteractionMatrix order_k_interactions(const std::vector<DecisionPath>& paths,
                                       const std::vector<std::string>& feature_names, int k) {
    if (k < 1) throw std::invalid_argument("order_k_interactions: k must be >= 1");
    return accumulate_interactions(paths, feature_names, k);
}

namespace {

std::vector<int> active_features(const GbdtModel& model) {
    std::vector<int> used;
    for (const Tree& t : model.trees)
        for (const TreeNode& nd : t.nodes)
            if (!nd.is_leaf) used.push_back(nd.feature);
    std::sort(used.begin(), used.end());
    used.erase(std::unique(used.begin(), used.end()), used.end());
    return used;
}

std::vector<double> log_factorials(int n) {
    std::vector<double> lf(static_cast<std::size_t>(n) + 1, 0.0);
    for (int i = 1; i <= n; ++i)
        lf[static_cast<std::size_t>(i)] = lf[static_cast<std::size_t>(i - 1)] + std::log(i);
    return lf;
}

}  // namespace

Eigen::MatrixXd shapley_interactions_row(const GbdtModel& model,
                                         const Eigen::MatrixXd& background_rows,
                                         const Eigen::RowVectorXd& explain_row,
                                         int max_features) {
    const auto m_total = static_cast<Eigen::Index>(model.feature_names.size());
    Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(m_total, m_total);

    std::vector<int> active = active_features(model);
    const int ma = static_cast<int>(active.size());
    if (ma == 0) return phi;
    if (ma > max_features)
        throw std::invalid_argument(
            "shapley_interactions: model uses more features than max_features; "
            "sub-sample features or raise the limit");
    if (background_rows.rows() < 1)
        throw std::invalid_argument("shapley_interactions: empty background");

    // value table: v[mask] = mean margin with active features in mask taken
    // from the explain row, the rest from the background
    const std::uint32_t n_masks = 1u << ma;
    std::vector<double> v(n_masks, 0.0);
    Eigen::RowVectorXd z(m_total);
    for (Eigen::Index b = 0; b < background_rows.rows(); ++b) {
        for (std::uint32_t mask = 0; mask < n_masks; ++mask) {
            z = background_rows.row(b);
            for (int k = 0; k < ma; ++k)
                if (mask & (1u << k)) z[active[static_cast<std::size_t>(k)]] = explain_row[active[static_cast<std::size_t>(k)]];
            v[mask] += model.margin_row(z);
        }
    }
    for (double& val : v) val /= static_cast<double>(background_rows.rows());

    std::vector<double> lf = log_factorials(ma);
    auto fact_weight_pair = [&](int s) {
        // |S|! (M-|S|-2)! / (2 (M-1)!)
        return std::exp(lf[static_cast<std::size_t>(s)] + lf[static_cast<std::size_t>(ma - s - 2)] -
                        lf[static_cast<std::size_t>(ma - 1)]) /
               2.0;
    };
    auto fact_weight_single = [&](int s) {
        // |S|! (M-|S|-1)! / M!
        return std::exp(lf[static_cast<std::size_t>(s)] + lf[static_cast<std::size_t>(ma - s - 1)] -
                        lf[static_cast<std::size_t>(ma)]);
    };

    // pairwise interaction indices over the active set
    for (int a = 0; a < ma; ++a) {
        for (int b = a + 1; b < ma; ++b) {
            const std::uint32_t bit_a = 1u << a;
            const std::uint32_t bit_b = 1u << b;
            double total = 0.0;
            for (std::uint32_t mask = 0; mask < n_masks; ++mask) {
                if (mask & (bit_a | bit_b)) continue;
                int s = std::popcount(mask);
                double delta = v[mask | bit_a | bit_b] - v[mask | bit_a] - v[mask | bit_b] + v[mask];
                total += fact_weight_pair(s) * delta;
            }
            int fa = active[static_cast<std::size_t>(a)];
            int fb = active[static_cast<std::size_t>(b)];
            phi(fa, fb) = total;
            phi(fb, fa) = total;
        }
    }

    // main effects: Shapley value minus the off-diagonal interactions
    for (int a = 0; a < ma; ++a) {
        const std::uint32_t bit_a = 1u << a;
        double shap = 0.0;
        for (std::uint32_t mask = 0; mask < n_masks; ++mask) {
            if (mask & bit_a) continue;
            int s = std::popcount(mask);
            shap += fact_weight_single(s) * (v[mask | bit_a] - v[mask]);
        }
        int fa = active[static_cast<std::size_t>(a)];
        double off = 0.0;
        for (Eigen::Index j = 0; j < m_total; ++j)
            if (j != fa) off += phi(fa, j);
        phi(fa, fa) = shap - off;
    }
    return phi;
}

InteractionMatrix shapley_interactions(const GbdtModel& model,
                                       const Eigen::MatrixXd& background_rows,
                                       const Eigen::MatrixXd& explain_rows,
                                       const ShapleyOptions& options) {
    if (explain_rows.rows() < 1)
        throw std::invalid_argument("shapley_interactions: no explain rows");
    const auto m = static_cast<Eigen::Index>(model.feature_names.size());
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(m, m);

    const Eigen::Index n = explain_rows.rows();
    if (options.threads > 1) {
        std::vector<std::future<Eigen::MatrixXd>> futures;
        for (Eigen::Index r = 0; r < n; ++r)
            futures.push_back(std::async(std::launch::async, [&, r] {
                return shapley_interactions_row(model, background_rows, explain_rows.row(r),
                                                options.max_features);
            }));
        for (auto& f : futures) acc += f.get().cwiseAbs();
    } else {
        for (Eigen::Index r = 0; r < n; ++r)
            acc += shapley_interactions_row(model, background_rows, explain_rows.row(r),
                                            options.max_features)
                       .cwiseAbs();
    }
    InteractionMatrix out;
    out.feature_names = model.feature_names;
    out.values = acc / static_cast<double>(n);
    return out;
}

std::vector<double> upper_elements(const InteractionMatrix& matrix) {
    const Eigen::Index m = matrix.values.rows();
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(m * (m + 1) / 2));
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = i; j < m; ++j) out.push_back(matrix.values(i, j));
    return out;
}

namespace {

RankVector rank_elements(const std::vector<double>& elems) {
    std::vector<std::size_t> order(elems.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        double va = std::fabs(elems[a]);
        double vb = std::fabs(elems[b]);
        if (va != vb) return va > vb;
        return a < b;  // ties by element position (row-major upper triangle)
    });
    RankVector ranks(elems.size());
    for (std::size_t pos = 0; pos < order.size(); ++pos)
        ranks[order[pos]] = static_cast<int>(pos + 1);
    return ranks;
}

}  // namespace

RankVector rank_matrix(const InteractionMatrix& matrix) {
    return rank_elements(upper_elements(matrix));
}

std::int64_t footrule(const RankVector& a, const RankVector& b) {
    if (a.size() != b.size()) throw std::invalid_argument("footrule: length mismatch");
    std::int64_t d = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        d += std::llabs(static_cast<std::int64_t>(a[i]) - static_cast<std::int64_t>(b[i]));
    return d;
}

BootstrapNullResult bootstrap_null(const InteractionMatrix& a, const InteractionMatrix& b,
                                   int n_boot, std::uint64_t seed) {
    std::vector<double> elems_a = upper_elements(a);
    std::vector<double> elems_b = upper_elements(b);
    if (elems_a.size() != elems_b.size())
        throw std::invalid_argument("bootstrap_null: matrix size mismatch");
    Rng rng(mix_seed(seed, 0xb007));
    BootstrapNullResult res;
    res.distances.reserve(static_cast<std::size_t>(n_boot));
    std::vector<double> res_a(elems_a.size()), res_b(elems_b.size());
    for (int k = 0; k < n_boot; ++k) {
        for (std::size_t i = 0; i < elems_a.size(); ++i)
            res_a[i] = elems_a[rng.uniform(elems_a.size())];
        for (std::size_t i = 0; i < elems_b.size(); ++i)
            res_b[i] = elems_b[rng.uniform(elems_b.size())];
        res.distances.push_back(footrule(rank_elements(res_a), rank_elements(res_b)));
    }
    double sum = 0.0;
    for (std::int64_t d : res.distances) sum += static_cast<double>(d);
    res.mean = res.distances.empty() ? 0.0 : sum / static_cast<double>(res.distances.size());
    return res;
}

void write_matrix(const std::string& path, const InteractionMatrix& matrix) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    char buf[64];
    out << "feature";
    for (const auto& n : matrix.feature_names) out << '\t' << n;
    out << '\n';
    for (Eigen::Index i = 0; i < matrix.values.rows(); ++i) {
        out << matrix.feature_names[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < matrix.values.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", matrix.values(i, j));
            out << '\t' << buf;
        }
        out << '\n';
    }
}

InteractionMatrix read_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty matrix file " + path);
    auto header = split_tabs(line);
    InteractionMatrix m;
    for (std::size_t i = 1; i < header.size(); ++i) m.feature_names.push_back(header[i]);
    const auto n = static_cast<Eigen::Index>(m.feature_names.size());
    m.values.resize(n, n);
    Eigen::Index r = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_tabs(line);
        if (static_cast<Eigen::Index>(f.size()) != n + 1 || r >= n)
            throw std::runtime_error("malformed matrix file " + path);
        for (Eigen::Index j = 0; j < n; ++j)
            m.values(r, j) = std::stod(f[static_cast<std::size_t>(j + 1)]);
        ++r;
    }
    if (r != n) throw std::runtime_error("matrix row count mismatch in " + path);
    return m;
}

}  // namespace vcrb
