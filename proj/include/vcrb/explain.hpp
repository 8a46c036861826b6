#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "vcrb/gbdt.hpp"

namespace vcrb {

struct PathCondition {
    int feature = -1;
    double threshold = 0.0;
    bool go_left = true;  // the branch this path takes at the condition
};

// One root-to-leaf chain: contribution c is the leaf value scaled by the
// learning rate, support w the fraction of training rows activating it.
struct DecisionPath {
    std::vector<PathCondition> conditions;
    double contribution = 0.0;
    double support = 0.0;
    std::vector<int> feature_set;  // distinct features, ascending
};

struct InteractionMatrix {
    std::vector<std::string> feature_names;
    Eigen::MatrixXd values;  // symmetric; main effects on the diagonal
};

// Ranks of the upper-triangle-plus-diagonal elements in row-major order; a
// permutation of 1..n ordered by absolute strength descending with ties
// broken by (row, col).
using RankVector = std::vector<int>;

std::vector<DecisionPath> extract_paths(const GbdtModel& model, const Eigen::MatrixXd& train_rows);

// Mean of c*w over all decision paths containing a feature pair; paths with
// a single feature feed the diagonal. A path with k >= 3 features
// contributes the same term to each of its pairs.
InteractionMatrix interaction_matrix(const std::vector<DecisionPath>& paths,
                                     const std::vector<std::string>& feature_names);

// Same quantity restricted to paths with exactly k distinct features.
InteractionMatrix order_k_interactions(const std::vector<DecisionPath>& paths,
                                       const std::vector<std::string>& feature_names, int k);

// Exact Shapley interaction indices with the interventional value function
// over a background sample, averaged as element-wise absolute values over
// the explain rows. Main effects sit on the diagonal so each row sums to
// the feature's attribution.
struct ShapleyOptions {
    int max_features = 15;
    int threads = 1;
};

InteractionMatrix shapley_interactions(const GbdtModel& model,
                                       const Eigen::MatrixXd& background_rows,
                                       const Eigen::MatrixXd& explain_rows,
                                       const ShapleyOptions& options = {});

// Per-row (signed) interaction matrix; building block of the above.
Eigen::MatrixXd shapley_interactions_row(const GbdtModel& model,
                                         const Eigen::MatrixXd& background_rows,
                                         const Eigen::RowVectorXd& explain_row,
                                         int max_features = 15);

RankVector rank_matrix(const InteractionMatrix& matrix);

std::int64_t footrule(const RankVector& a, const RankVector& b);

struct BootstrapNullResult {
    double mean = 0.0;
    std::vector<std::int64_t> distances;
};

// Null Footrule distribution: resample each matrix's unique elements with
// replacement, rank, and pair sample i of A with sample i of B.
BootstrapNullResult bootstrap_null(const InteractionMatrix& a, const InteractionMatrix& b,
                                   int n_boot = 500, std::uint64_t seed = 1);

// Upper-triangle-plus-diagonal elements in row-major order.
std::vector<double> upper_elements(const InteractionMatrix& matrix);

void write_matrix(const std::string& path, const InteractionMatrix& matrix);
InteractionMatrix read_matrix(const std::string& path);

}  // namespace vcrb
