#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace lab {

struct rank_report {
    Eigen::VectorXd singular_values;  // descending, as thresholded
    double threshold = 0.0;           // absolute cut applied to singular_values
    int rank = 0;
    bool normalized = false;          // true when the cut was relative to sigma_max
    int n = 0;
    int d = 0;
};

// Singular values of phi / sqrt(n) above eps.
rank_report feature_rank(const Eigen::MatrixXd& phi, double eps = 0.01);

// Singular values of phi with sigma / sigma_max above eps.
rank_report srank(const Eigen::MatrixXd& phi, double eps = 0.01);

// Singular values of U above eps_fraction * sigma_max.
rank_report update_rank(const Eigen::MatrixXd& U, double eps_fraction = 0.1);

enum class optimizer_kind { sgd, adam };

struct optimizer_spec {
    optimizer_kind kind = optimizer_kind::sgd;
    double lr = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool reset_state = true;  // fresh optimizer state for every row
};

struct optimizer_state {
    Eigen::VectorXd m, v;
    int t = 0;
};

// One ascent step along g (the TD semi-gradient is an ascent direction on
// the value estimate).
Eigen::VectorXd optimizer_step(const Eigen::VectorXd& params, const Eigen::VectorXd& g, const optimizer_spec& opt,
                               optimizer_state& state);

// Update direction for row i at the given parameters.
using update_direction_fn = std::function<Eigen::VectorXd(const Eigen::VectorXd& params, int i)>;
// Model outputs at the probe points: one row per point, one column per output.
using evaluate_fn = std::function<Eigen::MatrixXd(const Eigen::VectorXd& params)>;

// Entry (i, j) = |reduce(f_{theta_i'}(x_j)) - reduce(f_theta(x_j))| where
// theta_i' is one optimizer step on row i from theta and reduce takes the
// max over outputs.
Eigen::MatrixXd update_matrix(const Eigen::VectorXd& params, int n_rows, const update_direction_fn& direction,
                              const evaluate_fn& evaluate, const optimizer_spec& opt);

struct td_transition {
    int x = 0;
    double r = 0.0;
    int x_next = 0;
};

// Linear value model V = features * w trained with TD semi-gradient steps.
// Probe points are the transitions' source states.
Eigen::MatrixXd linear_td_update_matrix(const Eigen::MatrixXd& features, const Eigen::VectorXd& w,
                                        const std::vector<td_transition>& transitions, double gamma,
                                        const optimizer_spec& opt);

// RBF features exp(-(x - c)^2 / (2 l^2)) on integer states with one centre per state.
Eigen::MatrixXd rbf_features(int n_states, double lengthscale);

}  // namespace lab
