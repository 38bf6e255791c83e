#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "lab/flow.hpp"
#include "lab/rng.hpp"

namespace lab {

struct kernel_spec {
    double lengthscale = 1.0;
    Eigen::MatrixXd embedding;  // one row per state
};

struct split_kernel {
    Eigen::MatrixXd K_train;  // n_train x n_train
    Eigen::MatrixXd K_cross;  // n_test x n_train
};

// Integer states as points on the real line / on the unit circle.
Eigen::MatrixXd line_embedding(int n_states);
Eigen::MatrixXd circle_embedding(int n_states);

// RBF Gram matrix exp(-|e_i - e_j|^2 / (2 l^2)) over the listed states.
Eigen::MatrixXd build_kernel(const kernel_spec& spec, const std::vector<int>& states);
Eigen::MatrixXd build_kernel(const kernel_spec& spec, const std::vector<int>& rows, const std::vector<int>& cols);

std::vector<int> complement(const std::vector<int>& idx, int n);
split_kernel make_split(const kernel_spec& spec, const std::vector<int>& train, int n_states);

// RK4 integration of dV(train) = K_train d, dV(test) = K_cross d with
// d = (R + gamma P V - V)(train). Throws divergence_detected.
flow_trajectory kernel_td_flow(const Eigen::VectorXd& V0, const split_kernel& split, const Eigen::MatrixXd& P,
                               const Eigen::VectorXd& R, double gamma, const std::vector<int>& train,
                               const flow_config& cfg);

struct kernel_td_outcome {
    bool diverged = false;
    double divergence_time = 0.0;
    double divergence_norm = 0.0;
    double train_bellman_residual = 0.0;  // sup norm on train states at t_end
    double test_max_abs = 0.0;            // sup |V(test)| at t_end
    double train_mse = 0.0;               // against V^pi
    double test_mse = 0.0;
    flow_trajectory trajectory;           // snapshots before the crossing when diverged
};

// Runs kernel_td_flow and summarizes it instead of throwing on divergence.
kernel_td_outcome run_kernel_td(const Eigen::VectorXd& V0, const kernel_spec& spec, const Eigen::MatrixXd& P,
                                const Eigen::VectorXd& R, double gamma, const std::vector<int>& train,
                                const flow_config& cfg);

enum class regression_target { value, projected_top, projected_bottom, nstep };

struct generalization_target {
    regression_target kind = regression_target::value;
    int n = 1;          // n-step horizon
    int top_count = 20; // size of the top / bottom eigen blocks used for projections
};

regression_target parse_regression_target(const std::string& name);

// Target vector over all states for the given reward.
Eigen::VectorXd generalization_target_vector(const Eigen::MatrixXd& P, const Eigen::VectorXd& R, double gamma,
                                             const generalization_target& target);
Eigen::VectorXd generalization_target_vector(const spectrum& sp, const Eigen::MatrixXd& P, const Eigen::VectorXd& R,
                                             double gamma, const generalization_target& target);

// Kernel regression with K_S = sum_{i in S} v_i v_i^T fitted on a random
// train subset; returns held-out MSE. One MDP, one split.
double smooth_kernel_generalization(const Eigen::MatrixXd& P, const Eigen::VectorXd& R, double gamma,
                                    const std::vector<int>& S, double train_fraction,
                                    const generalization_target& target, rng_t& rng);

// Same regression with a precomputed spectrum and target vector.
double smooth_kernel_generalization(const spectrum& sp, const Eigen::VectorXd& y, const std::vector<int>& S,
                                    double train_fraction, rng_t& rng);

}  // namespace lab
