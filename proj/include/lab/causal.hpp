#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace lab {

struct environment {
    Eigen::MatrixXd inputs;  // n_e x p, state at time t
    Eigen::MatrixXd next;    // n_e x p, state at time t + 1
    Eigen::VectorXd reward;  // n_e, reward observed at time t
};

struct env_dataset {
    std::vector<environment> envs;

    int p() const { return envs.empty() ? 0 : static_cast<int>(envs[0].inputs.cols()); }
    void validate() const;
};

// Regression target: the reward, or next-step value of one state variable.
struct icp_target {
    bool is_reward = true;
    int var = -1;

    static icp_target reward() { return {true, -1}; }
    static icp_target next_state(int v) { return {false, v}; }
    std::string name() const;
};

struct subset_test {
    std::vector<int> subset;
    double p_mean = 1.0;
    double p_variance = 1.0;
    double p_value = 1.0;  // Bonferroni combination of the two
    bool accepted = false;
    bool skipped = false;  // rank-deficient design
};

struct icp_result {
    icp_target target;
    double alpha = 0.05;
    std::vector<subset_test> tests;
    std::vector<int> intersection;  // defensible parents
    std::vector<int> largest;       // largest accepted set (ties: first in enumeration order)
    bool any_accepted = false;

    // True when some subset was rejected and the intersection is itself
    // one of the accepted sets.
    bool identified() const;
};

enum class aggregation { intersection, largest };

struct causal_report {
    std::vector<int> selected;
    double alpha = 0.05;
    double alpha_used = 0.05;  // per-call level alpha / p
    aggregation agg = aggregation::intersection;
    bool identified = true;
    std::vector<icp_result> calls;
};

// Pooled OLS of the target on [1, x_S] for every subset S of the candidates,
// followed by a residual invariance test across environments.
icp_result icp_parents(const icp_target& target, const std::vector<int>& candidates, const env_dataset& data,
                       double alpha);

causal_report linear_misa(const env_dataset& data, double alpha, aggregation agg = aggregation::intersection);

nlohmann::json to_json(const causal_report& report);

// Linear-Gaussian dynamics x' = A x + diag(noise_sd) eps with reward
// r = reward_weights^T x + N(0, reward_noise_sd^2).
struct linear_scm {
    Eigen::MatrixXd A;
    Eigen::VectorXd noise_sd;
    Eigen::VectorXd reward_weights;
    double reward_noise_sd = 0.1;

    int p() const { return static_cast<int>(A.rows()); }
};

// The three-variable family: x1 and x2 are random walks, x3 copies x2,
// reward reads x1 + x2.
linear_scm synthetic_family_scm();

// Simulates one trajectory of n_steps transitions per environment from
// x = 0. noise_scales(e, v) multiplies the noise of variable v in env e.
env_dataset simulate_scm(const linear_scm& scm, const Eigen::MatrixXd& noise_scales, int n_steps, std::uint64_t seed);

// Environment e scales the noise of variable e mod 3 by
// intervention_scales[e] (a single entry is broadcast).
env_dataset build_synthetic_family(int n_envs, int n_steps, std::uint64_t seed,
                                   const std::vector<double>& intervention_scales);

// Least squares (no intercept) of the reward on the selected variables,
// pooled across environments; other coefficients are zero.
Eigen::VectorXd fit_reward_weights(const env_dataset& data, const std::vector<int>& selected);

// Expected squared reward-prediction error averaged over t = 1..horizon in a
// test environment started at 0 with do(x_var = value) at every step.
double expected_reward_mse(const Eigen::VectorXd& w, const linear_scm& scm, int var, double value, int horizon);

struct robustness_curve {
    std::vector<double> values;
    std::vector<double> full_error;
    std::vector<double> misa_error;
};

robustness_curve intervention_robustness(const Eigen::VectorXd& weights_full, const Eigen::VectorXd& weights_misa,
                                         const linear_scm& scm, int var, const std::vector<double>& values,
                                         int horizon);

// CSV with columns env, x0.., next0.., reward.
void write_env_dataset_csv(std::ostream& os, const env_dataset& data);
env_dataset read_env_dataset_csv(std::istream& is);

}  // namespace lab
