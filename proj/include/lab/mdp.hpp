#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace lab {

/*
 * Finite MDP with a state-only reward.
 * transition[a](s, s') is the probability of landing in s' after taking a in s.
 */
struct tabular_mdp {
    int n_states = 0;
    int n_actions = 0;
    std::vector<Eigen::MatrixXd> transition;
    Eigen::VectorXd reward;

    // Throws invalid_argument if any row is not a distribution or a reward
    // is not finite.
    void validate() const;
};

struct circle_mdp {
    tabular_mdp mdp;
    std::vector<int> train;
};

struct policy_step {
    Eigen::MatrixXd policy;  // n_states x n_actions
    Eigen::VectorXd values;
};

using policy_iteration_path = std::vector<policy_step>;

// Chain with actions {0: left, 1: right}; with probability slip_prob a
// uniformly random action executes instead. Reward sits on the end states.
tabular_mdp build_chain_mdp(int n_states, double slip_prob, double left_reward, double right_reward);

// 11x11 four-rooms layout with 105 open cells, actions {up, right, down, left}.
tabular_mdp build_four_rooms();

// Character map of the four-rooms layout ('#' wall, '.' open), row by row.
std::vector<std::string> four_rooms_layout();

// Deterministic cycle s -> s+1 mod n with a unit reward at reward_state.
circle_mdp build_circle_mdp(int n_states, int reward_state, int n_train);

// Random walk on a random undirected graph (every node has a self-loop so the
// walk is always defined). Single action, zero reward.
tabular_mdp build_random_graph_mdp(int n_states, double edge_prob, std::uint64_t seed);

// Rows drawn uniformly from the simplex, rewards N(0, 1).
tabular_mdp build_random_mdp(int n_states, int n_actions, std::uint64_t seed);

Eigen::MatrixXd uniform_policy(const tabular_mdp& mdp);
Eigen::MatrixXd deterministic_policy(const tabular_mdp& mdp, const std::vector<int>& actions);
void validate_policy(const tabular_mdp& mdp, const Eigen::MatrixXd& policy);

Eigen::MatrixXd transition_matrix(const tabular_mdp& mdp, const Eigen::MatrixXd& policy);

// V = (I - gamma P)^{-1} R.
Eigen::VectorXd exact_value(const Eigen::MatrixXd& P, const Eigen::VectorXd& R, double gamma);

Eigen::MatrixXd greedy_policy(const tabular_mdp& mdp, const Eigen::VectorXd& V, double gamma);

// Starts from `initial` (uniform policy when absent). Stops when the greedy
// policy repeats or after max_iters evaluations.
policy_iteration_path policy_iteration(const tabular_mdp& mdp, double gamma, int max_iters,
                                       const std::optional<Eigen::MatrixXd>& initial = std::nullopt);

nlohmann::json mdp_to_json(const tabular_mdp& mdp);
tabular_mdp mdp_from_json(const nlohmann::json& j);

}  // namespace lab
