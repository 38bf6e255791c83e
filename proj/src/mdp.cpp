#include "lab/mdp.hpp"

#include <cmath>
#include <string>

#include "lab/errors.hpp"
#include "lab/rng.hpp"

namespace lab {

void tabular_mdp::validate() const {
    if (n_states < 1 || n_actions < 1) throw invalid_argument("mdp needs at least one state and one action");
    if (static_cast<int>(transition.size()) != n_actions) throw dimension_mismatch("transition tensor has wrong action count");
    if (reward.size() != n_states) throw dimension_mismatch("reward length differs from n_states");
    for (int a = 0; a < n_actions; ++a) {
        const auto& T = transition[a];
        if (T.rows() != n_states || T.cols() != n_states) throw dimension_mismatch("transition block has wrong shape");
        if ((T.array() < 0.0).any()) throw invalid_argument("negative transition probability");
        for (int s = 0; s < n_states; ++s)
            if (std::abs(T.row(s).sum() - 1.0) > 1e-12)
                throw invalid_argument("transition row does not sum to one (s=" + std::to_string(s) +
                                       ", a=" + std::to_string(a) + ")");
    }
    if (!reward.allFinite()) throw invalid_argument("non-finite reward");
}

tabular_mdp build_chain_mdp(int n_states, double slip_prob, double left_reward, double right_reward) {
    if (n_states < 2) throw invalid_argument("chain needs at least two states");
    if (!(slip_prob >= 0.0 && slip_prob < 1.0)) throw invalid_argument("slip_prob must lie in [0,1)");

    tabular_mdp m;
    m.n_states = n_states;
    m.n_actions = 2;
    Eigen::MatrixXd move[2] = {Eigen::MatrixXd::Zero(n_states, n_states), Eigen::MatrixXd::Zero(n_states, n_states)};
    for (int s = 0; s < n_states; ++s) {
        move[0](s, std::max(s - 1, 0)) = 1.0;  // walls reflect
        move[1](s, std::min(s + 1, n_states - 1)) = 1.0;
    }
    const Eigen::MatrixXd mean_move = 0.5 * (move[0] + move[1]);
    for (int a = 0; a < 2; ++a) m.transition.push_back((1.0 - slip_prob) * move[a] + slip_prob * mean_move);

    m.reward = Eigen::VectorXd::Zero(n_states);
    m.reward(0) = left_reward;
    m.reward(n_states - 1) = right_reward;
    return m;
}

std::vector<std::string> four_rooms_layout() {
    // Classic four-rooms map with the lower hallway widened to two cells,
    // which brings the open-cell count to 105.
    return {
        ".....#.....",
        ".....#.....",
        "...........",
        ".....#.....",
        ".....#.....",
        "#.####.....",
        ".....##..##",
        ".....#.....",
        ".....#.....",
        "...........",
        ".....#.....",
    };
}

tabular_mdp build_four_rooms() {
    const auto grid = four_rooms_layout();
    const int rows = static_cast<int>(grid.size());
    const int cols = static_cast<int>(grid[0].size());
    std::vector<std::vector<int>> id(rows, std::vector<int>(cols, -1));
    int n = 0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            if (grid[r][c] == '.') id[r][c] = n++;

    tabular_mdp m;
    m.n_states = n;
    m.n_actions = 4;
    const int dr[4] = {-1, 0, 1, 0};
    const int dc[4] = {0, 1, 0, -1};
    for (int a = 0; a < 4; ++a) {
        Eigen::MatrixXd T = Eigen::MatrixXd::Zero(n, n);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                if (id[r][c] < 0) continue;
                int nr = r + dr[a], nc = c + dc[a];
                bool blocked = nr < 0 || nr >= rows || nc < 0 || nc >= cols || id[nr][nc] < 0;
                T(id[r][c], blocked ? id[r][c] : id[nr][nc]) = 1.0;
            }
        m.transition.push_back(T);
    }
    m.reward = Eigen::VectorXd::Zero(n);
    return m;
}

circle_mdp build_circle_mdp(int n_states, int reward_state, int n_train) {
    if (n_states < 1) throw invalid_argument("circle needs at least one state");
    if (reward_state < 0 || reward_state >= n_states) throw invalid_argument("reward_state out of range");
    if (n_train < 1 || n_train > n_states) throw invalid_argument("n_train must lie in [1, n_states]");
    circle_mdp out;
    auto& m = out.mdp;
    m.n_states = n_states;
    m.n_actions = 1;
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(n_states, n_states);
    for (int s = 0; s < n_states; ++s) T(s, (s + 1) % n_states) = 1.0;
    m.transition.push_back(T);
    m.reward = Eigen::VectorXd::Zero(n_states);
    m.reward(reward_state) = 1.0;
    for (int s = 0; s < n_train; ++s) out.train.push_back(s);
    return out;
}

tabular_mdp build_random_graph_mdp(int n_states, double edge_prob, std::uint64_t seed) {
    if (n_states < 1) throw invalid_argument("graph needs at least one node");
    if (!(edge_prob >= 0.0 && edge_prob <= 1.0)) throw invalid_argument("edge_prob must lie in [0,1]");
    auto rng = make_rng(seed, 0x67726170ULL);
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n_states, n_states);
    for (int i = 0; i < n_states; ++i)
        for (int j = i + 1; j < n_states; ++j)
            if (randu(rng) < edge_prob) A(i, j) = A(j, i) = 1.0;
    tabular_mdp m;
    m.n_states = n_states;
    m.n_actions = 1;
    Eigen::VectorXd deg = A.rowwise().sum();
    m.transition.push_back(deg.cwiseInverse().asDiagonal() * A);
    m.reward = Eigen::VectorXd::Zero(n_states);
    return m;
}

tabular_mdp build_random_mdp(int n_states, int n_actions, std::uint64_t seed) {
    if (n_states < 1 || n_actions < 1) throw invalid_argument("random mdp needs positive sizes");
    auto rng = make_rng(seed, 0x72616e64ULL);
    tabular_mdp m;
    m.n_states = n_states;
    m.n_actions = n_actions;
    std::exponential_distribution<double> expo(1.0);
    for (int a = 0; a < n_actions; ++a) {
        Eigen::MatrixXd T(n_states, n_states);
        for (int s = 0; s < n_states; ++s) {
            for (int s2 = 0; s2 < n_states; ++s2) T(s, s2) = expo(rng);
            T.row(s) /= T.row(s).sum();
        }
        m.transition.push_back(T);
    }
    m.reward = randn_vector(n_states, rng);
    return m;
}

Eigen::MatrixXd uniform_policy(const tabular_mdp& mdp) {
    return Eigen::MatrixXd::Constant(mdp.n_states, mdp.n_actions, 1.0 / mdp.n_actions);
}

Eigen::MatrixXd deterministic_policy(const tabular_mdp& mdp, const std::vector<int>& actions) {
    if (static_cast<int>(actions.size()) != mdp.n_states) throw dimension_mismatch("one action per state expected");
    Eigen::MatrixXd pi = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s) {
        if (actions[s] < 0 || actions[s] >= mdp.n_actions) throw invalid_argument("action index out of range");
        pi(s, actions[s]) = 1.0;
    }
    return pi;
}

void validate_policy(const tabular_mdp& mdp, const Eigen::MatrixXd& policy) {
    if (policy.rows() != mdp.n_states || policy.cols() != mdp.n_actions)
        throw dimension_mismatch("policy shape does not match mdp");
    if ((policy.array() < 0.0).any()) throw invalid_argument("negative policy probability");
    for (int s = 0; s < mdp.n_states; ++s)
        if (std::abs(policy.row(s).sum() - 1.0) > 1e-12) throw invalid_argument("policy row does not sum to one");
}

Eigen::MatrixXd transition_matrix(const tabular_mdp& mdp, const Eigen::MatrixXd& policy) {
    validate_policy(mdp, policy);
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_states);
    for (int a = 0; a < mdp.n_actions; ++a) P += policy.col(a).asDiagonal() * mdp.transition[a];
    return P;
}

Eigen::VectorXd exact_value(const Eigen::MatrixXd& P, const Eigen::VectorXd& R, double gamma) {
    if (P.rows() != P.cols() || P.rows() != R.size()) throw dimension_mismatch("exact_value: shapes disagree");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw invalid_argument("gamma must lie in [0,1)");
    const Eigen::Index n = P.rows();
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - gamma * P;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible()) throw singular_matrix("I - gamma P is singular; P is not stochastic");
    return lu.solve(R);
}

Eigen::MatrixXd greedy_policy(const tabular_mdp& mdp, const Eigen::VectorXd& V, double gamma) {
    Eigen::MatrixXd Q(mdp.n_states, mdp.n_actions);
    for (int a = 0; a < mdp.n_actions; ++a) Q.col(a) = mdp.reward + gamma * mdp.transition[a] * V;
    std::vector<int> best(mdp.n_states, 0);
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 1; a < mdp.n_actions; ++a)
            if (Q(s, a) > Q(s, best[s]) + 1e-12) best[s] = a;  // ties keep the lower index
    return deterministic_policy(mdp, best);
}

policy_iteration_path policy_iteration(const tabular_mdp& mdp, double gamma, int max_iters,
                                       const std::optional<Eigen::MatrixXd>& initial) {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw invalid_argument("gamma must lie in [0,1)");
    if (max_iters < 1) throw invalid_argument("max_iters must be positive");
    mdp.validate();
    Eigen::MatrixXd pi = initial ? *initial : uniform_policy(mdp);
    policy_iteration_path path;
    for (int it = 0; it < max_iters; ++it) {
        Eigen::VectorXd V = exact_value(transition_matrix(mdp, pi), mdp.reward, gamma);
        path.push_back({pi, V});
        Eigen::MatrixXd next = greedy_policy(mdp, V, gamma);
        if (next == pi) break;
        pi = next;
    }
    return path;
}

nlohmann::json mdp_to_json(const tabular_mdp& mdp) {
    nlohmann::json t = nlohmann::json::array();
    for (int s = 0; s < mdp.n_states; ++s) {
        nlohmann::json row = nlohmann::json::array();
        for (int a = 0; a < mdp.n_actions; ++a) {
            std::vector<double> p(mdp.n_states);
            for (int s2 = 0; s2 < mdp.n_states; ++s2) p[s2] = mdp.transition[a](s, s2);
            row.push_back(p);
        }
        t.push_back(row);
    }
    std::vector<double> r(mdp.reward.data(), mdp.reward.data() + mdp.reward.size());
    return {{"n_states", mdp.n_states}, {"n_actions", mdp.n_actions}, {"transition", t}, {"reward", r}};
}

tabular_mdp mdp_from_json(const nlohmann::json& j) {
    tabular_mdp m;
    m.n_states = j.at("n_states").get<int>();
    m.n_actions = j.at("n_actions").get<int>();
    const auto& t = j.at("transition");
    if (static_cast<int>(t.size()) != m.n_states) throw dimension_mismatch("transition outer size != n_states");
    m.transition.assign(m.n_actions, Eigen::MatrixXd::Zero(m.n_states, m.n_states));
    for (int s = 0; s < m.n_states; ++s) {
        if (static_cast<int>(t[s].size()) != m.n_actions) throw dimension_mismatch("transition middle size != n_actions");
        for (int a = 0; a < m.n_actions; ++a) {
            if (static_cast<int>(t[s][a].size()) != m.n_states) throw dimension_mismatch("transition inner size != n_states");
            for (int s2 = 0; s2 < m.n_states; ++s2) m.transition[a](s, s2) = t[s][a][s2].get<double>();
        }
    }
    auto r = j.at("reward").get<std::vector<double>>();
    if (static_cast<int>(r.size()) != m.n_states) throw dimension_mismatch("reward size != n_states");
    m.reward = Eigen::Map<Eigen::VectorXd>(r.data(), m.n_states);
    m.validate();
    return m;
}

}  // namespace lab
