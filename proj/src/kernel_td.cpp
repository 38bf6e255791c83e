#include "lab/kernel_td.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lab/errors.hpp"
#include "lab/mdp.hpp"
#include "lab/spectral.hpp"

namespace lab {

Eigen::MatrixXd line_embedding(int n_states) {
    Eigen::MatrixXd e(n_states, 1);
    for (int s = 0; s < n_states; ++s) e(s, 0) = s;
    return e;
}

Eigen::MatrixXd circle_embedding(int n_states) {
    Eigen::MatrixXd e(n_states, 2);
    for (int s = 0; s < n_states; ++s) {
        double a = 2.0 * M_PI * s / n_states;
        e(s, 0) = std::cos(a);
        e(s, 1) = std::sin(a);
    }
    return e;
}

Eigen::MatrixXd build_kernel(const kernel_spec& spec, const std::vector<int>& rows, const std::vector<int>& cols) {
    if (!(spec.lengthscale > 0.0)) throw invalid_argument("lengthscale must be positive");
    if (!spec.embedding.allFinite()) throw invalid_argument("embedding must be finite");
    const double inv = 1.0 / (2.0 * spec.lengthscale * spec.lengthscale);
    Eigen::MatrixXd K(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) {
            if (rows[i] < 0 || rows[i] >= spec.embedding.rows() || cols[j] < 0 || cols[j] >= spec.embedding.rows())
                throw invalid_argument("state index outside embedding");
            double d2 = (spec.embedding.row(rows[i]) - spec.embedding.row(cols[j])).squaredNorm();
            K(i, j) = std::exp(-d2 * inv);
        }
    return K;
}

Eigen::MatrixXd build_kernel(const kernel_spec& spec, const std::vector<int>& states) {
    if (states.empty()) throw invalid_argument("build_kernel: no states");
    return build_kernel(spec, states, states);
}

std::vector<int> complement(const std::vector<int>& idx, int n) {
    std::vector<char> in(n, 0);
    for (int i : idx) {
        if (i < 0 || i >= n) throw invalid_argument("index out of range");
        in[i] = 1;
    }
    std::vector<int> out;
    for (int i = 0; i < n; ++i)
        if (!in[i]) out.push_back(i);
    return out;
}

split_kernel make_split(const kernel_spec& spec, const std::vector<int>& train, int n_states) {
    auto test = complement(train, n_states);
    split_kernel s;
    s.K_train = build_kernel(spec, train);
    s.K_cross = test.empty() ? Eigen::MatrixXd(0, train.size()) : build_kernel(spec, test, train);
    return s;
}

flow_trajectory kernel_td_flow(const Eigen::VectorXd& V0, const split_kernel& split, const Eigen::MatrixXd& P,
                               const Eigen::VectorXd& R, double gamma, const std::vector<int>& train,
                               const flow_config& cfg) {
    const int n = static_cast<int>(V0.size());
    if (train.empty()) throw invalid_argument("kernel_td_flow: empty train set");
    if (P.rows() != n || P.cols() != n || R.size() != n) throw dimension_mismatch("kernel_td_flow: shapes disagree");
    const auto test = complement(train, n);
    const Eigen::Index nt = static_cast<Eigen::Index>(train.size());
    if (split.K_train.rows() != nt || split.K_train.cols() != nt ||
        split.K_cross.rows() != static_cast<Eigen::Index>(test.size()) || split.K_cross.cols() != nt)
        throw dimension_mismatch("kernel blocks do not match the split");

    // Stack K_all so that dV = K_all d with rows in natural state order.
    Eigen::MatrixXd K_all(n, nt);
    for (Eigen::Index i = 0; i < nt; ++i) K_all.row(train[i]) = split.K_train.row(i);
    for (std::size_t i = 0; i < test.size(); ++i) K_all.row(test[i]) = split.K_cross.row(i);
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(nt, n);  // restriction to train states
    for (Eigen::Index i = 0; i < nt; ++i) S(i, train[i]) = 1.0;

    // Linear system dV = -M V + b.
    Eigen::MatrixXd M = K_all * S * (Eigen::MatrixXd::Identity(n, n) - gamma * P);
    Eigen::VectorXd b = K_all * (S * R);
    flow_config c = cfg;
    c.method = integrator::rk4;
    c.gamma = gamma;
    return linear_flow(V0, M, b, c);
}

kernel_td_outcome run_kernel_td(const Eigen::VectorXd& V0, const kernel_spec& spec, const Eigen::MatrixXd& P,
                                const Eigen::VectorXd& R, double gamma, const std::vector<int>& train,
                                const flow_config& cfg) {
    const int n = static_cast<int>(V0.size());
    kernel_td_outcome out;
    const split_kernel split = make_split(spec, train, n);
    try {
        out.trajectory = kernel_td_flow(V0, split, P, R, gamma, train, cfg);
    } catch (const divergence_detected& e) {
        out.diverged = true;
        out.divergence_time = e.time();
        out.divergence_norm = e.norm();
        // Replay up to the last snapshot before the crossing. The grid spacing
        // is unchanged, so the replayed states are the ones already computed.
        const auto grid = cfg.grid();
        std::size_t last = 0;
        while (last + 1 < grid.size() && grid[last + 1] < e.time()) ++last;
        flow_config c = cfg;
        c.t_end = grid[last];
        c.n_snapshots = static_cast<int>(last) + 1;
        out.trajectory = kernel_td_flow(V0, split, P, R, gamma, train, c);
        return out;
    }
    Eigen::VectorXd V = out.trajectory.final_state().col(0);
    Eigen::VectorXd Vpi = exact_value(P, R, gamma);
    Eigen::VectorXd delta = R + gamma * P * V - V;
    const auto test = complement(train, n);
    for (int s : train) {
        out.train_bellman_residual = std::max(out.train_bellman_residual, std::abs(delta(s)));
        out.train_mse += (V(s) - Vpi(s)) * (V(s) - Vpi(s));
    }
    out.train_mse /= static_cast<double>(train.size());
    for (int s : test) {
        out.test_max_abs = std::max(out.test_max_abs, std::abs(V(s)));
        out.test_mse += (V(s) - Vpi(s)) * (V(s) - Vpi(s));
    }
    if (!test.empty()) out.test_mse /= static_cast<double>(test.size());
    return out;
}

regression_target parse_regression_target(const std::string& name) {
    if (name == "value") return regression_target::value;
    if (name == "projected-top") return regression_target::projected_top;
    if (name == "projected-bottom") return regression_target::projected_bottom;
    if (name == "nstep") return regression_target::nstep;
    throw invalid_argument("unknown regression target '" + name + "'");
}

Eigen::VectorXd generalization_target_vector(const spectrum& sp, const Eigen::MatrixXd& P, const Eigen::VectorXd& R,
                                             double gamma, const generalization_target& target) {
    const Eigen::Index n = P.rows();
    switch (target.kind) {
        case regression_target::value:
            return exact_value(P, R, gamma);
        case regression_target::nstep: {
            if (target.n < 1) throw invalid_argument("n-step target needs n >= 1");
            Eigen::VectorXd acc = Eigen::VectorXd::Zero(n), term = R;
            for (int k = 0; k < target.n; ++k) {
                acc += term;
                term = gamma * (P * term);
            }
            return acc;
        }
        case regression_target::projected_top:
        case regression_target::projected_bottom: {
            Eigen::MatrixXd U = sp.real_vectors();
            Eigen::VectorXd a = eigenbasis_coefficients(exact_value(P, R, gamma), sp);
            const Eigen::Index m = std::min<Eigen::Index>(target.top_count, n);
            Eigen::VectorXd keep = Eigen::VectorXd::Zero(n);
            if (target.kind == regression_target::projected_top)
                keep.head(m) = a.head(m);
            else
                keep.tail(m) = a.tail(m);
            return U * keep;
        }
    }
    throw invalid_argument("unhandled regression target");
}

Eigen::VectorXd generalization_target_vector(const Eigen::MatrixXd& P, const Eigen::VectorXd& R, double gamma,
                                             const generalization_target& target) {
    return generalization_target_vector(eigendecompose(P), P, R, gamma, target);
}

double smooth_kernel_generalization(const spectrum& sp, const Eigen::VectorXd& y, const std::vector<int>& S,
                                    double train_fraction, rng_t& rng) {
    const int n = static_cast<int>(y.size());
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw invalid_argument("train_fraction must lie in (0,1]");
    Eigen::MatrixXd U = sp.real_vectors();
    if (U.rows() != n) throw dimension_mismatch("target length differs from the spectrum");
    Eigen::MatrixXd US(n, S.size());
    for (std::size_t k = 0; k < S.size(); ++k) {
        if (S[k] < 0 || S[k] >= n) throw invalid_argument("eigen index out of range");
        US.col(k) = U.col(S[k]);
    }

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const int n_train = std::max(1, static_cast<int>(std::floor(n * train_fraction)));
    std::vector<int> train(perm.begin(), perm.begin() + n_train);
    std::sort(train.begin(), train.end());
    std::vector<int> test = complement(train, n);
    if (test.empty()) test = train;  // full data: report the in-sample fit

    // K_S = US US^T is low rank, so solve (K_tt + eps I) c = y through the
    // push-through identity in the |S|-dimensional feature space.
    Eigen::MatrixXd Ut(n_train, US.cols());
    Eigen::VectorXd yt(n_train);
    for (int i = 0; i < n_train; ++i) {
        Ut.row(i) = US.row(train[i]);
        yt(i) = y(train[i]);
    }
    Eigen::MatrixXd G = Ut.transpose() * Ut;
    G.diagonal().array() += 1e-10;
    Eigen::VectorXd w = G.ldlt().solve(Ut.transpose() * yt);
    double mse = 0.0;
    for (int s : test) {
        double pred = US.row(s).dot(w);
        mse += (pred - y(s)) * (pred - y(s));
    }
    return mse / static_cast<double>(test.size());
}

double smooth_kernel_generalization(const Eigen::MatrixXd& P, const Eigen::VectorXd& R, double gamma,
                                    const std::vector<int>& S, double train_fraction,
                                    const generalization_target& target, rng_t& rng) {
    auto sp = eigendecompose(P);
    return smooth_kernel_generalization(sp, generalization_target_vector(sp, P, R, gamma, target), S, train_fraction,
                                        rng);
}

}  // namespace lab
