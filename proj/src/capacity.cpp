#include "lab/capacity.hpp"

#include <cmath>

#include "lab/errors.hpp"

namespace lab {

namespace {

Eigen::VectorXd singular_values(const Eigen::MatrixXd& M) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(M);
    return svd.singularValues();
}

int count_above(const Eigen::VectorXd& sv, double cut) {
    int r = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cut) ++r;
    return r;
}

}  // namespace

rank_report feature_rank(const Eigen::MatrixXd& phi, double eps) {
    if (!(eps > 0.0)) throw invalid_argument("feature_rank: eps must be positive");
    if (phi.rows() < 1 || phi.cols() < 1) throw invalid_argument("feature_rank: empty feature matrix");
    rank_report r;
    r.n = static_cast<int>(phi.rows());
    r.d = static_cast<int>(phi.cols());
    r.singular_values = singular_values(phi / std::sqrt(static_cast<double>(phi.rows())));
    r.threshold = eps;
    r.rank = count_above(r.singular_values, eps);
    return r;
}

rank_report srank(const Eigen::MatrixXd& phi, double eps) {
    if (!(eps > 0.0)) throw invalid_argument("srank: eps must be positive");
    rank_report r;
    r.n = static_cast<int>(phi.rows());
    r.d = static_cast<int>(phi.cols());
    r.singular_values = singular_values(phi);
    if (r.singular_values.size() == 0 || r.singular_values(0) == 0.0) throw invalid_argument("srank: zero matrix");
    r.threshold = eps * r.singular_values(0);
    r.normalized = true;
    r.rank = count_above(r.singular_values, r.threshold);
    return r;
}

rank_report update_rank(const Eigen::MatrixXd& U, double eps_fraction) {
    if (!(eps_fraction > 0.0)) throw invalid_argument("update_rank: eps_fraction must be positive");
    rank_report r;
    r.n = static_cast<int>(U.rows());
    r.d = static_cast<int>(U.cols());
    r.singular_values = singular_values(U);
    if (r.singular_values.size() == 0 || r.singular_values(0) == 0.0) throw invalid_argument("update_rank: zero matrix");
    r.threshold = eps_fraction * r.singular_values(0);
    r.normalized = true;
    r.rank = count_above(r.singular_values, r.threshold);
    return r;
}

Eigen::VectorXd optimizer_step(const Eigen::VectorXd& params, const Eigen::VectorXd& g, const optimizer_spec& opt,
                               optimizer_state& state) {
    if (g.size() != params.size()) throw dimension_mismatch("gradient and parameters differ in length");
    if (opt.kind == optimizer_kind::sgd) return params + opt.lr * g;
    if (state.m.size() != g.size()) {
        state.m = Eigen::VectorXd::Zero(g.size());
        state.v = Eigen::VectorXd::Zero(g.size());
        state.t = 0;
    }
    state.t += 1;
    state.m = opt.beta1 * state.m + (1.0 - opt.beta1) * g;
    state.v = opt.beta2 * state.v + (1.0 - opt.beta2) * g.cwiseAbs2();
    Eigen::ArrayXd mhat = state.m.array() / (1.0 - std::pow(opt.beta1, state.t));
    Eigen::ArrayXd vhat = state.v.array() / (1.0 - std::pow(opt.beta2, state.t));
    return params + (opt.lr * mhat / (vhat.sqrt() + opt.eps)).matrix();
}

Eigen::MatrixXd update_matrix(const Eigen::VectorXd& params, int n_rows, const update_direction_fn& direction,
                              const evaluate_fn& evaluate, const optimizer_spec& opt) {
    if (n_rows < 1) throw invalid_argument("update_matrix: no rows");
    const Eigen::MatrixXd base = evaluate(params);
    if (base.rows() != n_rows) throw dimension_mismatch("evaluate must return one row per probe point");
    const Eigen::VectorXd base_red = base.rowwise().maxCoeff();
    Eigen::MatrixXd out(n_rows, n_rows);
    optimizer_state shared;
    for (int i = 0; i < n_rows; ++i) {
        optimizer_state fresh;
        optimizer_state& st = opt.reset_state ? fresh : shared;
        Eigen::VectorXd p = optimizer_step(params, direction(params, i), opt, st);
        Eigen::VectorXd red = evaluate(p).rowwise().maxCoeff();
        out.row(i) = (red - base_red).cwiseAbs().transpose();
    }
    return out;
}

Eigen::MatrixXd linear_td_update_matrix(const Eigen::MatrixXd& features, const Eigen::VectorXd& w,
                                        const std::vector<td_transition>& transitions, double gamma,
                                        const optimizer_spec& opt) {
    if (transitions.empty()) throw invalid_argument("update_matrix: no transitions");
    if (features.cols() != w.size()) throw dimension_mismatch("feature width differs from weight length");
    for (const auto& tr : transitions)
        if (tr.x < 0 || tr.x >= features.rows() || tr.x_next < 0 || tr.x_next >= features.rows())
            throw dimension_mismatch("transition state outside feature matrix");
    const int n = static_cast<int>(transitions.size());
    auto direction = [&](const Eigen::VectorXd& p, int i) -> Eigen::VectorXd {
        const auto& tr = transitions[i];
        double delta = tr.r + gamma * features.row(tr.x_next).dot(p) - features.row(tr.x).dot(p);
        return delta * features.row(tr.x).transpose();
    };
    auto evaluate = [&](const Eigen::VectorXd& p) -> Eigen::MatrixXd {
        Eigen::MatrixXd v(n, 1);
        for (int j = 0; j < n; ++j) v(j, 0) = features.row(transitions[j].x).dot(p);
        return v;
    };
    return update_matrix(w, n, direction, evaluate, opt);
}

Eigen::MatrixXd rbf_features(int n_states, double lengthscale) {
    if (!(lengthscale > 0.0)) throw invalid_argument("lengthscale must be positive");
    Eigen::MatrixXd F(n_states, n_states);
    for (int x = 0; x < n_states; ++x)
        for (int c = 0; c < n_states; ++c) {
            double d = x - c;
            F(x, c) = std::exp(-d * d / (2.0 * lengthscale * lengthscale));
        }
    return F;
}

}  // namespace lab
