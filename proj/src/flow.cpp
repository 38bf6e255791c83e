#include "lab/flow.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <functional>
#include <limits>

#include "lab/errors.hpp"

namespace lab {

namespace {

constexpr double k_divergence_norm = 1e8;

void require_square(const Eigen::MatrixXd& P, Eigen::Index n, const char* who) {
    if (P.rows() != P.cols() || P.rows() != n) throw dimension_mismatch(std::string(who) + ": shapes disagree");
}

Eigen::MatrixXd eye(Eigen::Index n) { return Eigen::MatrixXd::Identity(n, n); }

// Number of RK4 substeps covering `interval` with steps no longer than dt.
int substeps(double interval, double dt) {
    return std::max(1, static_cast<int>(std::ceil(interval / dt - 1e-9)));
}

using rhs_fn = std::function<void(const Eigen::MatrixXd&, const Eigen::MatrixXd&, Eigen::MatrixXd&, Eigen::MatrixXd&)>;

// Fixed-step RK4 over the pair (X, W), recording snapshots on cfg.grid().
flow_trajectory rk4_pair(const Eigen::MatrixXd& X0, const Eigen::MatrixXd& W0, const rhs_fn& f, const flow_config& cfg,
                         bool record_weights) {
    flow_trajectory tr;
    tr.times = cfg.grid();
    Eigen::MatrixXd X = X0, W = W0;
    Eigen::MatrixXd k1x, k1w, k2x, k2w, k3x, k3w, k4x, k4w;
    tr.states.push_back(X);
    if (record_weights) tr.weights.push_back(W);
    for (std::size_t s = 1; s < tr.times.size(); ++s) {
        const double interval = tr.times[s] - tr.times[s - 1];
        const int m = substeps(interval, cfg.dt);
        const double h = interval / m;
        for (int k = 0; k < m; ++k) {
            f(X, W, k1x, k1w);
            f(X + 0.5 * h * k1x, W + 0.5 * h * k1w, k2x, k2w);
            f(X + 0.5 * h * k2x, W + 0.5 * h * k2w, k3x, k3w);
            f(X + h * k3x, W + h * k3w, k4x, k4w);
            X += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            W += (h / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
            double sup = std::max(X.cwiseAbs().maxCoeff(), W.size() ? W.cwiseAbs().maxCoeff() : 0.0);
            if (!std::isfinite(sup) || sup > k_divergence_norm) {
                double t = tr.times[s - 1] + (k + 1) * h;
                throw divergence_detected("trajectory sup norm exceeded 1e8 at t=" + std::to_string(t), t, sup);
            }
        }
        tr.states.push_back(X);
        if (record_weights) tr.weights.push_back(W);
    }
    tr.info["rk4_dt"] = cfg.dt;
    return tr;
}

Eigen::MatrixXd solve_fixed_point(const Eigen::MatrixXd& A, const Eigen::MatrixXd& b) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible()) throw singular_matrix("flow generator is singular");
    return lu.solve(b);
}

}  // namespace

void flow_config::validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw invalid_argument("gamma must lie in [0,1)");
    if (!(dt > 0.0)) throw invalid_argument("dt must be positive");
    if (!(t_end >= 0.0)) throw invalid_argument("t_end must be nonnegative");
    if (n_snapshots < 1) throw invalid_argument("n_snapshots must be positive");
    if (alpha < 0.0 || beta < 0.0) throw invalid_argument("learning rates must be nonnegative");
}

std::vector<double> flow_config::grid() const {
    validate();
    if (t_end == 0.0 || n_snapshots == 1) return {0.0};
    std::vector<double> g(n_snapshots);
    for (int i = 0; i < n_snapshots; ++i) g[i] = t_end * i / (n_snapshots - 1);
    return g;
}

void flow_trajectory::add_metric(const std::string& name, std::vector<double> values) {
    if (values.size() != times.size()) throw dimension_mismatch("metric length differs from time grid");
    for (auto& m : metrics)
        if (m.first == name) {
            m.second = std::move(values);
            return;
        }
    metrics.emplace_back(name, std::move(values));
}

const std::vector<double>& flow_trajectory::metric(const std::string& name) const {
    for (const auto& m : metrics)
        if (m.first == name) return m.second;
    throw invalid_argument("no metric named " + name);
}

Eigen::MatrixXd expm(const Eigen::MatrixXd& A) { return A.exp(); }

decay_propagator::decay_propagator(const Eigen::MatrixXd& A, bool allow_eigen) : A_(A) {
    if (A.rows() != A.cols()) throw dimension_mismatch("propagator generator must be square");
    if (!allow_eigen) return;
    Eigen::EigenSolver<Eigen::MatrixXd> es(A, true);
    if (es.info() != Eigen::Success) return;
    const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
    if (es.eigenvalues().imag().cwiseAbs().maxCoeff() > 1e-10 * scale) return;
    Eigen::MatrixXd U = es.eigenvectors().real();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(U);
    if (!lu.isInvertible()) return;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(U);
    const auto& sv = svd.singularValues();
    if (sv(sv.size() - 1) < 1e-10 * sv(0)) return;  // near-defective
    mu_ = es.eigenvalues().real();
    U_ = U;
    Uinv_ = lu.inverse();
    eigen_ = true;
}

Eigen::MatrixXd decay_propagator::apply(double t, const Eigen::MatrixXd& X) const {
    if (X.rows() != A_.rows()) throw dimension_mismatch("propagator applied to wrong-size state");
    if (eigen_) {
        Eigen::VectorXd d = (-t * mu_).array().exp();
        return U_ * (d.asDiagonal() * (Uinv_ * X));
    }
    return (-t * A_).exp() * X;
}

Eigen::MatrixXd decay_propagator::matrix(double t) const { return apply(t, eye(A_.rows())); }

flow_trajectory linear_flow(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& A, const Eigen::MatrixXd& b,
                            const flow_config& cfg) {
    cfg.validate();
    require_square(A, x0.rows(), "linear_flow");
    if (b.rows() != x0.rows() || (b.cols() != x0.cols() && b.cols() != 1)) throw dimension_mismatch("linear_flow: b shape");
    Eigen::MatrixXd B = b.cols() == x0.cols() ? b : b.replicate(1, x0.cols());
    if (cfg.method == integrator::rk4) {
        auto f = [&](const Eigen::MatrixXd& X, const Eigen::MatrixXd&, Eigen::MatrixXd& dX, Eigen::MatrixXd& dW) {
            dX = B - A * X;
            dW.resize(0, 0);
        };
        return rk4_pair(x0, Eigen::MatrixXd(0, 0), f, cfg, false);
    }
    Eigen::MatrixXd xs = solve_fixed_point(A, B);
    decay_propagator prop(A);
    flow_trajectory tr;
    tr.times = cfg.grid();
    Eigen::MatrixXd e0 = x0 - xs;
    for (double t : tr.times) tr.states.push_back(t == 0.0 ? x0 : Eigen::MatrixXd(prop.apply(t, e0) + xs));
    tr.info["expm_eigen_path"] = prop.uses_eigen() ? 1.0 : 0.0;
    return tr;
}

flow_trajectory td_value_flow(const Eigen::VectorXd& V0, const Eigen::MatrixXd& P, const Eigen::VectorXd& R,
                              const flow_config& cfg) {
    require_square(P, V0.size(), "td_value_flow");
    if (R.size() != V0.size()) throw dimension_mismatch("td_value_flow: reward length");
    return linear_flow(V0, eye(P.rows()) - cfg.gamma * P, R, cfg);
}

flow_trajectory mc_value_flow(const Eigen::VectorXd& V0, const Eigen::MatrixXd& P, const Eigen::VectorXd& R,
                              const flow_config& cfg) {
    require_square(P, V0.size(), "mc_value_flow");
    if (R.size() != V0.size()) throw dimension_mismatch("mc_value_flow: reward length");
    Eigen::VectorXd Vpi = exact_value(P, R, cfg.gamma);
    return linear_flow(V0, eye(P.rows()), Vpi, cfg);
}

flow_trajectory nstep_value_flow(const Eigen::VectorXd& V0, const Eigen::MatrixXd& P, const Eigen::VectorXd& R, int n,
                                 const flow_config& cfg) {
    if (n < 1) throw invalid_argument("n-step flow needs n >= 1");
    require_square(P, V0.size(), "nstep_value_flow");
    if (R.size() != V0.size()) throw dimension_mismatch("nstep_value_flow: reward length");
    const Eigen::MatrixXd gP = cfg.gamma * P;
    Eigen::MatrixXd Pk = eye(P.rows());
    Eigen::VectorXd b = Eigen::VectorXd::Zero(P.rows());
    for (int k = 0; k < n; ++k) {
        b += Pk * R;
        Pk = Pk * gP;
    }
    return linear_flow(V0, eye(P.rows()) - Pk, b, cfg);
}

Eigen::MatrixXd td_lambda_operator(const Eigen::MatrixXd& P, double gamma, double lambda, int* order) {
    if (!(lambda >= 0.0 && lambda < 1.0)) throw invalid_argument("lambda must lie in [0,1)");
    const Eigen::MatrixXd gP = gamma * P;
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(P.rows(), P.cols());
    Eigen::MatrixXd Pk = gP;
    double coef = 1.0 - lambda;
    int k = 1;
    for (;; ++k) {
        Eigen::MatrixXd term = coef * Pk;
        S += term;
        if (term.norm() < 1e-14 || k >= 100000) break;
        coef *= lambda;
        Pk = Pk * gP;
        if (coef == 0.0) break;
    }
    if (order) *order = k;
    return S;
}

flow_trajectory td_lambda_value_flow(const Eigen::VectorXd& V0, const Eigen::MatrixXd& P, const Eigen::VectorXd& R,
                                     double lambda, const flow_config& cfg) {
    require_square(P, V0.size(), "td_lambda_value_flow");
    if (R.size() != V0.size()) throw dimension_mismatch("td_lambda_value_flow: reward length");
    const Eigen::Index n = P.rows();
    if (cfg.method == integrator::rk4) {
        // dV = (I - lambda gamma P)^{-1} (R + gamma P V - V)
        if (!(lambda >= 0.0 && lambda < 1.0)) throw invalid_argument("lambda must lie in [0,1)");
        Eigen::FullPivLU<Eigen::MatrixXd> lu(eye(n) - lambda * cfg.gamma * P);
        Eigen::MatrixXd A = lu.solve(eye(n) - cfg.gamma * P);
        Eigen::VectorXd b = lu.solve(R);
        return linear_flow(V0, A, b, cfg);
    }
    int order = 0;
    Eigen::MatrixXd A = eye(n) - td_lambda_operator(P, cfg.gamma, lambda, &order);
    Eigen::VectorXd Vpi = exact_value(P, R, cfg.gamma);
    auto tr = linear_flow(V0, A, A * Vpi, cfg);
    tr.info["td_lambda_truncation_order"] = order;
    return tr;
}

Eigen::MatrixXd init_heads(int K, int M, bool scaled, rng_t& rng) {
    if (K < 1 || M < 1) throw invalid_argument("init_heads: K and M must be positive");
    return randn_matrix(K, M, rng, scaled ? 1.0 / std::sqrt(static_cast<double>(M)) : 1.0);
}

namespace {

// Semi-gradient feature/head dynamics for per-head targets T (n x M):
//   dPhi = alpha (T + gamma P Phi W - Phi W) W^T,  dW = beta Phi^T (same).
flow_trajectory feature_flow(const Eigen::MatrixXd& phi0, const Eigen::MatrixXd& w0, const Eigen::MatrixXd& T,
                             const Eigen::MatrixXd& P, const flow_config& cfg) {
    cfg.validate();
    const Eigen::Index n = phi0.rows();
    require_square(P, n, "feature_flow");
    if (w0.rows() != phi0.cols()) throw dimension_mismatch("head weights must have K rows");
    if (w0.cols() < 1) throw invalid_argument("at least one head required");
    if (T.rows() != n || T.cols() != w0.cols()) throw dimension_mismatch("targets must be n x M");
    const Eigen::MatrixXd gP = cfg.gamma * P;
    const double a = cfg.alpha, b = cfg.beta;
    auto f = [&](const Eigen::MatrixXd& Phi, const Eigen::MatrixXd& W, Eigen::MatrixXd& dPhi, Eigen::MatrixXd& dW) {
        Eigen::MatrixXd G = gP * Phi - Phi;  // n x K
        dPhi = a * (T * W.transpose() + G * (W * W.transpose()));
        if (b != 0.0)
            dW = b * (Phi.transpose() * T + (Phi.transpose() * G) * W);
        else
            dW = Eigen::MatrixXd::Zero(W.rows(), W.cols());
    };
    auto tr = rk4_pair(phi0, w0, f, cfg, true);
    if (b == 0.0)
        for (const auto& W : tr.weights)
            if (W != w0) throw non_convergence("head weights drifted with beta = 0");
    return tr;
}

}  // namespace

flow_trajectory coupled_feature_flow(const Eigen::MatrixXd& phi0, const Eigen::MatrixXd& w0, const Eigen::MatrixXd& P,
                                     const Eigen::VectorXd& R, const flow_config& cfg) {
    if (R.size() != phi0.rows()) throw dimension_mismatch("coupled_feature_flow: reward length");
    return feature_flow(phi0, w0, R.replicate(1, w0.cols()), P, cfg);
}

flow_trajectory random_cumulant_flow(const Eigen::MatrixXd& phi0, const Eigen::MatrixXd& w0,
                                     const Eigen::MatrixXd& cumulants, const Eigen::MatrixXd& P, const flow_config& cfg) {
    return feature_flow(phi0, w0, cumulants, P, cfg);
}

Eigen::MatrixXd random_cumulant_limit(const Eigen::MatrixXd& w, const Eigen::MatrixXd& cumulants,
                                      const Eigen::MatrixXd& P, double gamma) {
    if (cumulants.cols() != w.cols()) throw dimension_mismatch("one cumulant per head expected");
    Eigen::MatrixXd WWt = w * w.transpose();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(WWt);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0) throw singular_matrix("W W^T is singular");
    Eigen::MatrixXd CWt = resolvent(P, gamma) * (cumulants * w.transpose());
    return ldlt.solve(CWt.transpose()).transpose();
}

Eigen::MatrixXd limiting_ensemble_flow(const Eigen::MatrixXd& phi0, const Eigen::MatrixXd& P, const Eigen::VectorXd& R,
                                       double gamma, double t, const std::optional<Eigen::VectorXd>& noise) {
    require_square(P, phi0.rows(), "limiting_ensemble_flow");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw invalid_argument("gamma must lie in [0,1)");
    decay_propagator prop(eye(P.rows()) - gamma * P);
    if (!noise) return prop.apply(t, phi0);
    if (noise->size() != phi0.cols()) throw dimension_mismatch("noise must have one entry per feature");
    if (R.size() != phi0.rows()) throw dimension_mismatch("reward length");
    Eigen::MatrixXd fixed = exact_value(P, R, gamma) * noise->transpose();
    return prop.apply(t, phi0 - fixed) + fixed;
}

Eigen::MatrixXd limiting_cumulant_covariance(const Eigen::MatrixXd& P, double gamma, const Eigen::MatrixXd& Sigma) {
    require_square(Sigma, P.rows(), "limiting_cumulant_covariance");
    if ((Sigma - Sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, Sigma.cwiseAbs().maxCoeff()))
        throw invalid_argument("Sigma must be symmetric");
    Eigen::MatrixXd Psi = resolvent(P, gamma);
    Eigen::MatrixXd C = Psi * Sigma * Psi.transpose();
    return 0.5 * (C + C.transpose());
}

Eigen::MatrixXd multi_policy_limit_flow(const Eigen::MatrixXd& phi0, const tabular_mdp& mdp,
                                        const std::vector<Eigen::MatrixXd>& policies, double gamma, double t) {
    if (policies.empty()) throw invalid_argument("empty policy list");
    Eigen::MatrixXd mix = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_actions);
    for (const auto& pi : policies) mix += pi;
    mix /= static_cast<double>(policies.size());
    Eigen::MatrixXd P = transition_matrix(mdp, mix);
    return limiting_ensemble_flow(phi0, P, Eigen::VectorXd::Zero(mdp.n_states), gamma, t);
}

Eigen::MatrixXd multi_discount_limit_flow(const Eigen::MatrixXd& phi0, const Eigen::MatrixXd& P,
                                          const std::vector<double>& gammas, double t) {
    if (gammas.empty()) throw invalid_argument("empty discount list");
    double mean = 0.0;
    for (double g : gammas) mean += g;
    mean /= static_cast<double>(gammas.size());
    return limiting_ensemble_flow(phi0, P, Eigen::VectorXd::Zero(P.rows()), mean, t);
}

std::vector<double> grassmann_convergence_metric(const flow_trajectory& traj, const Eigen::MatrixXd& target,
                                                 const std::optional<Eigen::VectorXd>& reference) {
    std::vector<double> out;
    out.reserve(traj.states.size());
    for (const auto& S : traj.states) {
        if (S.rows() != target.rows() || S.cols() != target.cols())
            throw dimension_mismatch("snapshot span and target differ in shape");
        Eigen::MatrixXd Y = S;
        if (reference) {
            if (reference->size() != S.rows()) throw dimension_mismatch("reference length");
            Y.colwise() -= *reference;
        }
        try {
            out.push_back(grassmann_distance(orthonormal_basis(Y), target));
        } catch (const rank_deficient&) {
            out.push_back(std::numeric_limits<double>::quiet_NaN());
        }
    }
    return out;
}

second_order_result second_order_check(const Eigen::VectorXd& V0, const Eigen::MatrixXd& P, const Eigen::VectorXd& R,
                                       double gamma, double alpha, int n_steps) {
    require_square(P, V0.size(), "second_order_check");
    if (R.size() != V0.size()) throw dimension_mismatch("second_order_check: reward length");
    if (!(alpha > 0.0) || n_steps < 1) throw invalid_argument("alpha must be positive and n_steps >= 1");
    const Eigen::Index n = P.rows();
    const Eigen::MatrixXd A = eye(n) - gamma * P;
    second_order_result res;
    Eigen::VectorXd V = V0;
    for (int k = 0; k < n_steps; ++k) {
        V += alpha * (R - A * V);
        double sup = V.cwiseAbs().maxCoeff();
        if (!std::isfinite(sup) || sup > k_divergence_norm)
            throw divergence_detected("discrete iterates diverged", (k + 1) * alpha, sup);
    }
    res.discrete = V;
    const double t = alpha * n_steps;
    const Eigen::VectorXd Vpi = solve_fixed_point(A, R);
    res.first_order = decay_propagator(A).apply(t, V0 - Vpi) + Vpi;
    // modified equation of the Euler scheme: dV = f + (alpha/2)(I - gamma P) f
    const Eigen::MatrixXd A2 = A + 0.5 * alpha * A * A;
    res.corrected = decay_propagator(A2).apply(t, V0 - Vpi) + Vpi;
    return res;
}

double td_error_norm(const Eigen::VectorXd& V, const Eigen::MatrixXd& P, const Eigen::VectorXd& R, double gamma) {
    require_square(P, V.size(), "td_error_norm");
    if (R.size() != V.size()) throw dimension_mismatch("td_error_norm: reward length");
    return (V - (R + gamma * P * V)).norm();
}

double eigen_bound(const Eigen::VectorXd& V, const spectrum& s, const Eigen::VectorXd& Vpi, double gamma) {
    Eigen::VectorXd lam = s.real_values();
    Eigen::VectorXd d = eigenbasis_coefficients(Vpi, s) - eigenbasis_coefficients(V, s);
    Eigen::VectorXd w = (1.0 - gamma * lam.array()).matrix();
    return d.cwiseProduct(w).norm();
}

}  // namespace lab
