#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lab/mdp.hpp"
#include "lab/rng.hpp"
#include "lab/spectral.hpp"

namespace lab {

enum class integrator { closed_form, rk4 };

struct flow_config {
    double gamma = 0.9;
    double alpha = 1.0;  // feature learning rate
    double beta = 0.0;   // head-weight learning rate
    double t_end = 1.0;
    double dt = 1e-2;    // RK4 step
    int n_snapshots = 101;
    integrator method = integrator::closed_form;

    void validate() const;
    // Evenly spaced snapshot times in [0, t_end]; a single point when t_end == 0.
    std::vector<double> grid() const;
};

struct flow_trajectory {
    std::vector<double> times;
    std::vector<Eigen::MatrixXd> states;   // one snapshot per time
    std::vector<Eigen::MatrixXd> weights;  // head weights, feature flows only
    std::vector<std::pair<std::string, std::vector<double>>> metrics;
    std::map<std::string, double> info;    // derived settings worth recording

    void add_metric(const std::string& name, std::vector<double> values);
    const std::vector<double>& metric(const std::string& name) const;
    Eigen::MatrixXd final_state() const { return states.back(); }
};

/*
 * exp(-t A) for a fixed generator A. Uses the eigendecomposition when A has a
 * real, well-conditioned eigenbasis and scaling-and-squaring Pade otherwise.
 */
class decay_propagator {
public:
    explicit decay_propagator(const Eigen::MatrixXd& A, bool allow_eigen = true);
    Eigen::MatrixXd apply(double t, const Eigen::MatrixXd& X) const;
    Eigen::MatrixXd matrix(double t) const;
    bool uses_eigen() const { return eigen_; }

private:
    Eigen::MatrixXd A_;
    bool eigen_ = false;
    Eigen::VectorXd mu_;
    Eigen::MatrixXd U_, Uinv_;
};

// Pade matrix exponential.
Eigen::MatrixXd expm(const Eigen::MatrixXd& A);

// Snapshots of dx/dt = -A x + b from x0 (columns evolve independently).
flow_trajectory linear_flow(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& A, const Eigen::MatrixXd& b,
                            const flow_config& cfg);

flow_trajectory td_value_flow(const Eigen::VectorXd& V0, const Eigen::MatrixXd& P, const Eigen::VectorXd& R,
                              const flow_config& cfg);
flow_trajectory mc_value_flow(const Eigen::VectorXd& V0, const Eigen::MatrixXd& P, const Eigen::VectorXd& R,
                              const flow_config& cfg);
flow_trajectory nstep_value_flow(const Eigen::VectorXd& V0, const Eigen::MatrixXd& P, const Eigen::VectorXd& R, int n,
                                 const flow_config& cfg);
flow_trajectory td_lambda_value_flow(const Eigen::VectorXd& V0, const Eigen::MatrixXd& P, const Eigen::VectorXd& R,
                                     double lambda, const flow_config& cfg);

// (1-lambda) sum_k lambda^{k-1} (gamma P)^k truncated once a term drops below
// 1e-14 in Frobenius norm. `order` receives the last k used.
Eigen::MatrixXd td_lambda_operator(const Eigen::MatrixXd& P, double gamma, double lambda, int* order = nullptr);

// Head weights with i.i.d. N(0, sigma^2) entries; sigma^2 = 1/M when
// scaled is true, 1 otherwise.
Eigen::MatrixXd init_heads(int K, int M, bool scaled, rng_t& rng);

flow_trajectory coupled_feature_flow(const Eigen::MatrixXd& phi0, const Eigen::MatrixXd& w0, const Eigen::MatrixXd& P,
                                     const Eigen::VectorXd& R, const flow_config& cfg);
flow_trajectory random_cumulant_flow(const Eigen::MatrixXd& phi0, const Eigen::MatrixXd& w0,
                                     const Eigen::MatrixXd& cumulants, const Eigen::MatrixXd& P, const flow_config& cfg);

// Stationary features of the random-cumulant flow for fixed heads:
// Psi C W^T (W W^T)^{-1}.
Eigen::MatrixXd random_cumulant_limit(const Eigen::MatrixXd& w, const Eigen::MatrixXd& cumulants,
                                      const Eigen::MatrixXd& P, double gamma);

Eigen::MatrixXd limiting_ensemble_flow(const Eigen::MatrixXd& phi0, const Eigen::MatrixXd& P, const Eigen::VectorXd& R,
                                       double gamma, double t,
                                       const std::optional<Eigen::VectorXd>& noise = std::nullopt);

Eigen::MatrixXd limiting_cumulant_covariance(const Eigen::MatrixXd& P, double gamma, const Eigen::MatrixXd& Sigma);

Eigen::MatrixXd multi_policy_limit_flow(const Eigen::MatrixXd& phi0, const tabular_mdp& mdp,
                                        const std::vector<Eigen::MatrixXd>& policies, double gamma, double t);
Eigen::MatrixXd multi_discount_limit_flow(const Eigen::MatrixXd& phi0, const Eigen::MatrixXd& P,
                                          const std::vector<double>& gammas, double t);

// Grassmann distance between span(snapshot - reference 1^T) and `target`
// (orthonormal). Rank-deficient snapshots give NaN.
std::vector<double> grassmann_convergence_metric(const flow_trajectory& traj, const Eigen::MatrixXd& target,
                                                 const std::optional<Eigen::VectorXd>& reference = std::nullopt);

struct second_order_result {
    Eigen::VectorXd discrete;
    Eigen::VectorXd first_order;
    Eigen::VectorXd corrected;
};

// Euler iterates of f(V) = R - (I - gamma P) V against the continuous flow and
// its modified-equation correction, all at t = alpha * n_steps.
second_order_result second_order_check(const Eigen::VectorXd& V0, const Eigen::MatrixXd& P, const Eigen::VectorXd& R,
                                       double gamma, double alpha, int n_steps);

double td_error_norm(const Eigen::VectorXd& V, const Eigen::MatrixXd& P, const Eigen::VectorXd& R, double gamma);
double eigen_bound(const Eigen::VectorXd& V, const spectrum& s, const Eigen::VectorXd& Vpi, double gamma);

}  // namespace lab
