#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "lab/rng.hpp"

namespace lab {

enum class feature_kind { coordinates, rff, explicit_matrix };

// Feature map phi applied row-wise to raw inputs.
struct feature_map {
    feature_kind kind = feature_kind::coordinates;
    std::vector<int> coords;  // coordinates: columns to keep
    Eigen::MatrixXd omega;    // rff: D x p frequencies
    Eigen::VectorXd phase;    // rff: D offsets in [0, 2 pi)
    Eigen::MatrixXd matrix;   // explicit: precomputed features, one row per input row

    Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const;
    int dim() const;

    static feature_map first_coordinates(int d);
    // Cosine random features sqrt(2/D) cos(frequency * omega x + b), omega ~ N(0, I).
    static feature_map random_fourier(int input_dim, int D, double frequency, std::uint64_t seed);
    static feature_map explicit_features(const Eigen::MatrixXd& features);
};

struct blr_model {
    std::string name;
    feature_map features;
    double prior_variance = 1.0;
    double noise_variance = 1.0;

    void validate() const;
};

struct ordered_dataset {
    Eigen::MatrixXd inputs;
    Eigen::VectorXd targets;
    std::vector<int> order;  // permutation of 0..n-1

    static ordered_dataset in_order(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);
    int size() const { return static_cast<int>(targets.size()); }
    void validate() const;
    ordered_dataset reordered(const std::vector<int>& new_order) const;
};

struct gaussian_posterior {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
};

struct estimate {
    double value = 0.0;
    double std_error = 0.0;
    std::vector<double> per_seed;
};

// Features and targets arranged in presentation order.
void ordered_design(const blr_model& model, const ordered_dataset& data, Eigen::MatrixXd& Phi, Eigen::VectorXd& y);

// Posterior after the first `prefix` points in order (prior when prefix = 0).
gaussian_posterior blr_posterior(const blr_model& model, const ordered_dataset& data, int prefix);

// Gaussian posterior-predictive moments of f_i = phi_i^T theta given D_{<i}.
void prequential_moments(const blr_model& model, const ordered_dataset& data, Eigen::VectorXd& mean,
                         Eigen::VectorXd& variance);

// sum_i log N(y_i; phi_i^T mu_{<i}, phi_i^T Sigma_{<i} phi_i + sigma_N^2)
double exact_log_ml(const blr_model& model, const ordered_dataset& data);

// sum_i KL(posterior_{<i} || posterior_{<=i}); equals exact_log_ml - E[L].
double kl_gap(const blr_model& model, const ordered_dataset& data);

double gaussian_kl(const gaussian_posterior& p, const gaussian_posterior& q);

estimate estimate_L(const blr_model& model, const ordered_dataset& data, int n_seeds, std::uint64_t seed);
estimate estimate_Lk(const blr_model& model, const ordered_dataset& data, int k, int n_seeds, std::uint64_t seed);
estimate estimate_LS(const blr_model& model, const ordered_dataset& data, int k, int n_seeds, std::uint64_t seed);

// Minimizer of |y - Phi theta|^2 + lambda |theta - theta0|^2.
Eigen::VectorXd regularized_solution(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& theta0, double lambda);

// Full-batch gradient descent on the objective above starting from `start`.
// Throws divergence_detected after 100 consecutive loss increases.
Eigen::VectorXd regularized_descent(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& y,
                                    const Eigen::VectorXd& theta0, double lambda, const Eigen::VectorXd& start,
                                    double lr, int steps);

// Prior draw theta0, perturbed targets, then gradient descent on the first
// `prefix` points. Approximates one posterior sample.
Eigen::VectorXd sample_then_optimize(const blr_model& model, const ordered_dataset& data, int prefix,
                                     std::uint64_t seed, double lr, int steps);

// Sequential sample-then-optimize: the loss of the current parameters on
// point i is accumulated before training on D_{<=i}. Returns
// -sumLoss - n/2 log(2 pi sigma_N^2).
double algorithm1_sumloss(const blr_model& model, const ordered_dataset& data, std::uint64_t seed, double lr,
                          int steps_per_point);

double sotl(const std::vector<double>& losses);
double sotl_decomposition(const std::vector<double>& initial_losses, const Eigen::MatrixXd& interference);

struct sgd_epoch_trace {
    std::vector<double> losses;          // loss on point i just before step i
    std::vector<double> initial_losses;  // loss on point i at theta_0
    Eigen::MatrixXd interference;        // (j, i): change in loss on i caused by step j, j < i
    Eigen::VectorXd final_params;
};

// One epoch of minibatch-1 SGD on 0.5 (phi_i^T theta - y_i)^2 in index order.
sgd_epoch_trace sgd_first_epoch(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& y, const Eigen::VectorXd& theta0,
                                double lr);

enum class task_kind { feature_dimension, prior_variance, rff_frequency };

struct task_params {
    int n = 30;
    int informative = 15;
    int total_features = 30;
    int min_dim = 5;
    double signal_noise = 1.0;  // sigma_0 of the generator
    double noise_scale = 1.0;   // sigma_1 of the generator
    double prior_variance = 0.002;
    double noise_variance = 0.5;
};

struct selection_task {
    std::vector<blr_model> models;
    ordered_dataset data;
};

task_kind parse_task_kind(const std::string& name);
selection_task model_selection_task(task_kind kind, std::uint64_t seed, const task_params& params = {});

struct weight_ranking {
    Eigen::VectorXd weights;
    Eigen::VectorXd L_values;  // single-draw L per model from the same predictions
    int argmax_weight = 0;
    int argmax_L = 0;
};

weight_ranking ensemble_weight_ranking(const std::vector<blr_model>& models, const ordered_dataset& data,
                                       std::uint64_t seed);

double gaussian_logpdf(double y, double mean, double variance);

}  // namespace lab
