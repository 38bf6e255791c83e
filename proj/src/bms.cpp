#include "lab/bms.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lab/errors.hpp"

namespace lab {

namespace {

constexpr std::uint64_t k_stream_L = 0x4c;
constexpr std::uint64_t k_stream_LS = 0x4c53;
constexpr std::uint64_t k_stream_sto = 0x53544f;
constexpr std::uint64_t k_stream_alg1 = 0x414c4731;
constexpr std::uint64_t k_stream_weights = 0x5747;
constexpr std::uint64_t k_stream_task = 0x5441534b;

estimate summarize(std::vector<double> per_seed) {
    estimate e;
    const double n = static_cast<double>(per_seed.size());
    e.value = std::accumulate(per_seed.begin(), per_seed.end(), 0.0) / n;
    if (per_seed.size() > 1) {
        double ss = 0.0;
        for (double v : per_seed) ss += (v - e.value) * (v - e.value);
        e.std_error = std::sqrt(ss / (n - 1.0) / n);
    }
    e.per_seed = std::move(per_seed);
    return e;
}

double log_mean_exp(const std::vector<double>& v) {
    double m = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s / static_cast<double>(v.size()));
}

double half_log_2pi() { return 0.5 * std::log(2.0 * M_PI); }

}  // namespace

double gaussian_logpdf(double y, double mean, double variance) {
    const double r = y - mean;
    return -half_log_2pi() - 0.5 * std::log(variance) - 0.5 * r * r / variance;
}

Eigen::MatrixXd feature_map::apply(const Eigen::MatrixXd& X) const {
    switch (kind) {
        case feature_kind::coordinates: {
            Eigen::MatrixXd F(X.rows(), coords.size());
            for (std::size_t k = 0; k < coords.size(); ++k) {
                if (coords[k] < 0 || coords[k] >= X.cols()) throw dimension_mismatch("feature coordinate out of range");
                F.col(k) = X.col(coords[k]);
            }
            return F;
        }
        case feature_kind::rff: {
            if (omega.cols() != X.cols()) throw dimension_mismatch("rff frequencies do not match input width");
            Eigen::MatrixXd Z = (X * omega.transpose()).rowwise() + phase.transpose();
            return std::sqrt(2.0 / static_cast<double>(omega.rows())) * Z.array().cos().matrix();
        }
        case feature_kind::explicit_matrix:
            if (matrix.rows() != X.rows()) throw dimension_mismatch("explicit features need one row per input");
            return matrix;
    }
    throw invalid_argument("unknown feature kind");
}

int feature_map::dim() const {
    switch (kind) {
        case feature_kind::coordinates: return static_cast<int>(coords.size());
        case feature_kind::rff: return static_cast<int>(omega.rows());
        case feature_kind::explicit_matrix: return static_cast<int>(matrix.cols());
    }
    return 0;
}

feature_map feature_map::first_coordinates(int d) {
    feature_map f;
    f.kind = feature_kind::coordinates;
    f.coords.resize(d);
    std::iota(f.coords.begin(), f.coords.end(), 0);
    return f;
}

feature_map feature_map::random_fourier(int input_dim, int D, double frequency, std::uint64_t seed) {
    if (D < 1 || input_dim < 1) throw invalid_argument("rff needs positive dimensions");
    auto rng = make_rng(seed, 0x524646);
    feature_map f;
    f.kind = feature_kind::rff;
    f.omega = frequency * randn_matrix(D, input_dim, rng);
    f.phase.resize(D);
    for (int i = 0; i < D; ++i) f.phase(i) = 2.0 * M_PI * randu(rng);
    return f;
}

feature_map feature_map::explicit_features(const Eigen::MatrixXd& features) {
    feature_map f;
    f.kind = feature_kind::explicit_matrix;
    f.matrix = features;
    return f;
}

void blr_model::validate() const {
    if (!(prior_variance > 0.0) || !(noise_variance > 0.0)) throw invalid_argument("variances must be positive");
}

ordered_dataset ordered_dataset::in_order(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    ordered_dataset d;
    d.inputs = X;
    d.targets = y;
    d.order.resize(y.size());
    std::iota(d.order.begin(), d.order.end(), 0);
    d.validate();
    return d;
}

void ordered_dataset::validate() const {
    if (inputs.rows() != targets.size()) throw dimension_mismatch("inputs and targets differ in length");
    if (static_cast<Eigen::Index>(order.size()) != targets.size()) throw dimension_mismatch("order has wrong length");
    std::vector<char> seen(order.size(), 0);
    for (int i : order) {
        if (i < 0 || i >= static_cast<int>(order.size()) || seen[i]) throw invalid_argument("order is not a permutation");
        seen[i] = 1;
    }
    if (!inputs.allFinite() || !targets.allFinite()) throw invalid_argument("dataset has non-finite entries");
}

ordered_dataset ordered_dataset::reordered(const std::vector<int>& new_order) const {
    ordered_dataset d = *this;
    d.order = new_order;
    d.validate();
    return d;
}

void ordered_design(const blr_model& model, const ordered_dataset& data, Eigen::MatrixXd& Phi, Eigen::VectorXd& y) {
    model.validate();
    data.validate();
    Eigen::MatrixXd F = model.features.apply(data.inputs);
    const int n = data.size();
    Phi.resize(n, F.cols());
    y.resize(n);
    for (int i = 0; i < n; ++i) {
        Phi.row(i) = F.row(data.order[i]);
        y(i) = data.targets(data.order[i]);
    }
}

gaussian_posterior blr_posterior(const blr_model& model, const ordered_dataset& data, int prefix) {
    Eigen::MatrixXd Phi;
    Eigen::VectorXd y;
    ordered_design(model, data, Phi, y);
    if (prefix < 0 || prefix > data.size()) throw invalid_argument("prefix out of range");
    const Eigen::Index d = Phi.cols();
    auto Pp = Phi.topRows(prefix);
    Eigen::MatrixXd prec = Eigen::MatrixXd::Identity(d, d) / model.prior_variance +
                           Pp.transpose() * Pp / model.noise_variance;
    Eigen::LLT<Eigen::MatrixXd> llt(prec);
    if (llt.info() != Eigen::Success) throw singular_matrix("posterior precision is not positive definite");
    gaussian_posterior post;
    post.covariance = llt.solve(Eigen::MatrixXd::Identity(d, d));
    post.covariance = 0.5 * (post.covariance + post.covariance.transpose());
    post.mean = post.covariance * (Pp.transpose() * y.head(prefix)) / model.noise_variance;
    return post;
}

void prequential_moments(const blr_model& model, const ordered_dataset& data, Eigen::VectorXd& mean,
                         Eigen::VectorXd& variance) {
    Eigen::MatrixXd Phi;
    Eigen::VectorXd y;
    ordered_design(model, data, Phi, y);
    const int n = data.size();
    const Eigen::Index d = Phi.cols();
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd S = model.prior_variance * Eigen::MatrixXd::Identity(d, d);
    mean.resize(n);
    variance.resize(n);
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd phi = Phi.row(i).transpose();
        Eigen::VectorXd Sphi = S * phi;
        const double m = phi.dot(mu);
        const double v = std::max(phi.dot(Sphi), 0.0);
        mean(i) = m;
        variance(i) = v;
        // rank-one conditioning on (phi, y_i)
        const double s = v + model.noise_variance;
        mu += Sphi * ((y(i) - m) / s);
        S -= Sphi * Sphi.transpose() / s;
        S = 0.5 * (S + S.transpose());
    }
}

double exact_log_ml(const blr_model& model, const ordered_dataset& data) {
    if (data.size() == 0) return 0.0;
    Eigen::VectorXd m, v;
    prequential_moments(model, data, m, v);
    Eigen::MatrixXd Phi;
    Eigen::VectorXd y;
    ordered_design(model, data, Phi, y);
    double acc = 0.0;
    for (int i = 0; i < data.size(); ++i) acc += gaussian_logpdf(y(i), m(i), v(i) + model.noise_variance);
    return acc;
}

double gaussian_kl(const gaussian_posterior& p, const gaussian_posterior& q) {
    const Eigen::Index d = p.mean.size();
    Eigen::LLT<Eigen::MatrixXd> lq(q.covariance), lp(p.covariance);
    if (lq.info() != Eigen::Success || lp.info() != Eigen::Success) throw singular_matrix("covariance not positive definite");
    const Eigen::VectorXd dm = q.mean - p.mean;
    const double tr = lq.solve(p.covariance).trace();
    const double quad = dm.dot(lq.solve(dm));
    const double logdet_q = 2.0 * lq.matrixLLT().diagonal().array().log().sum();
    const double logdet_p = 2.0 * lp.matrixLLT().diagonal().array().log().sum();
    return 0.5 * (tr + quad - static_cast<double>(d) + logdet_q - logdet_p);
}

double kl_gap(const blr_model& model, const ordered_dataset& data) {
    double acc = 0.0;
    gaussian_posterior prev = blr_posterior(model, data, 0);
    for (int i = 1; i <= data.size(); ++i) {
        gaussian_posterior next = blr_posterior(model, data, i);
        acc += gaussian_kl(prev, next);
        prev = std::move(next);
    }
    return acc;
}

// Only the scalar prediction phi_i^T theta enters each term, so posterior
// draws are taken directly from its Gaussian marginal.
estimate estimate_L(const blr_model& model, const ordered_dataset& data, int n_seeds, std::uint64_t seed) {
    return estimate_Lk(model, data, 1, n_seeds, seed);
}

estimate estimate_Lk(const blr_model& model, const ordered_dataset& data, int k, int n_seeds, std::uint64_t seed) {
    if (k < 1) throw invalid_argument("estimate_Lk: k must be at least 1");
    if (n_seeds < 1) throw invalid_argument("n_seeds must be at least 1");
    Eigen::VectorXd m, v;
    prequential_moments(model, data, m, v);
    Eigen::MatrixXd Phi;
    Eigen::VectorXd y;
    ordered_design(model, data, Phi, y);
    std::vector<double> per_seed;
    std::vector<double> terms(k);
    for (int s = 0; s < n_seeds; ++s) {
        auto rng = make_rng(seed, k_stream_L, s);
        double acc = 0.0;
        for (int i = 0; i < data.size(); ++i) {
            const double sd = std::sqrt(v(i));
            for (int j = 0; j < k; ++j) terms[j] = gaussian_logpdf(y(i), m(i) + sd * randn(rng), model.noise_variance);
            acc += k == 1 ? terms[0] : log_mean_exp(terms);
        }
        per_seed.push_back(acc);
    }
    return summarize(std::move(per_seed));
}

estimate estimate_LS(const blr_model& model, const ordered_dataset& data, int k, int n_seeds, std::uint64_t seed) {
    if (k < 2) throw degenerate_sample("estimate_LS needs k >= 2 samples");
    if (n_seeds < 1) throw invalid_argument("n_seeds must be at least 1");
    Eigen::VectorXd m, v;
    prequential_moments(model, data, m, v);
    Eigen::MatrixXd Phi;
    Eigen::VectorXd y;
    ordered_design(model, data, Phi, y);
    std::vector<double> per_seed;
    std::vector<double> f(k);
    for (int s = 0; s < n_seeds; ++s) {
        auto rng = make_rng(seed, k_stream_LS, s);
        double acc = 0.0;
        for (int i = 0; i < data.size(); ++i) {
            const double sd = std::sqrt(v(i));
            double mu = 0.0;
            for (int j = 0; j < k; ++j) {
                f[j] = m(i) + sd * randn(rng);
                mu += f[j];
            }
            mu /= k;
            double var = 0.0;
            for (int j = 0; j < k; ++j) var += (f[j] - mu) * (f[j] - mu);
            var /= (k - 1);
            const double total = var + model.noise_variance;
            if (!(total > 0.0)) throw degenerate_sample("predictive variance is not positive");
            acc += gaussian_logpdf(y(i), mu, total);
        }
        per_seed.push_back(acc);
    }
    return summarize(std::move(per_seed));
}

Eigen::VectorXd regularized_solution(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& theta0, double lambda) {
    const Eigen::Index d = Phi.cols();
    Eigen::MatrixXd A = Phi.transpose() * Phi + lambda * Eigen::MatrixXd::Identity(d, d);
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) throw singular_matrix("regularized normal equations are singular");
    return llt.solve(Phi.transpose() * y + lambda * theta0);
}

Eigen::VectorXd regularized_descent(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& y,
                                    const Eigen::VectorXd& theta0, double lambda, const Eigen::VectorXd& start,
                                    double lr, int steps) {
    if (!(lr > 0.0)) throw invalid_argument("learning rate must be positive");
    auto loss = [&](const Eigen::VectorXd& th) {
        return (y - Phi * th).squaredNorm() + lambda * (th - theta0).squaredNorm();
    };
    Eigen::VectorXd th = start;
    double prev = loss(th);
    int increases = 0;
    for (int s = 0; s < steps; ++s) {
        Eigen::VectorXd g = 2.0 * (Phi.transpose() * (Phi * th - y) + lambda * (th - theta0));
        th -= lr * g;
        double cur = loss(th);
        if (!std::isfinite(cur)) throw divergence_detected("gradient descent produced a non-finite loss", s + 1, cur);
        increases = cur > prev ? increases + 1 : 0;
        if (increases >= 100) throw divergence_detected("loss increased for 100 consecutive steps", s + 1, cur);
        prev = cur;
    }
    return th;
}

Eigen::VectorXd sample_then_optimize(const blr_model& model, const ordered_dataset& data, int prefix,
                                     std::uint64_t seed, double lr, int steps) {
    Eigen::MatrixXd Phi;
    Eigen::VectorXd y;
    ordered_design(model, data, Phi, y);
    if (prefix < 0 || prefix > data.size()) throw invalid_argument("prefix out of range");
    auto rng = make_rng(seed, k_stream_sto);
    const Eigen::Index d = Phi.cols();
    Eigen::VectorXd theta0 = randn_vector(d, rng, std::sqrt(model.prior_variance));
    Eigen::VectorXd yt = y.head(prefix) + randn_vector(prefix, rng, std::sqrt(model.noise_variance));
    const double lambda = model.noise_variance / model.prior_variance;
    return regularized_descent(Phi.topRows(prefix), yt, theta0, lambda, theta0, lr, steps);
}

double algorithm1_sumloss(const blr_model& model, const ordered_dataset& data, std::uint64_t seed, double lr,
                          int steps_per_point) {
    const int n = data.size();
    if (n == 0) return 0.0;
    Eigen::MatrixXd Phi;
    Eigen::VectorXd y;
    ordered_design(model, data, Phi, y);
    auto rng = make_rng(seed, k_stream_alg1);
    const Eigen::Index d = Phi.cols();
    Eigen::VectorXd theta0 = randn_vector(d, rng, std::sqrt(model.prior_variance));
    Eigen::VectorXd yt = y + randn_vector(n, rng, std::sqrt(model.noise_variance));
    const double lambda = model.noise_variance / model.prior_variance;
    Eigen::VectorXd th = theta0;
    double sum_loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double r = Phi.row(i).dot(th) - y(i);
        sum_loss += r * r / (2.0 * model.noise_variance);
        th = regularized_descent(Phi.topRows(i + 1), yt.head(i + 1), theta0, lambda, th, lr, steps_per_point);
    }
    return -sum_loss - n * (half_log_2pi() + 0.5 * std::log(model.noise_variance));
}

double sotl(const std::vector<double>& losses) { return std::accumulate(losses.begin(), losses.end(), 0.0); }

double sotl_decomposition(const std::vector<double>& initial_losses, const Eigen::MatrixXd& interference) {
    return sotl(initial_losses) + interference.sum();
}

sgd_epoch_trace sgd_first_epoch(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& y, const Eigen::VectorXd& theta0,
                                double lr) {
    if (Phi.rows() != y.size() || Phi.cols() != theta0.size()) throw dimension_mismatch("sgd_first_epoch: shapes disagree");
    const Eigen::Index n = Phi.rows();
    auto point_loss = [&](Eigen::Index i, const Eigen::VectorXd& th) {
        const double r = Phi.row(i).dot(th) - y(i);
        return 0.5 * r * r;
    };
    sgd_epoch_trace tr;
    tr.interference = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd th = theta0;
    for (Eigen::Index i = 0; i < n; ++i) tr.initial_losses.push_back(point_loss(i, th));
    for (Eigen::Index j = 0; j < n; ++j) {
        tr.losses.push_back(point_loss(j, th));
        Eigen::VectorXd next = th - lr * (Phi.row(j).dot(th) - y(j)) * Phi.row(j).transpose();
        for (Eigen::Index i = j + 1; i < n; ++i) tr.interference(j, i) = point_loss(i, next) - point_loss(i, th);
        th = next;
    }
    tr.final_params = th;
    return tr;
}

task_kind parse_task_kind(const std::string& name) {
    if (name == "feature_dimension" || name == "feature-dimension") return task_kind::feature_dimension;
    if (name == "prior_variance" || name == "prior-variance") return task_kind::prior_variance;
    if (name == "rff_frequency" || name == "rff-frequency") return task_kind::rff_frequency;
    throw invalid_argument("unknown task kind '" + name + "'");
}

selection_task model_selection_task(task_kind kind, std::uint64_t seed, const task_params& p) {
    auto rng = make_rng(seed, k_stream_task, static_cast<std::uint64_t>(kind));
    selection_task task;
    switch (kind) {
        case task_kind::feature_dimension: {
            if (p.informative > p.total_features || p.min_dim < 1 || p.min_dim > p.total_features)
                throw invalid_argument("feature_dimension task: inconsistent dimensions");
            Eigen::MatrixXd X(p.n, p.total_features);
            Eigen::VectorXd y(p.n);
            for (int i = 0; i < p.n; ++i) {
                y(i) = randu(rng);
                for (int j = 0; j < p.total_features; ++j)
                    X(i, j) = j < p.informative ? y(i) + p.signal_noise * randn(rng) : p.noise_scale * randn(rng);
            }
            task.data = ordered_dataset::in_order(X, y);
            for (int d = p.min_dim; d <= p.total_features; ++d) {
                blr_model m;
                m.name = "M" + std::to_string(d);
                m.features = feature_map::first_coordinates(d);
                m.prior_variance = p.prior_variance;
                m.noise_variance = p.noise_variance;
                task.models.push_back(m);
            }
            break;
        }
        case task_kind::prior_variance: {
            const int dim = 5;
            Eigen::MatrixXd X = randn_matrix(p.n, dim, rng);
            Eigen::VectorXd theta = randn_vector(dim, rng);
            Eigen::VectorXd y = X * theta + randn_vector(p.n, rng, 0.5);
            task.data = ordered_dataset::in_order(X, y);
            for (int k = -2; k <= 2; ++k) {
                blr_model m;
                m.prior_variance = std::pow(10.0, k);
                m.name = "prior_var_1e" + std::to_string(k);
                m.features = feature_map::first_coordinates(dim);
                m.noise_variance = 0.25;
                task.models.push_back(m);
            }
            break;
        }
        case task_kind::rff_frequency: {
            Eigen::MatrixXd X(p.n, 2);
            Eigen::VectorXd y(p.n);
            for (int i = 0; i < p.n; ++i) {
                X(i, 0) = 2.0 * randu(rng) - 1.0;
                X(i, 1) = 2.0 * randu(rng) - 1.0;
                y(i) = X.row(i).norm() < 0.6 ? 1.0 : 0.0;
            }
            task.data = ordered_dataset::in_order(X, y);
            const std::uint64_t feature_seed = rng();
            for (int k = 0; k < 7; ++k) {
                const double freq = 0.1 * std::pow(10.0, k / 3.0);  // geometric 0.1 .. 10
                blr_model m;
                m.name = "rff_freq_" + std::to_string(k);
                m.features = feature_map::random_fourier(2, 50, freq, feature_seed);
                m.prior_variance = 1.0;
                m.noise_variance = 0.1;
                task.models.push_back(m);
            }
            break;
        }
    }
    return task;
}

weight_ranking ensemble_weight_ranking(const std::vector<blr_model>& models, const ordered_dataset& data,
                                       std::uint64_t seed) {
    if (models.size() < 2) throw invalid_argument("ensemble_weight_ranking needs at least two models");
    const int n = data.size();
    const Eigen::Index J = static_cast<Eigen::Index>(models.size());
    Eigen::MatrixXd F(n, J);
    Eigen::VectorXd y;
    weight_ranking out;
    out.L_values.resize(J);
    for (Eigen::Index j = 0; j < J; ++j) {
        Eigen::VectorXd m, v;
        prequential_moments(models[j], data, m, v);
        Eigen::MatrixXd Phi;
        ordered_design(models[j], data, Phi, y);
        auto rng = make_rng(seed, k_stream_weights, static_cast<std::uint64_t>(j));
        double L = 0.0;
        for (int i = 0; i < n; ++i) {
            F(i, j) = m(i) + std::sqrt(v(i)) * randn(rng);
            L += gaussian_logpdf(y(i), F(i, j), models[j].noise_variance);
        }
        out.L_values(j) = L;
    }
    Eigen::MatrixXd G = F.transpose() * F;
    G.diagonal().array() += 1e-10;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
    if (ldlt.info() != Eigen::Success) throw singular_matrix("prediction Gram matrix is singular");
    out.weights = ldlt.solve(F.transpose() * y);
    Eigen::Index iw = 0, il = 0;
    out.weights.maxCoeff(&iw);
    out.L_values.maxCoeff(&il);
    out.argmax_weight = static_cast<int>(iw);
    out.argmax_L = static_cast<int>(il);
    return out;
}

}  // namespace lab
