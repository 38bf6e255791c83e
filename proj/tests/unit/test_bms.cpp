#include <cmath>
#include <numeric>

#include "doctest.h"
#include "lab/bms.hpp"
#include "lab/errors.hpp"
#include "lab/rng.hpp"
#include "oracles.hpp"

using namespace lab;

namespace {

blr_model linear_model(int d, double prior, double noise) {
    blr_model m;
    m.name = "lin" + std::to_string(d);
    m.features = feature_map::first_coordinates(d);
    m.prior_variance = prior;
    m.noise_variance = noise;
    return m;
}

ordered_dataset toy_data(int n, int d, rng_t& rng) {
    Eigen::MatrixXd X = randn_matrix(n, d, rng);
    Eigen::VectorXd y = X * randn_vector(d, rng) + 0.5 * randn_vector(n, rng);
    return ordered_dataset::in_order(X, y);
}

// log N(y; 0, s0^2 Phi Phi^T + sN^2 I) through a Cholesky factor.
double joint_evidence(const blr_model& m, const ordered_dataset& data) {
    Eigen::MatrixXd Phi = m.features.apply(data.inputs);
    const Eigen::Index n = Phi.rows();
    Eigen::MatrixXd C = m.prior_variance * Phi * Phi.transpose() + m.noise_variance * Eigen::MatrixXd::Identity(n, n);
    Eigen::LLT<Eigen::MatrixXd> llt(C);
    Eigen::VectorXd alpha = llt.matrixL().solve(data.targets);
    double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return -0.5 * alpha.squaredNorm() - 0.5 * logdet - 0.5 * n * std::log(2 * M_PI);
}

}  // namespace

TEST_CASE("posterior: prior at zero data, scalar closed form, ridge mean") {
    auto rng = make_rng(1);
    auto data = toy_data(10, 3, rng);
    auto m = linear_model(3, 2.0, 0.5);
    auto prior = blr_posterior(m, data, 0);
    CHECK(prior.mean.isZero());
    CHECK(oracle::sup(prior.covariance - 2.0 * Eigen::MatrixXd::Identity(3, 3)) < 1e-14);

    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(1, 1);
    Eigen::VectorXd y = Eigen::VectorXd::Constant(1, 2.0);
    auto one = blr_posterior(linear_model(1, 1.0, 1.0), ordered_dataset::in_order(X, y), 1);
    CHECK(std::abs(one.mean(0) - 1.0) < 1e-14);
    CHECK(std::abs(one.covariance(0, 0) - 0.5) < 1e-14);

    auto post = blr_posterior(m, data, 10);
    Eigen::MatrixXd A = data.inputs.transpose() * data.inputs + (0.5 / 2.0) * Eigen::MatrixXd::Identity(3, 3);
    Eigen::VectorXd ridge = A.inverse() * data.inputs.transpose() * data.targets;
    CHECK(oracle::sup(post.mean - ridge) < 1e-10);
    CHECK_THROWS_AS(blr_posterior(m, data, 11), invalid_argument);
}

TEST_CASE("exact log ML equals the joint Gaussian evidence and ignores order") {
    auto m = linear_model(4, 0.7, 0.3);
    for (int t = 0; t < 10; ++t) {
        auto rng = make_rng(t, 2);
        auto data = toy_data(25, 6, rng);
        const double e = exact_log_ml(m, data);
        CHECK(std::abs(e - joint_evidence(m, data)) < 1e-8);
        std::vector<int> rev(25);
        std::iota(rev.rbegin(), rev.rend(), 0);
        CHECK(std::abs(exact_log_ml(m, data.reordered(rev)) - e) < 1e-8);
    }
    auto empty = ordered_dataset::in_order(Eigen::MatrixXd(0, 4), Eigen::VectorXd(0));
    CHECK(exact_log_ml(m, empty) == 0.0);
}

TEST_CASE("KL gap: closed form against a direct Gaussian KL") {
    gaussian_posterior p{Eigen::Vector2d(0, 0), Eigen::Matrix2d::Identity()};
    gaussian_posterior q{Eigen::Vector2d(1, 0), 2.0 * Eigen::Matrix2d::Identity()};
    // 0.5 (tr(Sq^-1 Sp) + dm^T Sq^-1 dm - d + ln det Sq / det Sp)
    const double expected = 0.5 * (1.0 + 0.5 - 2.0 + 2.0 * std::log(2.0));
    CHECK(std::abs(gaussian_kl(p, q) - expected) < 1e-14);
    CHECK(gaussian_kl(p, p) == doctest::Approx(0.0));
}

TEST_CASE("sampled lower bounds") {
    auto rng = make_rng(3);
    auto data = toy_data(20, 3, rng);
    auto m = linear_model(3, 1.0, 0.5);
    const double exact = exact_log_ml(m, data);
    auto L = estimate_L(m, data, 400, 11);
    CHECK(L.value <= exact + 3 * L.std_error);
    CHECK(std::abs((exact - L.value) - kl_gap(m, data)) < 3 * L.std_error);
    auto L1 = estimate_Lk(m, data, 1, 400, 11);
    CHECK(L1.value == L.value);

    double prev_gap = INFINITY;
    for (int k : {1, 4, 16, 64}) {
        auto Lk = estimate_Lk(m, data, k, 200, 5);
        const double gap = exact - Lk.value;
        CHECK(gap >= -3 * Lk.std_error);
        CHECK(gap < prev_gap);
        prev_gap = gap;
    }
    auto LS = estimate_LS(m, data, 16, 200, 5);
    CHECK(LS.value <= exact + 3 * LS.std_error);
    CHECK_THROWS_AS(estimate_LS(m, data, 1, 10, 5), degenerate_sample);
    CHECK_THROWS_AS(estimate_Lk(m, data, 0, 10, 5), invalid_argument);

    // Nearly deterministic prior: L collapses onto the exact value.
    auto sharp = linear_model(3, 1e-12, 0.5);
    auto Ls = estimate_L(sharp, data, 20, 1);
    CHECK(std::abs(Ls.value - exact_log_ml(sharp, data)) < 1e-4);
    // Noiseless limit stays finite.
    auto noiseless = linear_model(3, 1.0, 1e-12);
    CHECK(std::isfinite(estimate_LS(noiseless, data, 4, 5, 1).value));
}

TEST_CASE("regularized descent converges to the normal-equation solution") {
    auto rng = make_rng(4);
    Eigen::MatrixXd Phi = randn_matrix(12, 3, rng);
    Eigen::VectorXd y = randn_vector(12, rng), th0 = randn_vector(3, rng);
    Eigen::MatrixXd A = Phi.transpose() * Phi + 0.8 * Eigen::MatrixXd::Identity(3, 3);
    Eigen::VectorXd direct = A.inverse() * (Phi.transpose() * y + 0.8 * th0);
    CHECK(oracle::sup(regularized_solution(Phi, y, th0, 0.8) - direct) < 1e-12);
    Eigen::VectorXd gd = regularized_descent(Phi, y, th0, 0.8, th0, 0.01, 5000);
    CHECK(oracle::sup(gd - direct) < 1e-6);
    CHECK_THROWS_AS(regularized_descent(Phi, y, th0, 0.8, th0, 10.0, 500), divergence_detected);
}

TEST_CASE("sample-then-optimize draws from the posterior") {
    auto rng = make_rng(5);
    auto data = toy_data(10, 2, rng);
    auto m = linear_model(2, 1.0, 0.5);
    auto post = blr_posterior(m, data, 10);
    const int draws = 2000;
    Eigen::MatrixXd S(2, draws);
    for (int s = 0; s < draws; ++s) S.col(s) = sample_then_optimize(m, data, 10, s, 0.02, 600);
    Eigen::VectorXd mean = S.rowwise().mean();
    Eigen::MatrixXd centered = S.colwise() - mean;
    Eigen::MatrixXd cov = centered * centered.transpose() / (draws - 1);
    // Mean within a few Monte Carlo standard errors, covariance within 10%.
    for (int i = 0; i < 2; ++i) CHECK(std::abs(mean(i) - post.mean(i)) < 4 * std::sqrt(post.covariance(i, i) / draws));
    CHECK((cov - post.covariance).norm() / post.covariance.norm() < 0.1);

    // No data: the prior draw itself.
    Eigen::VectorXd a = sample_then_optimize(m, data, 0, 3, 0.02, 0);
    Eigen::VectorXd b = sample_then_optimize(m, data, 0, 3, 0.02, 50);
    CHECK(oracle::sup(a - b) < 1e-14);
}

TEST_CASE("sample-then-optimize sum loss agrees with the sampled bound") {
    auto rng = make_rng(6);
    auto data = toy_data(15, 2, rng);
    auto m = linear_model(2, 1.0, 0.5);
    CHECK(algorithm1_sumloss(m, ordered_dataset::in_order(Eigen::MatrixXd(0, 2), Eigen::VectorXd(0)), 1, 0.01, 10) ==
          0.0);
    std::vector<double> vals;
    for (int s = 0; s < 60; ++s) vals.push_back(algorithm1_sumloss(m, data, s, 0.02, 400));
    double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
    double ss = 0.0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    const double se_alg = std::sqrt(ss / (vals.size() - 1) / vals.size());
    auto L = estimate_L(m, data, 400, 9);
    CHECK(std::abs(mean - L.value) < 3 * std::sqrt(se_alg * se_alg + L.std_error * L.std_error));
}

TEST_CASE("SOTL and its interference decomposition") {
    CHECK(sotl({}) == 0.0);
    CHECK(sotl({1.5, 1.5, 1.5}) == 4.5);
    auto rng = make_rng(7);
    Eigen::MatrixXd Phi = randn_matrix(20, 4, rng);
    Eigen::VectorXd y = randn_vector(20, rng);
    auto tr = sgd_first_epoch(Phi, y, Eigen::VectorXd::Zero(4), 0.05);
    CHECK(std::abs(sotl(tr.losses) - sotl_decomposition(tr.initial_losses, tr.interference)) < 1e-8);
    // Strictly upper triangular: a step only affects later points.
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j <= i; ++j) CHECK(tr.interference(i, j) == 0.0);
}

TEST_CASE("model selection tasks") {
    auto fd = model_selection_task(task_kind::feature_dimension, 1);
    CHECK(fd.models.size() == 26);
    CHECK(fd.models.front().name == "M5");
    CHECK(fd.models.back().name == "M30");
    CHECK(fd.data.size() == 30);
    CHECK(fd.models[3].features.dim() == 8);
    auto pv = model_selection_task(task_kind::prior_variance, 1);
    CHECK(pv.models.size() == 5);
    auto rf = model_selection_task(task_kind::rff_frequency, 1);
    CHECK(rf.models.size() == 7);
    for (const auto& t : {fd, pv, rf})
        for (const auto& m : t.models) CHECK(std::isfinite(exact_log_ml(m, t.data)));
    CHECK_THROWS_AS(parse_task_kind("unknown"), invalid_argument);

    // Averaged over datasets the exact evidence peaks at the informative dimension.
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(26);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto task = model_selection_task(task_kind::feature_dimension, seed);
        for (int j = 0; j < 26; ++j) acc(j) += exact_log_ml(task.models[j], task.data);
    }
    Eigen::Index best;
    acc.maxCoeff(&best);
    CHECK(fd.models[best].name == "M15");
}

TEST_CASE("ensemble weight ranking") {
    auto task = model_selection_task(task_kind::prior_variance, 2);
    auto w = ensemble_weight_ranking(task.models, task.data, 3);
    CHECK(w.weights.size() == 5);
    CHECK(w.L_values.size() == 5);
    CHECK(w.argmax_weight >= 0);
    CHECK(w.argmax_weight < 5);
    CHECK_THROWS_AS(ensemble_weight_ranking({task.models[0]}, task.data, 3), invalid_argument);
    auto again = ensemble_weight_ranking(task.models, task.data, 3);
    CHECK(again.weights == w.weights);
}

TEST_CASE("ensemble weights pick the best model when prediction errors are near orthogonal") {
    // Each model sees its own noisy copy of the target, so prediction errors
    // are independent across models and the weight argmax should follow L.
    int agree = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto rng = make_rng(seed, 77);
        const int n = 30;
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) y(i) = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        std::vector<blr_model> models;
        for (double s : {0.05, 0.3, 1.0, 3.0}) {
            Eigen::MatrixXd F(n, 1);
            for (int i = 0; i < n; ++i) F(i, 0) = y(i) + s * randn(rng);
            blr_model m;
            m.name = "noise " + std::to_string(s);
            m.features = feature_map::explicit_features(F);
            m.prior_variance = 1.0;
            m.noise_variance = 0.1;
            models.push_back(m);
        }
        auto data = ordered_dataset::in_order(Eigen::MatrixXd::Identity(n, n), y);
        auto w = ensemble_weight_ranking(models, data, seed);
        agree += w.argmax_weight == w.argmax_L;
    }
    CHECK(agree >= 90);
}

TEST_CASE("ensemble weights are symmetric for identical models") {
    auto task = model_selection_task(task_kind::feature_dimension, 0);
    std::vector<double> diff;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto w = ensemble_weight_ranking({task.models[10], task.models[10]}, task.data, seed);
        diff.push_back(w.weights(0) - w.weights(1));
    }
    double mean = 0.0, ss = 0.0;
    for (double d : diff) mean += d / diff.size();
    for (double d : diff) ss += (d - mean) * (d - mean);
    const double se = std::sqrt(ss / (diff.size() - 1) / diff.size());
    CHECK(std::abs(mean) <= 4.0 * se);
}
