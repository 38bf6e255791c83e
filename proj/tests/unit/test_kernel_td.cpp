#include <cmath>
#include <numeric>

#include "doctest.h"
#include "lab/errors.hpp"
#include "lab/kernel_td.hpp"
#include "lab/mdp.hpp"
#include "lab/rng.hpp"
#include "oracles.hpp"

using namespace lab;

namespace {

std::vector<int> iota_vec(int n) {
    std::vector<int> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

flow_config kcfg(double t_end, double dt = 1e-2) {
    flow_config c;
    c.t_end = t_end;
    c.dt = dt;
    c.n_snapshots = 11;
    c.method = integrator::rk4;
    return c;
}

}  // namespace

TEST_CASE("rbf kernel: limits, formula and positive semidefiniteness") {
    kernel_spec tiny{1e-6, line_embedding(6)};
    CHECK(oracle::sup(build_kernel(tiny, iota_vec(6)) - Eigen::MatrixXd::Identity(6, 6)) == 0.0);
    kernel_spec same{0.5, Eigen::MatrixXd::Zero(4, 2)};
    CHECK((build_kernel(same, iota_vec(4)).array() == 1.0).all());

    kernel_spec circ{1.0, circle_embedding(50)};
    Eigen::MatrixXd K = build_kernel(circ, iota_vec(50));
    for (int i = 0; i < 50; i += 7)
        for (int j = 0; j < 50; j += 3) {
            double a = 2 * M_PI * (i - j) / 50.0;
            double d2 = 2.0 - 2.0 * std::cos(a);  // chord length squared
            CHECK(std::abs(K(i, j) - std::exp(-d2 / 2.0)) < 1e-12);
        }
    CHECK((K - K.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
    CHECK(es.eigenvalues().minCoeff() > -1e-9);
    CHECK_THROWS_AS(build_kernel(kernel_spec{0.0, line_embedding(3)}, iota_vec(3)), invalid_argument);
    CHECK_THROWS_AS(build_kernel(circ, std::vector<int>{}), invalid_argument);
    CHECK_THROWS_AS(build_kernel(circ, std::vector<int>{50}), invalid_argument);
}

TEST_CASE("identity kernel on all states reproduces the TD flow") {
    auto m = build_random_mdp(8, 1, 3);
    Eigen::MatrixXd P = m.transition[0];
    kernel_spec tiny{1e-6, line_embedding(8)};
    auto train = iota_vec(8);
    auto rng = make_rng(2);
    Eigen::VectorXd V0 = randn_vector(8, rng);
    for (double g : {0.5, 0.9, 0.99}) {
        auto c = kcfg(5.0);
        auto kt = kernel_td_flow(V0, make_split(tiny, train, 8), P, m.reward, g, train, c);
        flow_config tc = c;
        tc.gamma = g;
        tc.method = integrator::closed_form;
        auto td = td_value_flow(V0, P, m.reward, tc);
        CHECK(oracle::sup(kt.final_state() - td.final_state()) < 1e-8);
    }
}

TEST_CASE("kernel td with test states follows the stated linear system") {
    auto c = build_circle_mdp(12, 5, 8);
    Eigen::MatrixXd P = c.mdp.transition[0];
    kernel_spec spec{0.7, circle_embedding(12)};
    auto split = make_split(spec, c.train, 12);
    Eigen::VectorXd V0 = Eigen::VectorXd::Zero(12);
    auto tr = kernel_td_flow(V0, split, P, c.mdp.reward, 0.8, c.train, kcfg(3.0));
    auto rhs = [&](const Eigen::MatrixXd& V) {
        Eigen::VectorXd d = c.mdp.reward + 0.8 * P * V.col(0) - V.col(0);
        Eigen::VectorXd dt(8);
        for (int i = 0; i < 8; ++i) dt(i) = d(i);
        Eigen::VectorXd out(12);
        out.head(8) = split.K_train * dt;
        out.tail(4) = split.K_cross * dt;
        return Eigen::MatrixXd(out);
    };
    Eigen::MatrixXd ref = oracle::rk4(rhs, V0, 3.0, 1e-3);
    CHECK(oracle::sup(tr.final_state() - ref) < 1e-9);
}

TEST_CASE("kernel td: divergence is detected and reported") {
    // Two states, train {0}; with a cross kernel weight k the train TD error
    // grows like exp((gamma k - 1) t).
    Eigen::MatrixXd P(2, 2);
    P << 0, 1, 0, 1;
    Eigen::VectorXd R(2);
    R << 1, 0;
    split_kernel split;
    split.K_train = Eigen::MatrixXd::Ones(1, 1);
    split.K_cross = Eigen::MatrixXd::Constant(1, 1, 2.0);
    std::vector<int> train{0};
    try {
        kernel_td_flow(Eigen::VectorXd::Zero(2), split, P, R, 0.9, train, kcfg(200.0));
        CHECK(false);
    } catch (const divergence_detected& e) {
        // |delta| = exp(0.8 t) crosses 1e8 near t = 23.
        CHECK(e.time() > 15.0);
        CHECK(e.time() < 30.0);
    }
    split.K_cross(0, 0) = 0.5;
    CHECK_NOTHROW(kernel_td_flow(Eigen::VectorXd::Zero(2), split, P, R, 0.9, train, kcfg(200.0)));
    CHECK_THROWS_AS(kernel_td_flow(Eigen::VectorXd::Zero(2), split, P, R, 0.9, std::vector<int>{}, kcfg(1.0)),
                    invalid_argument);
}

TEST_CASE("kernel td: narrow kernel fits train states and leaves test states at zero") {
    auto c = build_circle_mdp(50, 24, 40);
    kernel_spec spec{0.01, circle_embedding(50)};
    auto out = run_kernel_td(Eigen::VectorXd::Zero(50), spec, c.mdp.transition[0], c.mdp.reward, 0.5, c.train,
                             kcfg(100.0));
    CHECK_FALSE(out.diverged);
    CHECK(out.train_bellman_residual < 1e-3);
    CHECK(out.test_max_abs < 1e-3);
    CHECK(out.trajectory.times.back() == doctest::Approx(100.0));
}

TEST_CASE("smooth kernel generalization") {
    auto g = build_random_graph_mdp(60, 0.15, 4);
    Eigen::MatrixXd P = g.transition[0];
    auto rng = make_rng(6);
    Eigen::VectorXd R = randn_vector(60, rng);
    auto sp = eigendecompose(P);
    REQUIRE(sp.is_real);
    std::vector<int> top = iota_vec(15);
    generalization_target in_span{regression_target::projected_top, 1, 15};
    Eigen::VectorXd y = generalization_target_vector(sp, P, R, 0.9, in_span);
    auto split_rng = make_rng(1);
    CHECK(smooth_kernel_generalization(sp, y, top, 1.0, split_rng) < 1e-10);
    // A target in the span of the kernel is recovered from any split with enough points.
    CHECK(smooth_kernel_generalization(sp, y, top, 0.8, split_rng) < 1e-8);

    // n-step target against a direct sum.
    generalization_target ns{regression_target::nstep, 3, 15};
    Eigen::VectorXd direct = R + 0.9 * P * R + 0.81 * P * P * R;
    CHECK(oracle::sup(generalization_target_vector(sp, P, R, 0.9, ns) - direct) < 1e-12);

    // Top and bottom projections sum to the value when they cover the spectrum.
    generalization_target topall{regression_target::projected_top, 1, 30};
    generalization_target botall{regression_target::projected_bottom, 1, 30};
    Eigen::VectorXd V = exact_value(P, R, 0.9);
    CHECK(oracle::sup(generalization_target_vector(sp, P, R, 0.9, topall) +
                      generalization_target_vector(sp, P, R, 0.9, botall) - V) < 1e-8);

    CHECK_THROWS_AS(smooth_kernel_generalization(sp, y, top, 0.0, split_rng), invalid_argument);
    CHECK_THROWS_AS(parse_regression_target("nope"), invalid_argument);
    auto c = build_circle_mdp(10, 0, 10);
    auto crng = make_rng(1);
    CHECK_THROWS_AS(smooth_kernel_generalization(c.mdp.transition[0], c.mdp.reward, 0.9, top, 0.5,
                                                 generalization_target{}, crng),
                    non_real_spectrum);
}

namespace {

struct smooth_sweep {
    std::vector<double> fracs{0.2, 0.4, 0.6, 0.8};
    std::vector<double> value_mse, bottom_mse;
    double bottom_energy = 0.0;  // mean y^2 of the bottom target, the zero-predictor error

    smooth_sweep() : value_mse(fracs.size(), 0.0), bottom_mse(fracs.size(), 0.0) {
        std::vector<int> S(20);
        std::iota(S.begin(), S.end(), 0);
        for (int mdp = 0; mdp < 20; ++mdp) {
            auto g = build_random_graph_mdp(100, 0.1, mdp);
            Eigen::MatrixXd P = g.transition[0];
            auto rr = make_rng(mdp, 1);
            Eigen::VectorXd R = randn_vector(100, rr);
            auto sp = eigendecompose(P);
            Eigen::VectorXd yv = generalization_target_vector(sp, P, R, 0.9, {regression_target::value, 1, 20});
            Eigen::VectorXd yb =
                generalization_target_vector(sp, P, R, 0.9, {regression_target::projected_bottom, 1, 20});
            bottom_energy += yb.squaredNorm() / 100.0 / 20.0;
            for (std::size_t f = 0; f < fracs.size(); ++f) {
                auto r1 = make_rng(mdp, 100 + f);
                auto r2 = make_rng(mdp, 100 + f);
                value_mse[f] += smooth_kernel_generalization(sp, yv, S, fracs[f], r1) / 20.0;
                bottom_mse[f] += smooth_kernel_generalization(sp, yb, S, fracs[f], r2) / 20.0;
            }
        }
    }
};

const smooth_sweep& sweep() {
    static const smooth_sweep s;
    return s;
}

}  // namespace

TEST_CASE("smooth kernel: error falls with more data for the value target") {
    CHECK(oracle::ols_slope(sweep().fracs, sweep().value_mse) < 0.0);
}

TEST_CASE("smooth kernel: bottom target never beats the zero predictor") {
    for (double m : sweep().bottom_mse) CHECK(m >= sweep().bottom_energy);
}

// With near-zero ridge the fit is least squares, whose variance shrinks as
// data grows, so the bottom-target error falls toward the zero-predictor
// level instead of staying flat. Kept exact and expected to fail.
TEST_CASE("smooth kernel: bottom target error is flat in the train fraction" * doctest::should_fail()) {
    CHECK(oracle::ols_slope(sweep().fracs, sweep().bottom_mse) >= -1e-3);
}
