// Acceptance suite: one PASS/FAIL line per criterion. Exits 0 when every
// failure is a documented known-unattainable item.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lab/bms.hpp"
#include "lab/capacity.hpp"
#include "lab/causal.hpp"
#include "lab/errors.hpp"
#include "lab/experiments.hpp"
#include "lab/flow.hpp"
#include "lab/kernel_td.hpp"
#include "lab/mdp.hpp"
#include "lab/rng.hpp"
#include "lab/spectral.hpp"
#include "unit/oracles.hpp"

namespace fs = std::filesystem;
using namespace lab;

namespace {

struct outcome {
    bool pass = false;
    std::string detail;
    std::vector<std::pair<std::string, bool>> parts;  // sub-criteria, e.g. 7a / 7b
};

struct criterion {
    std::string id;
    std::string title;
    double budget_s;
    std::function<outcome()> run;
};

// Failures accepted by the exit policy. Each is analysed in the decisions ledger.
const std::set<std::string> k_known_unattainable{"2", "7a"};

std::string fmt(double v, int prec = 3) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

Eigen::MatrixXd chain_walk(int n) {
    auto m = build_chain_mdp(n, 0.01, 2, 1);
    return transition_matrix(m, uniform_policy(m));
}

Eigen::MatrixXd eye(Eigen::Index n) { return Eigen::MatrixXd::Identity(n, n); }

// 1 ------------------------------------------------------------------------
outcome closed_form_vs_rk4() {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto m = build_random_mdp(5, 2, seed);
        Eigen::MatrixXd P = transition_matrix(m, uniform_policy(m));
        auto rng = make_rng(seed, 1);
        Eigen::VectorXd V0 = randn_vector(5, rng);
        for (double g : {0.5, 0.9, 0.99}) {
            flow_config cf;
            cf.gamma = g;
            cf.t_end = 10.0;
            cf.n_snapshots = 21;
            flow_config rk = cf;
            rk.method = integrator::rk4;
            rk.dt = 1e-3;
            auto cmp = [&](const flow_trajectory& a, const flow_trajectory& b) {
                for (std::size_t i = 0; i < a.states.size(); ++i)
                    worst = std::max(worst, oracle::sup(a.states[i] - b.states[i]));
            };
            cmp(td_value_flow(V0, P, m.reward, cf), td_value_flow(V0, P, m.reward, rk));
            cmp(mc_value_flow(V0, P, m.reward, cf), mc_value_flow(V0, P, m.reward, rk));
            cmp(nstep_value_flow(V0, P, m.reward, 3, cf), nstep_value_flow(V0, P, m.reward, 3, rk));
            cmp(td_lambda_value_flow(V0, P, m.reward, 0.5, cf), td_lambda_value_flow(V0, P, m.reward, 0.5, rk));
        }
    }
    return {worst < 1e-6, "max sup-norm gap " + fmt(worst) + " over 20 MDPs x 3 discounts x 4 flows (t in [0, 10])"};
}

// 2 ------------------------------------------------------------------------
outcome subspace_convergence() {
    Eigen::MatrixXd P = chain_walk(30);
    auto chain = build_chain_mdp(30, 0.01, 2, 1);
    const double g = 0.9;
    Eigen::VectorXd Vpi = exact_value(P, chain.reward, g);
    auto s = eigendecompose(P);
    std::ostringstream detail;
    bool pass = true;
    for (int K : {1, 4}) {
        Eigen::MatrixXd target = orthonormal_basis(top_ebfs(s, K));
        int hits = 0;
        double worst = 0.0;
        for (int init = 0; init < 20; ++init) {
            auto rng = make_rng(2000 + init, K);
            Eigen::MatrixXd V0 = randn_matrix(30, K, rng);
            flow_config c;
            c.gamma = g;
            c.t_end = 200.0;
            c.n_snapshots = 2;
            auto tr = linear_flow(V0, eye(30) - g * P, chain.reward, c);
            double d = grassmann_convergence_metric(tr, target, Vpi).back();
            worst = std::max(worst, d);
            hits += d < 1e-3;
        }
        pass = pass && hits >= 19;
        detail << "K=" << K << ": " << hits << "/20 below 1e-3 (worst " << fmt(worst) << "); ";
    }
    return {pass, detail.str()};
}

// 3 ------------------------------------------------------------------------
outcome ensemble_limit() {
    Eigen::MatrixXd P = chain_walk(30);
    const double g = 0.9, t = 5.0;
    const int K = 4;
    std::vector<int> Ms{5, 20, 100, 400};
    std::vector<double> err(Ms.size(), 0.0);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto rng = make_rng(seed, 3);
        Eigen::MatrixXd phi0 = randn_matrix(30, K, rng);
        Eigen::MatrixXd limit = limiting_ensemble_flow(phi0, P, Eigen::VectorXd::Zero(30), g, t);
        for (std::size_t i = 0; i < Ms.size(); ++i) {
            auto wr = make_rng(seed, 30, Ms[i]);
            Eigen::MatrixXd w0 = init_heads(K, Ms[i], true, wr);
            flow_config c;
            c.gamma = g;
            c.alpha = 1.0;
            c.beta = 0.0;
            c.t_end = t;
            c.dt = 1e-2;
            c.n_snapshots = 2;
            c.method = integrator::rk4;
            auto tr = coupled_feature_flow(phi0, w0, P, Eigen::VectorXd::Zero(30), c);
            err[i] += (tr.final_state() - limit).norm() / 20.0;
        }
    }
    bool mono = true;
    std::string d = "mean Frobenius error at t=5:";
    for (std::size_t i = 0; i < Ms.size(); ++i) {
        d += " M=" + std::to_string(Ms[i]) + ":" + fmt(err[i]);
        if (i > 0) mono = mono && err[i] < err[i - 1];
    }
    return {mono, d};
}

// 4 ------------------------------------------------------------------------
outcome cumulant_covariance() {
    const int n = 10, K = 2, M = 2000, samples = 5000;
    const double g = 0.9;
    auto mdp = build_random_mdp(n, 2, 4);
    Eigen::MatrixXd P = transition_matrix(mdp, uniform_policy(mdp));
    auto rs = make_rng(4, 1);
    Eigen::MatrixXd B = randn_matrix(n, n, rs);
    Eigen::MatrixXd Sigma = B * B.transpose() / n + 0.1 * eye(n);
    Eigen::MatrixXd L = Sigma.llt().matrixL();
    Eigen::MatrixXd emp = Eigen::MatrixXd::Zero(n, n);
    auto rng = make_rng(4, 2);
    for (int s = 0; s < samples; ++s) {
        Eigen::MatrixXd W = init_heads(K, M, true, rng);
        Eigen::MatrixXd C = L * randn_matrix(n, M, rng);
        Eigen::MatrixXd phi = random_cumulant_limit(W, C, P, g);
        emp += phi * phi.transpose();
    }
    emp /= static_cast<double>(samples) * K;
    Eigen::MatrixXd theory = limiting_cumulant_covariance(P, g, Sigma);
    const double rel = (emp - theory).norm() / theory.norm();
    return {rel < 0.05, "relative Frobenius error " + fmt(rel) + " (5000 draws, M=2000 heads, K=2)"};
}

// 5 ------------------------------------------------------------------------
outcome rsbf_optimality() {
    const int n = 20, K = 4;
    Eigen::MatrixXd P = chain_walk(n);
    Eigen::MatrixXd Psi = resolvent(P, 0.9);
    auto rng = make_rng(5);
    Eigen::MatrixXd Y = Psi * randn_matrix(n, 10000, rng);
    const double total = Y.squaredNorm();
    auto residual = [&](const Eigen::MatrixXd& Q) { return (total - (Q.transpose() * Y).squaredNorm()) / Y.cols(); };
    const double best = residual(rsbf(P, 0.9, K).vectors);
    int beaten = 0;
    double closest = INFINITY;
    for (int i = 0; i < 1000; ++i) {
        double r = residual(orthonormal_basis(randn_matrix(n, K, rng)));
        closest = std::min(closest, r);
        beaten += best <= r;
    }
    return {beaten == 1000, "RSBF residual " + fmt(best, 6) + " <= " + std::to_string(beaten) +
                                "/1000 random subspaces (best random " + fmt(closest, 6) + ")"};
}

// 6 ------------------------------------------------------------------------
outcome coordinates_and_bound() {
    Eigen::MatrixXd P = chain_walk(30);
    auto chain = build_chain_mdp(30, 0.01, 2, 1);
    const double g = 0.9;
    auto s = eigendecompose(P);
    Eigen::VectorXd lam = s.real_values();
    Eigen::VectorXd Vpi = exact_value(P, chain.reward, g);
    double worst_rel = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        auto rng = make_rng(6, trial);
        Eigen::VectorXd V0 = randn_vector(30, rng);
        flow_config c;
        c.gamma = g;
        c.t_end = 20.0;
        c.n_snapshots = 21;
        auto tr = td_value_flow(V0, P, chain.reward, c);
        Eigen::VectorXd a0 = eigenbasis_coefficients(V0 - Vpi, s);
        for (std::size_t k = 0; k < tr.times.size(); ++k) {
            Eigen::VectorXd a = eigenbasis_coefficients(tr.states[k] - Vpi, s);
            for (int i = 0; i < 30; ++i) {
                const double expected = a0(i) * std::exp(-tr.times[k] * (1.0 - g * lam(i)));
                if (std::abs(expected) > 1e-8) worst_rel = std::max(worst_rel, std::abs(a(i) - expected) / std::abs(expected));
            }
        }
    }
    // Bound on 1000 random value vectors; the chain walk is symmetric so equality is expected.
    int holds = 0;
    double worst_eq = 0.0;
    auto rng = make_rng(6, 99);
    for (int i = 0; i < 1000; ++i) {
        Eigen::VectorXd V = 5.0 * randn_vector(30, rng);
        const double lhs = td_error_norm(V, P, chain.reward, g);
        const double rhs = eigen_bound(V, s, Vpi, g);
        holds += lhs <= rhs * (1.0 + 1e-12) + 1e-12;
        worst_eq = std::max(worst_eq, std::abs(lhs - rhs));
    }
    // Equality also on an independent random symmetric stochastic matrix.
    std::mt19937_64 gen(6);
    Eigen::MatrixXd Q = oracle::random_symmetric_stochastic(15, gen);
    auto sq = eigendecompose(Q);
    Eigen::VectorXd Rq = oracle::randn(15, gen);
    Eigen::VectorXd Vq = exact_value(Q, Rq, g);
    for (int i = 0; i < 100; ++i) {
        Eigen::VectorXd V = oracle::randn(15, gen);
        worst_eq = std::max(worst_eq, std::abs(td_error_norm(V, Q, Rq, g) - eigen_bound(V, sq, Vq, g)));
    }
    const bool pass = worst_rel < 1e-6 && holds == 1000 && worst_eq < 1e-9;
    return {pass, "coordinate decay max rel err " + fmt(worst_rel) + "; bound holds " + std::to_string(holds) +
                      "/1000; symmetric equality gap " + fmt(worst_eq)};
}

// 7 ------------------------------------------------------------------------
outcome kernel_regimes() {
    auto c = build_circle_mdp(50, 24, 40);
    const Eigen::MatrixXd& P = c.mdp.transition[0];
    flow_config cfg;
    cfg.t_end = 100.0;
    cfg.dt = 1e-2;
    cfg.n_snapshots = 101;
    cfg.method = integrator::rk4;
    auto wide = run_kernel_td(Eigen::VectorXd::Zero(50), kernel_spec{100.0, circle_embedding(50)}, P, c.mdp.reward, 0.99,
                              c.train, cfg);
    auto narrow = run_kernel_td(Eigen::VectorXd::Zero(50), kernel_spec{0.01, circle_embedding(50)}, P, c.mdp.reward, 0.5,
                                c.train, cfg);
    const bool a = wide.diverged;
    const bool b = !narrow.diverged && narrow.train_bellman_residual < 1e-3 && narrow.test_max_abs < 1e-3;
    outcome o;
    o.parts = {{"7a", a}, {"7b", b}};
    o.pass = a && b;
    o.detail = "7a (gamma=0.99, l=100) " + std::string(a ? "diverged" : "no divergence by t=100, train residual " +
                                                                        fmt(wide.train_bellman_residual)) +
               "; 7b (gamma=0.5, l=0.01) residual " + fmt(narrow.train_bellman_residual) + ", max |V(test)| " +
               fmt(narrow.test_max_abs) + (b ? " PASS" : " FAIL");
    return o;
}

// 8 ------------------------------------------------------------------------
outcome second_order() {
    auto m = build_random_mdp(5, 1, 8);
    Eigen::MatrixXd P = m.transition[0];
    Eigen::VectorXd V0 = Eigen::VectorXd::Zero(5);
    std::vector<double> e1, e2;
    for (double a : {0.1, 0.05, 0.025}) {
        auto r = second_order_check(V0, P, m.reward, 0.9, a, static_cast<int>(std::lround(2.0 / a)));
        e1.push_back(oracle::sup(r.discrete - r.first_order));
        e2.push_back(oracle::sup(r.discrete - r.corrected));
    }
    bool pass = true;
    std::string d = "ratios first-order/corrected:";
    for (int i = 0; i < 2; ++i) {
        const double r1 = e1[i] / e1[i + 1], r2 = e2[i] / e2[i + 1];
        pass = pass && std::abs(r1 - 2.0) <= 0.5 && std::abs(r2 - 4.0) <= 1.0;
        d += " " + fmt(r1) + "/" + fmt(r2);
    }
    return {pass, d};
}

// 9 ------------------------------------------------------------------------
double joint_evidence(const blr_model& m, const ordered_dataset& data) {
    Eigen::MatrixXd Phi = m.features.apply(data.inputs);
    const Eigen::Index n = Phi.rows();
    Eigen::MatrixXd C = m.prior_variance * Phi * Phi.transpose() + m.noise_variance * eye(n);
    Eigen::LLT<Eigen::MatrixXd> llt(C);
    Eigen::VectorXd z = llt.matrixL().solve(data.targets);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return -0.5 * z.squaredNorm() - 0.5 * logdet - 0.5 * n * std::log(2.0 * M_PI);
}

outcome evidence_suite() {
    std::vector<std::string> notes;
    bool pass = true;

    // (a) prequential evidence against the joint Gaussian on 50 tasks.
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto kind = static_cast<task_kind>(seed % 3);
        auto task = model_selection_task(kind, seed);
        const auto& m = task.models[seed % task.models.size()];
        worst = std::max(worst, std::abs(exact_log_ml(m, task.data) - joint_evidence(m, task.data)));
    }
    pass = pass && worst < 1e-8;
    notes.push_back("evidence gap " + fmt(worst));

    auto task = model_selection_task(task_kind::feature_dimension, 0);
    const auto& m15 = task.models[10];
    const double exact = exact_log_ml(m15, task.data);

    // (b) exact - E[L] = KL gap.
    auto L = estimate_L(m15, task.data, 200, 90);
    const double gap = kl_gap(m15, task.data);
    const bool decomp = std::abs((exact - L.value) - gap) <= 3.0 * L.std_error;
    pass = pass && decomp;
    notes.push_back("bound gap |diff|/se " + fmt(std::abs((exact - L.value) - gap) / L.std_error));

    // (c) Lk gap strictly decreasing over paired seeds.
    double prev = INFINITY;
    bool dec = true;
    std::string gaps;
    for (int k : {1, 4, 16, 64}) {
        const double gk = exact - estimate_Lk(m15, task.data, k, 100, 91).value;
        dec = dec && gk < prev;
        prev = gk;
        gaps += (gaps.empty() ? "" : ">") + fmt(gk);
    }
    pass = pass && dec;
    notes.push_back("Lk gaps " + gaps);

    // (d) Sample-then-optimize sum loss against estimate_L.
    const double lr = 2.5e-4;
    const int steps = 100;
    bool agree = true;
    std::string z;
    for (int idx : {0, 10, 25}) {
        const auto& m = task.models[idx];
        std::vector<double> a;
        for (int s = 0; s < 100; ++s) a.push_back(algorithm1_sumloss(m, task.data, 500 + s, lr, steps));
        const double mean = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
        double ss = 0.0;
        for (double v : a) ss += (v - mean) * (v - mean);
        const double se = std::sqrt(ss / (a.size() - 1) / a.size());
        auto Lm = estimate_L(m, task.data, 100, 92);
        const double zz = std::abs(mean - Lm.value) / std::sqrt(se * se + Lm.std_error * Lm.std_error);
        agree = agree && zz <= 3.0;
        z += (z.empty() ? "" : ",") + fmt(zz);
    }
    pass = pass && agree;
    notes.push_back("alg1 z " + z);

    // (e) argmax M15 for exact, L, Lk and LS, averaged over datasets.
    const int n_datasets = 10;
    const std::size_t J = task.models.size();
    std::vector<double> ex(J, 0), l(J, 0), lk(J, 0), ls(J, 0);
    for (int d = 0; d < n_datasets; ++d) {
        auto t = model_selection_task(task_kind::feature_dimension, 100 + d);
        for (std::size_t j = 0; j < J; ++j) {
            ex[j] += exact_log_ml(t.models[j], t.data);
            l[j] += estimate_L(t.models[j], t.data, 50, 93 + d).value;
            lk[j] += estimate_Lk(t.models[j], t.data, 16, 50, 93 + d).value;
            ls[j] += estimate_LS(t.models[j], t.data, 16, 50, 93 + d).value;
        }
    }
    auto best = [&](const std::vector<double>& v) {
        return task.models[std::max_element(v.begin(), v.end()) - v.begin()].name;
    };
    const std::string argmaxes = best(ex) + "/" + best(l) + "/" + best(lk) + "/" + best(ls);
    pass = pass && argmaxes == "M15/M15/M15/M15";
    notes.push_back("argmax exact/L/Lk/LS " + argmaxes);

    std::string d;
    for (const auto& s : notes) d += (d.empty() ? "" : "; ") + s;
    return {pass, d};
}

// 10 -----------------------------------------------------------------------
outcome rank_estimators() {
    auto rng = make_rng(10);
    bool constructed = true;
    for (int r = 1; r <= 8; ++r) {
        Eigen::MatrixXd A = randn_matrix(5000, r, rng), B = randn_matrix(r, 32, rng);
        constructed = constructed && feature_rank(A * B, 0.01).rank == r;
    }

    // Tabular SGD from w = 0 with unit rewards: every TD error equals 1.
    std::vector<td_transition> batch;
    for (int x = 0; x < 30; ++x) batch.push_back({x, 1.0, std::min(x + 1, 29)});
    for (int x : {3, 7, 7}) batch.push_back({x, 1.0, std::min(x + 1, 29)});
    optimizer_spec sgd;
    Eigen::MatrixXd U = linear_td_update_matrix(eye(30), Eigen::VectorXd::Zero(30), batch, 0.9, sgd);
    bool diagonal = true;
    for (std::size_t i = 0; i < batch.size(); ++i)
        for (std::size_t j = 0; j < batch.size(); ++j)
            if (batch[i].x != batch[j].x && U(i, j) > 1e-12) diagonal = false;
    const int tab_rank = update_rank(U).rank;

    auto chain = build_chain_mdp(30, 0.01, 2, 1);
    std::vector<td_transition> tr;
    for (int x = 0; x < 30; ++x) tr.push_back({x, chain.reward(x), std::min(x + 1, 29)});
    auto wr = make_rng(10, 1);
    Eigen::VectorXd w = randn_vector(30, wr);
    std::vector<int> ranks;
    for (double ell : {10.0, 1.0, 0.1}) ranks.push_back(update_rank(linear_td_update_matrix(rbf_features(30, ell), w, tr, 0.9, sgd)).rank);
    const bool increasing = ranks[0] < ranks[1] && ranks[1] < ranks[2];
    return {constructed && diagonal && tab_rank == 30 && increasing,
            std::string("constructed ranks ") + (constructed ? "exact" : "WRONG") + "; tabular diagonal " +
                (diagonal ? "yes" : "no") + ", update_rank " + std::to_string(tab_rank) + " for 30 distinct states in a batch of " +
                std::to_string(batch.size()) + "; rbf ranks l=10/1/0.1: " + std::to_string(ranks[0]) + "/" +
                std::to_string(ranks[1]) + "/" + std::to_string(ranks[2])};
}

// 11 -----------------------------------------------------------------------
outcome linear_misa_suite() {
    int hits = 0;
    env_dataset first;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto data = build_synthetic_family(3, 1000, seed, {3.0});
        auto rep = linear_misa(data, 0.05);
        hits += rep.selected == std::vector<int>{0, 1};
        if (seed == 0) first = data;
    }
    auto scm = synthetic_family_scm();
    Eigen::VectorXd w_misa = fit_reward_weights(first, {0, 1});
    Eigen::VectorXd w_full = fit_reward_weights(first, {0, 1, 2});
    std::vector<double> values(11);
    std::iota(values.begin(), values.end(), 0.0);
    auto curve = intervention_robustness(w_full, w_misa, scm, 2, values, 50);
    const double slope = oracle::ols_slope(values, curve.misa_error);
    bool mono = true;
    for (std::size_t i = 1; i < values.size(); ++i) mono = mono && curve.full_error[i] > curve.full_error[i - 1];
    return {hits >= 90 && std::abs(slope) < 1e-6 && mono,
            std::to_string(hits) + "/100 seeds select {x1, x2}; MISA slope " + fmt(slope) + "; full curve " +
                (mono ? "increasing" : "NOT increasing") + " (" + fmt(curve.full_error.front(), 6) + " -> " +
                fmt(curve.full_error.back(), 6) + ")"};
}

// 12 -----------------------------------------------------------------------
std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

outcome determinism(const std::string& labctl, const fs::path& work) {
    bool pass = true;
    int compared = 0;
    std::string bad;
    for (const auto& e : experiments()) {
        fs::path a = work / (e.name + "_a"), b = work / (e.name + "_b");
        fs::remove_all(a);
        fs::remove_all(b);
        for (const auto& dir : {a, b}) {
            const std::string cmd = "\"" + labctl + "\" run " + e.name + " --seed 12 --out \"" + dir.string() + "\" > /dev/null";
            if (std::system(cmd.c_str()) != 0) {
                pass = false;
                bad += " " + e.name + "(exit)";
            }
        }
        for (const auto& entry : fs::recursive_directory_iterator(a)) {
            if (entry.path().extension() != ".csv") continue;
            fs::path other = b / fs::relative(entry.path(), a);
            ++compared;
            if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) {
                pass = false;
                bad += " " + e.name + "/" + entry.path().filename().string();
            }
        }
    }
    return {pass && compared > 0, std::to_string(compared) + " CSVs compared across " +
                                      std::to_string(experiments().size()) + " experiments" +
                                      (bad.empty() ? "" : "; mismatches:" + bad)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria 1-12"};
    std::string labctl = "labctl";
    std::string workdir = "acceptance_runs";
    std::vector<std::string> only;
    app.add_option("--labctl", labctl, "Path to the labctl binary");
    app.add_option("--workdir", workdir, "Scratch directory for CLI runs");
    app.add_option("--only", only, "Run only these criteria");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(workdir);

    std::vector<criterion> criteria{
        {"1", "closed-form vs RK4 flows", 10, closed_form_vs_rk4},
        {"2", "subspace convergence to top-K EBFs", 30, subspace_convergence},
        {"3", "ensemble limit as M grows", 60, ensemble_limit},
        {"4", "random-cumulant covariance", 60, cumulant_covariance},
        {"5", "RSBF Bayes-optimality", 60, rsbf_optimality},
        {"6", "coordinate convergence and TD bound", 20, coordinates_and_bound},
        {"7", "kernel TD regimes", 20, kernel_regimes},
        {"8", "second-order correction", 10, second_order},
        {"9", "evidence suite", 180, evidence_suite},
        {"10", "rank estimators", 60, rank_estimators},
        {"11", "linear MISA", 120, linear_misa_suite},
        {"12", "CLI determinism", 600, [&] { return determinism(labctl, workdir); }},
    };

    std::vector<std::string> failed;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        const auto start = std::chrono::steady_clock::now();
        outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs <= c.budget_s;
        const bool pass = o.pass && in_time;
        std::printf("criterion %s: %s  %s: %s [%.2f s, budget %.0f s%s]\n", c.id.c_str(), pass ? "PASS" : "FAIL",
                    c.title.c_str(), o.detail.c_str(), secs, c.budget_s, in_time ? "" : ", OVER BUDGET");
        std::fflush(stdout);
        if (pass) continue;
        if (!o.parts.empty() && in_time) {
            for (const auto& [id, ok] : o.parts)
                if (!ok) failed.push_back(id);
        } else {
            failed.push_back(c.id);
        }
    }

    std::vector<std::string> expected, unexpected;
    for (const auto& f : failed) (k_known_unattainable.count(f) ? expected : unexpected).push_back(f);
    std::printf("\nexpected failures (known unattainable, see the decisions ledger): %s\n",
                expected.empty() ? "none" : "");
    for (const auto& f : expected) std::printf("  - criterion %s\n", f.c_str());
    if (!unexpected.empty()) {
        std::printf("UNEXPECTED failures:");
        for (const auto& f : unexpected) std::printf(" %s", f.c_str());
        std::printf("\n");
        return 1;
    }
    std::printf("all other criteria pass\n");
    return 0;
}
